use effdiff_core::diffusivity::estimate_k;
use effdiff_core::dynamics::{check_hypoellipticity_rank, ModelKind, ModelParams};
use effdiff_core::ensemble::{run_ensemble, EnsembleStats, RunConfig};
use effdiff_core::flow::{FlowField, FourierMode, TableTerm};
use effdiff_core::ou::{OuParams, OuProcess};
use effdiff_core::verify::{
    centering_check, generator_agreement, lyapunov_drift_check, symmetry_check, LyapunovSpec,
};

fn colored(flow: FlowField, sigma: f64) -> ModelParams {
    let ou = OuProcess::new(OuParams::scalar(1.0, 1.0, 1.0)).unwrap();
    ModelParams::new(ModelKind::ColoredInertial, 1.0, sigma, flow, ou).unwrap()
}

fn parity_broken() -> FlowField {
    FlowField::stream_function(
        vec![std::f64::consts::TAU; 2],
        vec![vec![
            FourierMode::new(vec![1, -1], 0.5, 0.0),
            FourierMode::new(vec![1, 1], -0.5, 0.0),
            FourierMode::new(vec![1, 0], 0.5, -std::f64::consts::FRAC_PI_2),
        ]],
        1.0,
    )
    .unwrap()
}

#[test]
fn taylor_green_is_centered() {
    let m = colored(FlowField::taylor_green(), 0.1);
    let report = centering_check(&m, 1e-2, 50.0, 4000.0, 1).unwrap();
    assert!(report.centered, "{report:?}");
}

#[test]
fn constant_flow_is_centered_by_the_modulation() {
    let terms = vec![
        TableTerm { row: 0, column: 0, mode: FourierMode::new(vec![0, 0], 1.0, 0.0) },
        TableTerm { row: 1, column: 0, mode: FourierMode::new(vec![0, 0], 0.5, 0.0) },
    ];
    let flow = FlowField::coefficient_table(2, 1, vec![1.0, 1.0], terms, 1.0).unwrap();
    let report = centering_check(&colored(flow, 0.1), 1e-2, 50.0, 4000.0, 2).unwrap();
    assert!(report.centered, "{report:?}");
}

#[test]
fn centering_error_shrinks_like_inverse_root_horizon() {
    let m = colored(parity_broken(), 0.3);
    let short = centering_check(&m, 1e-2, 50.0, 2000.0, 3).unwrap();
    let long = centering_check(&m, 1e-2, 50.0, 8000.0, 3).unwrap();
    for a in 0..2 {
        let ratio = short.se[a] / long.se[a];
        // ideal ratio is 2
        assert!(ratio > 2.0 / 1.5 && ratio < 2.0 * 1.5, "{ratio}");
    }
}

#[test]
fn symmetry_check_flags_anisotropy() {
    let mut stats = EnsembleStats::empty(2, vec![1.0, 2.0, 3.0, 4.0]);
    // r = (±sqrt(2t), ±2 sqrt(t)): K = diag(1, 2) with zero spread in the squares
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            let disp: Vec<f64> = stats
                .times
                .clone()
                .iter()
                .flat_map(|t| [sx * (2.0 * t).sqrt(), sy * 2.0 * t.sqrt()])
                .collect();
            stats.push_particle(&disp, &[0.0; 4]).unwrap();
        }
    }
    let est = estimate_k(&stats, 1.0).unwrap();
    let report = symmetry_check(&est).unwrap();
    assert!(!report.diag_equal);
}

#[test]
fn free_particle_is_symmetric() {
    let m = colored(FlowField::taylor_green().with_amplitude(0.0).unwrap(), 0.5);
    let run = run_ensemble(&RunConfig::new(m, 300, 1e-2, 40.0, 8), 1).unwrap();
    let report = symmetry_check(&estimate_k(&run.stats, 0.5).unwrap()).unwrap();
    assert!(report.diag_equal && report.offdiag_zero, "{report:?}");
}

#[test]
fn lyapunov_inequality_holds_far_out() {
    let m = colored(FlowField::taylor_green().with_amplitude(0.0).unwrap(), 1.0);
    let spec = LyapunovSpec::from_model(&m);
    let report = lyapunov_drift_check(&m, &spec, 2000, 1e3, 4).unwrap();
    assert!(report.passes);
    // ... but not near the origin, where L V + V equals the trace terms plus one
    assert_eq!(report.origin_value, 3.5);
    assert!(report.origin_value > spec.beta);
}

#[test]
fn generator_closed_form_matches_finite_differences_far_out() {
    let m = colored(FlowField::taylor_green(), 0.1);
    let spec = LyapunovSpec::from_model(&m);
    let a = generator_agreement(&m, &spec, 100, 1e3, 5).unwrap();
    assert!(a.max_relative_error <= 1e-6, "{a:?}");
}

#[test]
fn parity_broken_flow_keeps_full_rank() {
    let m = colored(parity_broken(), 0.1);
    assert!(!m.flow.check_parity(100, 1e-12).passes);
    assert!(check_hypoellipticity_rank(&m, &[0.4, 1.0], &[0.7]).unwrap().full);
}
