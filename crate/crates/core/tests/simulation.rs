use effdiff_core::diffusivity::{estimate_drift, estimate_k};
use effdiff_core::dynamics::{ModelKind, ModelParams};
use effdiff_core::ensemble::{run_ensemble, InitialModulation, InitialPlacement, RunConfig};
use effdiff_core::flow::{FlowField, FourierMode, TableTerm};
use effdiff_core::ou::{OuParams, OuProcess};
use effdiff_core::Error;

fn model(kind: ModelKind, tau: f64, sigma: f64, amplitude: f64) -> ModelParams {
    let flow = FlowField::taylor_green().with_amplitude(amplitude).unwrap();
    let ou = OuProcess::new(OuParams::scalar(1.0, 1.0, 1.0)).unwrap();
    ModelParams::new(kind, tau, sigma, flow, ou).unwrap()
}

#[test]
fn free_particle_second_moment_grows_diffusively() {
    let m = model(ModelKind::ColoredInertial, 1.0, 1.0, 0.0);
    let cfg = RunConfig::new(m, 400, 1e-2, 100.0, 5);
    let run = run_ensemble(&cfg, 1).unwrap();
    let last = run.stats.len() - 1;
    let t = run.stats.times[last];
    let cov = run.stats.covariance(last);
    let var = run.stats.covariance_variance(last);
    for a in 0..2 {
        // Var x = sigma^2 (t - tau (1 - e^{-t/tau})) for u(0) = 0, with some slack for dt
        let exact = t - (1.0 - (-t).exp());
        assert!((cov[(a, a)] - exact).abs() < 3.0 * var[(a, a)].sqrt(), "{cov} vs {exact}");
    }
}

#[test]
fn worker_count_does_not_change_bytes() {
    let m = model(ModelKind::ColoredInertial, 1.0, 0.1, 1.0);
    let cfg = RunConfig::new(m, 100, 1e-2, 5.0, 42);
    let one = run_ensemble(&cfg, 1).unwrap().stats.to_json().unwrap();
    let three = run_ensemble(&cfg, 3).unwrap().stats.to_json().unwrap();
    let eight = run_ensemble(&cfg, 8).unwrap().stats.to_json().unwrap();
    assert_eq!(one, three);
    assert_eq!(one, eight);
}

#[test]
fn stats_json_round_trips() {
    let m = model(ModelKind::WhiteTracer, 0.0, 0.2, 1.0);
    let cfg = RunConfig::new(m, 10, 1e-2, 1.0, 1);
    let stats = run_ensemble(&cfg, 1).unwrap().stats;
    let back = effdiff_core::ensemble::EnsembleStats::from_json(&stats.to_json().unwrap()).unwrap();
    assert_eq!(back, stats);
}

#[test]
fn different_seeds_differ() {
    let m = model(ModelKind::ColoredTracer, 0.0, 0.1, 1.0);
    let a = run_ensemble(&RunConfig::new(m.clone(), 10, 1e-2, 1.0, 1), 1).unwrap();
    let b = run_ensemble(&RunConfig::new(m, 10, 1e-2, 1.0, 2), 1).unwrap();
    assert_ne!(a.stats, b.stats);
}

#[test]
fn blow_up_reports_particle_and_parameters() {
    // dt / tau = 1000: explicit relaxation is violently unstable
    let m = model(ModelKind::ColoredInertial, 1e-3, 0.1, 1.0);
    let cfg = RunConfig::new(m, 4, 1.0, 1000.0, 0);
    match run_ensemble(&cfg, 1) {
        Err(Error::Trajectory { particle, step, echo, .. }) => {
            assert_eq!(particle, 0);
            assert!(step > 1 && step < 1000);
            assert!(echo.contains("colored-inertial"), "{echo}");
        }
        other => panic!("expected a trajectory error, got {other:?}"),
    }
}

#[test]
fn step_guard_warning_is_reported() {
    let m = model(ModelKind::ColoredInertial, 0.01, 0.1, 1.0);
    let cfg = RunConfig::new(m, 2, 1e-3, 0.1, 0);
    let run = run_ensemble(&cfg, 1).unwrap();
    assert_eq!(run.warnings.len(), 1);
    assert!(run.warnings[0].contains("dt"));
}

#[test]
fn constant_flow_tracer_drifts_at_flow_speed() {
    // F = (0.3, -0.2), mu pinned at 1: A ~ 0 and no modulation noise
    let terms = vec![
        TableTerm { row: 0, column: 0, mode: FourierMode::new(vec![0, 0], 0.3, 0.0) },
        TableTerm { row: 1, column: 0, mode: FourierMode::new(vec![0, 0], -0.2, 0.0) },
    ];
    let flow = FlowField::coefficient_table(2, 1, vec![1.0, 1.0], terms, 1.0).unwrap();
    let ou = OuProcess::new(OuParams::scalar(1e-12, 0.0, 1.0)).unwrap();
    let m = ModelParams::new(ModelKind::ColoredTracer, 0.0, 0.0, flow, ou).unwrap();
    let mut cfg = RunConfig::new(m, 3, 1e-2, 10.0, 0);
    cfg.modulation = InitialModulation::Fixed(1.0);
    cfg.placement = InitialPlacement::Point;
    let run = run_ensemble(&cfg, 1).unwrap();
    let drift = estimate_drift(&run.stats).unwrap();
    assert!((drift.v[0] - 0.3).abs() < 1e-9, "{:?}", drift.v);
    assert!((drift.v[1] + 0.2).abs() < 1e-9);
}

#[test]
fn no_flow_no_drift() {
    let m = model(ModelKind::ColoredInertial, 1.0, 0.5, 0.0);
    let run = run_ensemble(&RunConfig::new(m, 200, 1e-2, 20.0, 9), 1).unwrap();
    let drift = estimate_drift(&run.stats).unwrap();
    for a in 0..2 {
        assert!(drift.v[a].abs() < 3.0 * drift.stderr[a]);
    }
}

#[test]
fn taylor_green_estimate_has_psd_symmetric_part() {
    let m = model(ModelKind::ColoredInertial, 1.0, 0.1, 1.0);
    let run = run_ensemble(&RunConfig::new(m, 128, 1e-2, 50.0, 3), 1).unwrap();
    let est = estimate_k(&run.stats, 0.5).unwrap();
    assert!(est.min_sym_eigenvalue() >= -3.0 * est.max_stderr());
    // the flow enhances transport well beyond sigma^2 / 2
    assert!(est.isotropic().0 > 0.005);
}

#[test]
fn window_fraction_barely_moves_free_particle_estimate() {
    let m = model(ModelKind::ColoredInertial, 1.0, 0.3162, 0.0);
    let run = run_ensemble(&RunConfig::new(m, 400, 1e-2, 100.0, 4), 1).unwrap();
    let a = estimate_k(&run.stats, 0.3).unwrap();
    let b = estimate_k(&run.stats, 0.6).unwrap();
    for i in 0..2 {
        let se = a.stderr[(i, i)].hypot(b.stderr[(i, i)]);
        assert!((a.k[(i, i)] - b.k[(i, i)]).abs() < 2.0 * se);
    }
}
