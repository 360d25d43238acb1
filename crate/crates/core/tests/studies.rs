use effdiff_core::dynamics::{ModelKind, ModelParams};
use effdiff_core::ensemble::RunConfig;
use effdiff_core::flow::FlowField;
use effdiff_core::limits::{run_sweep, white_noise_limit_study, RateFit, SweepAxis, SweepSpec, WhiteNoiseStudy};
use effdiff_core::ou::{OuParams, OuProcess};

fn base(kind: ModelKind, tau: f64, sigma: f64, amplitude: f64, particles: usize, dt: f64, t_final: f64) -> RunConfig {
    let flow = FlowField::taylor_green().with_amplitude(amplitude).unwrap();
    let ou = OuProcess::new(OuParams::scalar(1.0, 1.0, 1.0)).unwrap();
    let m = ModelParams::new(kind, tau, sigma, flow, ou).unwrap();
    RunConfig::new(m, particles, dt, t_final, 7)
}

#[test]
fn free_particle_sigma_sweep_tracks_molecular_value() {
    let spec = SweepSpec {
        base: base(ModelKind::ColoredInertial, 1.0, 0.1, 0.0, 300, 1e-2, 60.0),
        axis: SweepAxis::Sigma,
        values: vec![0.05, 0.2, 1.0],
        paired: true,
        kinds: None,
        window_fraction: 0.5,
        workers: 1,
    };
    let table = run_sweep(&spec).unwrap();
    assert!(table.common_random_numbers);
    assert_eq!(table.points.len(), 6);
    for p in &table.points {
        let est = p.estimate.as_ref().unwrap();
        let (k, se) = est.isotropic();
        // u(0) = 0 costs about tau / t of the plateau value
        let expected = p.free_ref * (1.0 - 1.0 / 45.0);
        assert!((k - expected).abs() < 3.0 * se, "{:?} {} {k} vs {}", p.kind, p.value, p.free_ref);
    }
}

#[test]
fn sweep_is_a_pure_function_of_spec() {
    let spec = SweepSpec {
        base: base(ModelKind::ColoredTracer, 0.0, 0.1, 1.0, 40, 1e-2, 10.0),
        axis: SweepAxis::Delta,
        values: vec![1.0, 0.5],
        paired: false,
        kinds: None,
        window_fraction: 0.5,
        workers: 2,
    };
    let a = run_sweep(&spec).unwrap();
    let b = run_sweep(&spec).unwrap();
    for (x, y) in a.points.iter().zip(&b.points) {
        assert_eq!(x.estimate.as_ref().unwrap().k, y.estimate.as_ref().unwrap().k);
    }
}

#[test]
fn failing_point_is_recorded_and_sweep_continues() {
    // tau = 1e-4 with dt = 1e-1 diverges; tau = 1 is fine
    let spec = SweepSpec {
        base: base(ModelKind::ColoredInertial, 1.0, 0.1, 1.0, 8, 1e-1, 200.0),
        axis: SweepAxis::Tau,
        values: vec![1e-4, 1.0],
        paired: false,
        kinds: None,
        window_fraction: 0.5,
        workers: 1,
    };
    let table = run_sweep(&spec).unwrap();
    assert!(table.points[0].estimate.as_ref().unwrap_err().contains("non-finite"));
    assert!(table.points[1].estimate.is_ok());
}

#[test]
fn empty_value_list_rejected() {
    let spec = SweepSpec {
        base: base(ModelKind::ColoredInertial, 1.0, 0.1, 1.0, 8, 1e-2, 1.0),
        axis: SweepAxis::Alpha,
        values: vec![],
        paired: false,
        kinds: None,
        window_fraction: 0.5,
        workers: 1,
    };
    assert!(run_sweep(&spec).is_err());
}

#[test]
fn no_flow_white_noise_study_has_zero_gap() {
    // with F = 0 colored and white inertial dynamics consume identical draws
    let study = WhiteNoiseStudy {
        base: base(ModelKind::ColoredInertial, 1.3895, 0.3162, 0.0, 64, 5e-3, 20.0),
        deltas: vec![1.0, 0.1],
        window_fraction: 0.5,
        workers: 1,
        bootstrap_reps: 100,
    };
    let report = white_noise_limit_study(&study).unwrap();
    for p in &report.points {
        assert!(p.diff.abs() <= 3.0 * p.se_diff);
    }
    assert!(report.non_increasing && report.converged);
    assert_eq!(report.rate, RateFit::Unresolved { resolved_points: 0 });
}

#[test]
fn white_noise_study_enforces_step_guard() {
    let study = WhiteNoiseStudy {
        base: base(ModelKind::ColoredInertial, 1.0, 0.1, 1.0, 8, 1e-2, 1.0),
        deltas: vec![1.0, 0.1],
        window_fraction: 0.5,
        workers: 1,
        bootstrap_reps: 10,
    };
    assert!(white_noise_limit_study(&study).is_err());
    let mut increasing = study.clone();
    increasing.base.dt = 1e-3;
    increasing.deltas = vec![0.1, 1.0];
    assert!(white_noise_limit_study(&increasing).is_err());
}
