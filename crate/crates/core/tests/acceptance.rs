//! Acceptance suite: one PASS/FAIL line per criterion. Built without the libtest
//! harness so the lines are never captured; exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use effdiff_core::diffusivity::estimate_k;
use effdiff_core::dynamics::{ModelKind, ModelParams};
use effdiff_core::ensemble::{default_checkpoints, run_ensemble, EnsembleStats, RunConfig};
use effdiff_core::flow::FlowField;
use effdiff_core::limits::{white_noise_limit_study, RateFit, WhiteNoiseStudy};
use effdiff_core::ou::{OuParams, OuProcess};
use effdiff_core::report::estimate_csv;
use effdiff_core::verify::{generator_agreement, hypoellipticity_survey, lyapunov_drift_check, LyapunovSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SEED: u64 = 20240611;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn model(kind: ModelKind, tau: f64, sigma: f64, amplitude: f64, ou: (f64, f64, f64)) -> ModelParams {
    let flow = FlowField::taylor_green().with_amplitude(amplitude).unwrap();
    let ou = OuProcess::new(OuParams::scalar(ou.0, ou.1, ou.2)).unwrap();
    ModelParams::new(kind, tau, sigma, flow, ou).unwrap()
}

fn tg(kind: ModelKind, tau: f64, sigma: f64) -> ModelParams {
    model(kind, tau, sigma, 1.0, (1.0, 1.0, 1.0))
}

fn within(k: f64, target: f64, se: f64) -> bool {
    (k - target).abs() <= 3.0 * se
}

fn free_particle_limit() -> Outcome {
    let m = model(ModelKind::ColoredInertial, 1.3895, 0.3162, 0.0, (1.0, 1.0, 1.0));
    let target = m.molecular_diffusivity();
    let run = run_ensemble(&RunConfig::new(m, 2000, 1e-3, 200.0, SEED), 8).unwrap();
    let est = estimate_k(&run.stats, 0.5).unwrap();
    let mut pass = true;
    let mut detail = String::new();
    for a in 0..2 {
        let (k, se) = (est.k[(a, a)], est.stderr[(a, a)]);
        let rel = (k - target).abs() / target;
        pass &= within(k, target, se) && rel <= 0.05;
        detail += &format!("K{0}{0} = {k:.5} ± {se:.5} (rel err {rel:.3}) ", a + 1);
    }
    Outcome { pass, detail: detail + &format!("vs {target:.5}") }
}

fn brownian_stats(d: f64, particles: usize, times: &[f64], rng: &mut ChaCha8Rng) -> EnsembleStats {
    let mut stats = EnsembleStats::empty(2, times.to_vec());
    let mut disp = vec![0.0; 2 * times.len()];
    for _ in 0..particles {
        let mut r = [0.0; 2];
        let mut prev = 0.0;
        for (i, t) in times.iter().enumerate() {
            for (a, ra) in r.iter_mut().enumerate() {
                let g: f64 = StandardNormal.sample(rng);
                *ra += (2.0 * d * (t - prev)).sqrt() * g;
                disp[2 * i + a] = *ra;
            }
            prev = *t;
        }
        stats.push_particle(&disp, &vec![0.0; times.len()]).unwrap();
    }
    stats
}

fn estimator_oracle() -> Outcome {
    let times = default_checkpoints(100.0, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut passed = 0;
    for _ in 0..100 {
        let est = estimate_k(&brownian_stats(0.05, 500, &times, &mut rng), 0.5).unwrap();
        let ok = within(est.k[(0, 0)], 0.05, est.stderr[(0, 0)])
            && within(est.k[(1, 1)], 0.05, est.stderr[(1, 1)])
            && within(est.k[(0, 1)], 0.0, est.stderr[(0, 1)]);
        passed += ok as usize;
    }
    Outcome { pass: passed >= 99, detail: format!("{passed}/100 replications within 3 SE") }
}

fn ou_exactness() -> Outcome {
    let mut pass = true;
    let mut detail = String::new();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for (alpha, lambda, delta) in [(1.0, 1.0, 1.0), (2.0, 1.0, 0.1), (0.5, 2.0, 1.0)] {
        let ou = OuProcess::new(OuParams::scalar(alpha, lambda, delta)).unwrap();
        let target = lambda * lambda / (2.0 * alpha * delta);
        // independent chains from mu = 0, run for 100 relaxation-scale steps
        let chains = 20_000;
        let step = ou.transition(delta).unwrap();
        let (mut s2, mut s4) = (0.0, 0.0);
        for _ in 0..chains {
            let mut mu = [0.0];
            for _ in 0..100 {
                let g: f64 = StandardNormal.sample(&mut rng);
                step.apply(&mut mu, &[g]);
            }
            s2 += mu[0] * mu[0];
            s4 += mu[0].powi(4);
        }
        let n = chains as f64;
        let var = s2 / n;
        let se = ((s4 / n - var * var) / n).sqrt();
        let ok = within(var, target, se);

        let (e1, v1) = ou.transition_moments(0.3).unwrap();
        let (eh, vh) = ou.transition_moments(0.15).unwrap();
        let e2 = &eh * &eh;
        let v2 = &eh * &vh * eh.transpose() + &vh;
        let moment_gap = (e1 - e2).amax().max((v1 - v2).amax());
        pass &= ok && moment_gap <= 1e-12;
        detail += &format!("({alpha},{lambda},{delta}): var {var:.5} ± {se:.5} vs {target:.5}, half-step gap {moment_gap:.1e}; ");
    }
    Outcome { pass, detail }
}

fn taylor_green_symmetry() -> Outcome {
    let run = run_ensemble(&RunConfig::new(tg(ModelKind::ColoredInertial, 1.0, 0.1), 1000, 1e-3, 500.0, SEED), 8).unwrap();
    let est = estimate_k(&run.stats, 0.5).unwrap();
    let gap = est.k[(0, 0)] - est.k[(1, 1)];
    let gap_se = est.stderr[(0, 0)].hypot(est.stderr[(1, 1)]);
    let off = est.k_sym[(0, 1)];
    let off_se = est.stderr[(0, 1)];
    Outcome {
        pass: gap.abs() <= 3.0 * gap_se && off.abs() <= 3.0 * off_se,
        detail: format!(
            "K11 = {:.4}, K22 = {:.4}, gap {gap:.4} (3 SE = {:.4}), K12 = {off:.4} (3 SE = {:.4})",
            est.k[(0, 0)],
            est.k[(1, 1)],
            3.0 * gap_se,
            3.0 * off_se
        ),
    }
}

fn enhancement() -> Outcome {
    let m = tg(ModelKind::ColoredInertial, 1.0, 0.01);
    let floor = 100.0 * m.molecular_diffusivity();
    let run = run_ensemble(&RunConfig::new(m, 200, 1e-3, 200.0, SEED), 8).unwrap();
    let k = estimate_k(&run.stats, 0.5).unwrap().k[(0, 0)];
    Outcome { pass: k >= floor, detail: format!("K11 = {k:.4} vs 100 sigma^2/2 = {floor:.4}") }
}

fn alpha_lambda_limits() -> Outcome {
    let mut pass = true;
    let mut detail = String::new();
    for (label, ou) in [("alpha = 100", (100.0, 1.0, 1.0)), ("lambda = 0.01", (1.0, 0.01, 1.0))] {
        let m = model(ModelKind::ColoredInertial, 1.0, 0.1, 1.0, ou);
        let run = run_ensemble(&RunConfig::new(m, 1000, 1e-2, 100.0, SEED), 8).unwrap();
        let k = estimate_k(&run.stats, 0.5).unwrap().k[(0, 0)];
        let rel = (k - 0.005).abs() / 0.005;
        pass &= rel <= 0.2;
        detail += &format!("{label}: K11 = {k:.5} (rel {rel:.3}); ");
    }
    Outcome { pass, detail }
}

fn commutation_of_limits() -> Outcome {
    let base = RunConfig::new(tg(ModelKind::ColoredInertial, 1.3895, 0.3162), 400, 5e-4, 150.0, SEED);
    let study = WhiteNoiseStudy {
        base,
        deltas: vec![1.0, 0.5, 0.1, 0.05, 0.01],
        window_fraction: 0.5,
        workers: 8,
        bootstrap_reps: 1000,
    };
    let report = white_noise_limit_study(&study).unwrap();
    let (rate_ok, rate) = match &report.rate {
        RateFit::Resolved { rate, ci_low, ci_high, .. } => {
            ((0.25..=1.0).contains(rate), format!("rate {rate:.3} [{ci_low:.3}, {ci_high:.3}]"))
        }
        RateFit::Unresolved { resolved_points } => (true, format!("rate unresolved ({resolved_points} resolved points)")),
    };
    let diffs: Vec<String> = report.points.iter().map(|p| format!("{}:{:+.4}±{:.4}", p.delta, p.diff, p.se_diff)).collect();
    Outcome {
        pass: report.non_increasing && report.converged && rate_ok,
        detail: format!(
            "K_white = {:.4} ± {:.4}; diffs {}; non-increasing {}, converged {}, {rate}",
            report.k_white,
            report.se_white,
            diffs.join(" "),
            report.non_increasing,
            report.converged
        ),
    }
}

fn inertia_beats_tracer() -> Outcome {
    let inertial = tg(ModelKind::ColoredInertial, 1.0, 0.1179);
    let tracer = tg(ModelKind::ColoredTracer, 0.0, 0.1179);
    let k = |m: ModelParams| {
        let run = run_ensemble(&RunConfig::new(m, 500, 1e-3, 200.0, SEED), 8).unwrap();
        estimate_k(&run.stats, 0.5).unwrap().isotropic()
    };
    let (ki, si) = k(inertial);
    let (kt, st) = k(tracer);
    let se = si.hypot(st);
    Outcome {
        pass: ki - kt > 3.0 * se,
        detail: format!("K(tau=1) = {ki:.4} ± {si:.4}, K(tracer) = {kt:.4} ± {st:.4}, gap / SE = {:.1}", (ki - kt) / se),
    }
}

fn determinism() -> Outcome {
    let cfg = RunConfig::new(tg(ModelKind::ColoredInertial, 1.0, 0.1), 300, 1e-2, 20.0, SEED);
    let outputs: Vec<(String, String)> = [1, 4, 8]
        .iter()
        .map(|&w| {
            let run = run_ensemble(&cfg, w).unwrap();
            let est = estimate_k(&run.stats, 0.5).unwrap();
            (run.stats.to_json().unwrap(), estimate_csv(&cfg, &est).unwrap())
        })
        .collect();
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    Outcome { pass: same, detail: format!("workers 1/4/8 byte-identical: {same}") }
}

fn hypoellipticity() -> Outcome {
    let full = hypoellipticity_survey(&tg(ModelKind::ColoredInertial, 1.0, 0.1), 100, SEED).unwrap();
    let degenerate =
        hypoellipticity_survey(&model(ModelKind::ColoredInertial, 1.0, 0.0, 0.0, (1.0, 1.0, 1.0)), 100, SEED).unwrap();
    Outcome {
        pass: full.all_full && full.min_rank == 5 && !degenerate.all_full,
        detail: format!(
            "TG sigma > 0: min rank {}/{}; sigma = 0, no flow: min rank {} (full = {})",
            full.min_rank, full.dimension, degenerate.min_rank, degenerate.all_full
        ),
    }
}

fn lyapunov_drift() -> Outcome {
    let m = tg(ModelKind::ColoredInertial, 1.0, 0.1);
    let spec = LyapunovSpec::from_model(&m);
    let report = lyapunov_drift_check(&m, &spec, 100_000, 1e3, SEED).unwrap();
    // fitted beta is the sample maximum of L V + V, so the inequality holds at every point by construction
    let agreement = generator_agreement(&m, &spec, 100, 1e3, SEED).unwrap();
    Outcome {
        pass: report.fitted_beta.is_finite() && agreement.max_relative_error <= 1e-6,
        detail: format!(
            "fitted beta {:.4} over {} samples (printed beta {:.4}, value at y = mu = 0: {:.4}); generator FD rel err {:.1e}",
            report.fitted_beta, report.samples, report.spec_beta, report.origin_value, agreement.max_relative_error
        ),
    }
}

fn flow_checks() -> Outcome {
    let flow = FlowField::taylor_green();
    let parity = flow.check_parity(1000, 1e-12);
    let div = flow.check_divergence_free(64, 1e-8).unwrap();
    Outcome {
        pass: parity.passes && div.passes,
        detail: format!("parity violation {:.1e}, max divergence {:.1e}", parity.max_violation, div.max_divergence),
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("free-particle limit", free_particle_limit),
        ("estimator oracle", estimator_oracle),
        ("OU exactness", ou_exactness),
        ("Taylor-Green symmetry", taylor_green_symmetry),
        ("enhancement", enhancement),
        ("alpha/lambda limits", alpha_lambda_limits),
        ("commutation of limits", commutation_of_limits),
        ("inertia vs tracer", inertia_beats_tracer),
        ("determinism", determinism),
        ("hypoellipticity rank", hypoellipticity),
        ("Lyapunov drift", lyapunov_drift),
        ("flow checks", flow_checks),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {:>2} {name} [{:.1}s]: {}", i + 1, start.elapsed().as_secs_f64(), outcome.detail);
        if !outcome.pass {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
