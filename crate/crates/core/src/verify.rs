//! Numerical checks of the structural properties behind the diffusivity
//! results: Lyapunov drift, centering, symmetry of K and hypoellipticity.
//!
//! The Lyapunov check works on the system
//!
//! ```text
//! dz = y dt
//! dy = (F(z) mu - y) / tau dt + (sigma / tau) dB
//! dmu = -A mu dt + sqrt(Lambda) dW
//! ```
//!
//! with `V = 1 + c_y |y|^2 + c_mu |mu|^2`. `V` is quadratic, so the
//! generator applied to it has a closed form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::diffusivity::DiffusivityEstimate;
use crate::dynamics::{check_hypoellipticity_rank, Integrator, ModelKind, ModelParams, ParticleState, Scratch};
use crate::error::{Error, Result};
use crate::ensemble::particle_rng;

/// Grid used for the sup-norm of `F` in the Lyapunov constants.
pub const SUP_NORM_GRID: usize = 64;
pub const CENTERING_BATCHES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovSpec {
    pub coeff_y: f64,
    pub coeff_mu: f64,
    pub beta: f64,
}

impl LyapunovSpec {
    /// `c_y = tau`, `c_mu = (tau^2 F^2 + 1) / (2 lambda_1)`,
    /// `beta = sigma^2 d / 2 + tr(Lambda) / 2 + 1`.
    pub fn from_model(m: &ModelParams) -> Self {
        let f = m.flow.sup_norm(SUP_NORM_GRID);
        let lambda_1 = m.ou.rates().iter().copied().fold(f64::INFINITY, f64::min);
        let d = m.dim_d() as f64;
        Self {
            coeff_y: m.tau,
            coeff_mu: (m.tau * m.tau * f * f + 1.0) / (2.0 * lambda_1),
            beta: m.sigma * m.sigma * d / 2.0 + m.ou.params().lambda.trace() / 2.0 + 1.0,
        }
    }

    pub fn value(&self, y: &[f64], mu: &[f64]) -> f64 {
        1.0 + self.coeff_y * norm2(y) + self.coeff_mu * norm2(mu)
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn require_colored_inertial(m: &ModelParams) -> Result<()> {
    if m.kind != ModelKind::ColoredInertial {
        return Err(Error::invalid("kind", "check defined for the colored inertial model only"));
    }
    Ok(())
}

/// Closed-form generator of the system above applied to `V`.
pub fn generator_closed_form(m: &ModelParams, spec: &LyapunovSpec, z: &[f64], y: &[f64], mu: &[f64]) -> Result<f64> {
    let d = m.dim_d();
    let f = m.flow.eval_f(z)?;
    let a = &m.ou.params().a;
    let fmu: Vec<f64> = (0..d).map(|i| (0..mu.len()).map(|j| f[(i, j)] * mu[j]).sum()).collect();
    let y_drift: f64 = y.iter().zip(&fmu).map(|(y, v)| y * (v - y)).sum();
    let mu_a_mu: f64 = (0..mu.len())
        .map(|i| (0..mu.len()).map(|j| mu[i] * a[(i, j)] * mu[j]).sum::<f64>())
        .sum();
    let tau = m.tau;
    Ok(2.0 * spec.coeff_y * y_drift / tau
        + spec.coeff_y * m.sigma * m.sigma * d as f64 / (tau * tau)
        - 2.0 * spec.coeff_mu * mu_a_mu
        + spec.coeff_mu * m.ou.params().lambda.trace())
}

/// Generator of the same system applied to an arbitrary `g(z, y, mu)` by
/// central differences. Independent of the closed form.
pub fn generator_finite_difference(
    m: &ModelParams,
    g: impl Fn(&[f64], &[f64], &[f64]) -> f64,
    z: &[f64],
    y: &[f64],
    mu: &[f64],
) -> Result<f64> {
    let d = m.dim_d();
    let n = m.dim_n();
    let f = m.flow.eval_f(z)?;
    let a = &m.ou.params().a;
    let lambda = &m.ou.params().lambda;
    let tau = m.tau;

    // state = (z, y, mu)
    let mut state: Vec<f64> = z.iter().chain(y).chain(mu).copied().collect();
    let eval = |s: &[f64]| g(&s[..d], &s[d..2 * d], &s[2 * d..]);
    let mut drift = vec![0.0; 2 * d + n];
    for i in 0..d {
        drift[i] = y[i];
        let fmu: f64 = (0..n).map(|j| f[(i, j)] * mu[j]).sum();
        drift[d + i] = (fmu - y[i]) / tau;
    }
    for i in 0..n {
        drift[2 * d + i] = -(0..n).map(|j| a[(i, j)] * mu[j]).sum::<f64>();
    }
    // diffusion matrix (noise covariance), block diagonal
    let mut cov = vec![0.0; (2 * d + n) * (2 * d + n)];
    let dim = 2 * d + n;
    for i in 0..d {
        cov[(d + i) * dim + d + i] = (m.sigma / tau).powi(2);
    }
    for i in 0..n {
        for j in 0..n {
            cov[(2 * d + i) * dim + 2 * d + j] = lambda[(i, j)];
        }
    }

    let step = |x: f64| 1e-2 * x.abs().max(1.0);
    let centre = eval(&state);
    let mut total = 0.0;
    for i in 0..dim {
        let hi = step(state[i]);
        let xi = state[i];
        state[i] = xi + hi;
        let plus = eval(&state);
        state[i] = xi - hi;
        let minus = eval(&state);
        state[i] = xi;
        total += drift[i] * (plus - minus) / (2.0 * hi);
        if cov[i * dim + i] != 0.0 {
            total += 0.5 * cov[i * dim + i] * (plus - 2.0 * centre + minus) / (hi * hi);
        }
        for j in 0..i {
            let c = cov[i * dim + j];
            if c == 0.0 {
                continue;
            }
            let hj = step(state[j]);
            let xj = state[j];
            let mut corner = |si: f64, sj: f64| {
                state[i] = xi + si * hi;
                state[j] = xj + sj * hj;
                let v = eval(&state);
                state[i] = xi;
                state[j] = xj;
                v
            };
            let mixed = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * hi * hj);
            // symmetric off-diagonal pair
            total += c * mixed;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub samples: usize,
    /// `max(L V + V - beta)` with the printed `beta` of the `LyapunovSpec`.
    pub max_violation: f64,
    pub passes: bool,
    /// `max(L V + V)`: the smallest constant that works on the sample.
    pub fitted_beta: f64,
    pub spec_beta: f64,
    /// `L V + V` at `y = mu = 0` (first sampled `z`). `L V + V` peaks near
    /// there, and a wide ball almost never samples it.
    pub origin_value: f64,
}

/// One sample point: `z` uniform in the cell, `y` and `mu` uniform in balls of
/// radius `radius`. Draws are sequential, so a longer run extends a shorter one.
fn sample_point(m: &ModelParams, radius: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let z: Vec<f64> = m.flow.period().iter().map(|l| l * rng.random::<f64>()).collect();
    let y = ball(m.dim_d(), radius, rng);
    let mu = ball(m.dim_n(), radius, rng);
    (z, y, mu)
}

fn ball(dim: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = norm2(&dir).sqrt();
    let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
    dir.iter().map(|x| if norm > 0.0 { r * x / norm } else { 0.0 }).collect()
}

pub fn lyapunov_drift_check(
    m: &ModelParams,
    spec: &LyapunovSpec,
    samples: usize,
    radius: f64,
    seed: u64,
) -> Result<LyapunovReport> {
    require_colored_inertial(m)?;
    if samples == 0 {
        return Err(Error::invalid("samples", "at least one sample is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fitted_beta = f64::NEG_INFINITY;
    let mut origin_value = f64::NAN;
    for i in 0..samples {
        let (z, y, mu) = sample_point(m, radius, &mut rng);
        let lv = generator_closed_form(m, spec, &z, &y, &mu)?;
        fitted_beta = fitted_beta.max(lv + spec.value(&y, &mu));
        if i == 0 {
            let (y0, mu0) = (vec![0.0; y.len()], vec![0.0; mu.len()]);
            origin_value = generator_closed_form(m, spec, &z, &y0, &mu0)? + 1.0;
        }
    }
    let max_violation = fitted_beta - spec.beta;
    Ok(LyapunovReport {
        samples,
        max_violation,
        passes: max_violation <= 0.0,
        fitted_beta,
        spec_beta: spec.beta,
        origin_value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorAgreement {
    pub points: usize,
    pub max_relative_error: f64,
}

/// Compares the closed form with the finite-difference generator at random points.
pub fn generator_agreement(
    m: &ModelParams,
    spec: &LyapunovSpec,
    points: usize,
    radius: f64,
    seed: u64,
) -> Result<GeneratorAgreement> {
    require_colored_inertial(m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let (z, y, mu) = sample_point(m, radius, &mut rng);
        let cf = generator_closed_form(m, spec, &z, &y, &mu)?;
        let fd = generator_finite_difference(m, |_, y, mu| spec.value(y, mu), &z, &y, &mu)?;
        worst = worst.max((fd - cf).abs() / cf.abs().max(1.0));
    }
    Ok(GeneratorAgreement {
        points,
        max_relative_error: worst,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CenteringReport {
    pub mean_velocity_field: Vec<f64>,
    pub se: Vec<f64>,
    pub centered: bool,
}

/// Time average of `F(x) mu` along one trajectory after `burn_in`, with
/// batch-means standard errors.
pub fn centering_check(m: &ModelParams, dt: f64, burn_in: f64, horizon: f64, seed: u64) -> Result<CenteringReport> {
    require_colored_inertial(m)?;
    if !(m.sigma > 0.0) {
        return Err(Error::invalid("sigma", "centering check needs sigma > 0"));
    }
    if !(horizon > 0.0 && burn_in >= 0.0) {
        return Err(Error::invalid("horizon", "must be positive"));
    }
    let d = m.dim_d();
    let n = m.dim_n();
    let integrator = Integrator::new(m, dt)?;
    let mut scratch = Scratch::new(m);
    let mut rng = particle_rng(seed, 0);
    let mu0: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mu0 = m.ou.sample_stationary(&mu0)?;
    let x0: Vec<f64> = m.flow.period().iter().map(|l| l * rng.random::<f64>()).collect();
    let mut state = ParticleState::new(x0, vec![0.0; d], mu0);
    let mut draws = vec![0.0; m.draws_per_step()];
    let mut advance = |state: &mut ParticleState, rng: &mut ChaCha8Rng| -> Result<()> {
        for g in draws.iter_mut() {
            *g = rng.sample(StandardNormal);
        }
        integrator.advance(state, &draws, &mut scratch)
    };

    for _ in 0..(burn_in / dt).round() as u64 {
        advance(&mut state, &mut rng)?;
    }
    let per_batch = ((horizon / dt).round() as u64 / CENTERING_BATCHES as u64).max(1);
    let mut f = vec![0.0; d * n];
    let mut batches = vec![vec![0.0; d]; CENTERING_BATCHES];
    for batch in batches.iter_mut() {
        for _ in 0..per_batch {
            advance(&mut state, &mut rng)?;
            m.flow.eval_into(&state.x, &mut f);
            for (i, b) in batch.iter_mut().enumerate() {
                *b += (0..n).map(|j| f[i + d * j] * state.mu[j]).sum::<f64>();
            }
        }
        batch.iter_mut().for_each(|b| *b /= per_batch as f64);
    }
    let k = CENTERING_BATCHES as f64;
    let mean: Vec<f64> = (0..d).map(|i| batches.iter().map(|b| b[i]).sum::<f64>() / k).collect();
    let se: Vec<f64> = (0..d)
        .map(|i| {
            let var = batches.iter().map(|b| (b[i] - mean[i]).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        })
        .collect();
    let centered = mean.iter().zip(&se).all(|(m, s)| m.abs() < 3.0 * s);
    Ok(CenteringReport {
        mean_velocity_field: mean,
        se,
        centered,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymmetryReport {
    pub diag_equal: bool,
    pub offdiag_zero: bool,
    pub diag_gap: f64,
    pub diag_gap_se: f64,
}

pub fn symmetry_check(estimate: &DiffusivityEstimate) -> Result<SymmetryReport> {
    if estimate.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: estimate.dim(),
        });
    }
    let k = &estimate.k;
    let se = &estimate.stderr;
    let diag_gap = k[(0, 0)] - k[(1, 1)];
    let diag_gap_se = se[(0, 0)].hypot(se[(1, 1)]);
    Ok(SymmetryReport {
        diag_equal: diag_gap.abs() <= 3.0 * diag_gap_se,
        offdiag_zero: k[(0, 1)].abs() <= 3.0 * se[(0, 1)] && k[(1, 0)].abs() <= 3.0 * se[(1, 0)],
        diag_gap,
        diag_gap_se,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankSurvey {
    pub points: usize,
    pub min_rank: usize,
    pub dimension: usize,
    pub all_full: bool,
}

/// Hypoellipticity rank at `points` random states (`z` uniform in the cell,
/// `mu` uniform in `[-1, 1]^n`).
pub fn hypoellipticity_survey(m: &ModelParams, points: usize, seed: u64) -> Result<RankSurvey> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_rank = usize::MAX;
    let mut dimension = 0;
    for _ in 0..points.max(1) {
        let z: Vec<f64> = m.flow.period().iter().map(|l| l * rng.random::<f64>()).collect();
        let mu: Vec<f64> = (0..m.dim_n()).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let report = check_hypoellipticity_rank(m, &z, &mu)?;
        min_rank = min_rank.min(report.rank);
        dimension = report.dimension;
    }
    Ok(RankSurvey {
        points: points.max(1),
        min_rank,
        dimension,
        all_full: min_rank == dimension,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowField;
    use crate::ou::{OuParams, OuProcess};

    fn model(amplitude: f64, sigma: f64) -> ModelParams {
        let flow = FlowField::taylor_green().with_amplitude(amplitude).unwrap();
        let ou = OuProcess::new(OuParams::scalar(1.0, 1.0, 1.0)).unwrap();
        ModelParams::new(ModelKind::ColoredInertial, 1.0, sigma, flow, ou).unwrap()
    }

    #[test]
    fn constants_for_free_particle() {
        let m = model(0.0, 1.0);
        let spec = LyapunovSpec::from_model(&m);
        assert_eq!(spec.coeff_y, 1.0);
        assert_eq!(spec.coeff_mu, 0.5);
        assert_eq!(spec.beta, 2.5);
    }

    #[test]
    fn generator_at_origin_is_the_trace_term() {
        // L V(0) = c_y sigma^2 d / tau^2 + c_mu tr(Lambda) = 2 + 0.5
        let m = model(0.0, 1.0);
        let spec = LyapunovSpec::from_model(&m);
        let lv = generator_closed_form(&m, &spec, &[0.3, 0.4], &[0.0, 0.0], &[0.0]).unwrap();
        assert_eq!(lv, 2.5);
    }

    #[test]
    fn hand_computed_generator() {
        // y = (1, 0), mu = 2, F = 0: 2(-1) + 2 - 2*0.5*4 + 0.5 = -3.5
        let m = model(0.0, 1.0);
        let spec = LyapunovSpec::from_model(&m);
        let lv = generator_closed_form(&m, &spec, &[0.0, 0.0], &[1.0, 0.0], &[2.0]).unwrap();
        assert!((lv + 3.5).abs() < 1e-15);
    }

    #[test]
    fn zero_beta_fails() {
        let m = model(0.0, 1.0);
        let mut spec = LyapunovSpec::from_model(&m);
        spec.beta = 0.0;
        assert!(!lyapunov_drift_check(&m, &spec, 100, 1.0, 0).unwrap().passes);
    }

    #[test]
    fn finite_difference_matches_closed_form() {
        let m = model(1.0, 0.1);
        let spec = LyapunovSpec::from_model(&m);
        let agreement = generator_agreement(&m, &spec, 50, 10.0, 3).unwrap();
        assert!(agreement.max_relative_error < 1e-6, "{agreement:?}");
    }

    #[test]
    fn more_samples_never_lower_the_maximum() {
        let m = model(1.0, 0.1);
        let spec = LyapunovSpec::from_model(&m);
        let a = lyapunov_drift_check(&m, &spec, 500, 5.0, 9).unwrap();
        let b = lyapunov_drift_check(&m, &spec, 1000, 5.0, 9).unwrap();
        assert!(b.max_violation >= a.max_violation);
    }

    #[test]
    fn tracers_rejected() {
        let m = model(1.0, 0.1);
        let t = ModelParams::new(ModelKind::ColoredTracer, 0.0, 0.1, m.flow.clone(), m.ou.clone()).unwrap();
        assert!(lyapunov_drift_check(&t, &LyapunovSpec::from_model(&m), 1, 1.0, 0).is_err());
        assert!(centering_check(&t, 1e-2, 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn survey_reports_full_rank_with_noise() {
        let s = hypoellipticity_survey(&model(1.0, 0.1), 20, 5).unwrap();
        assert!(s.all_full);
        assert_eq!((s.min_rank, s.dimension), (5, 5));
    }
}
