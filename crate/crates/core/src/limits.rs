//! Parameter sweeps and the colored → white noise limit study.
//!
//! Every grid point reuses the master seed (common random numbers), so
//! neighbouring points see the same noise paths and curves come out smooth in
//! the swept parameter. Differences between points are then much less noisy
//! than the per-point standard errors suggest.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffusivity::{estimate_k, DiffusivityEstimate};
use crate::dynamics::{ModelKind, ModelParams};
use crate::ensemble::{run_ensemble, RunConfig};
use crate::error::{Error, Result};
use crate::ou::{OuParams, OuProcess};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Tau,
    Sigma,
    Alpha,
    Lambda,
    Delta,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Tau => "tau",
            SweepAxis::Sigma => "sigma",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Lambda => "lambda",
            SweepAxis::Delta => "delta",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Tau, Self::Sigma, Self::Alpha, Self::Lambda, Self::Delta]
            .into_iter()
            .find(|a| a.name() == s)
    }
}

/// `model` with `kind` replaced and, optionally, one parameter overridden.
/// Alpha sets every diagonal entry of `A`; lambda sets `Lambda = lambda^2 I`.
pub fn model_at(
    model: &ModelParams,
    kind: ModelKind,
    axis: Option<(SweepAxis, f64)>,
) -> Result<ModelParams> {
    let mut tau = model.tau;
    let mut sigma = model.sigma;
    let mut ou: OuParams = model.ou.params().clone();
    let n = ou.dim();
    match axis {
        None => {}
        Some((SweepAxis::Tau, v)) => tau = v,
        Some((SweepAxis::Sigma, v)) => sigma = v,
        Some((SweepAxis::Delta, v)) => ou.delta = v,
        Some((SweepAxis::Alpha, v)) => {
            if !(v > 0.0) {
                return Err(Error::invalid("alpha", "must be positive"));
            }
            ou.a = DMatrix::from_diagonal_element(n, n, v);
        }
        Some((SweepAxis::Lambda, v)) => {
            if !(v >= 0.0) {
                return Err(Error::invalid("lambda", "must be non-negative"));
            }
            ou.lambda = DMatrix::from_diagonal_element(n, n, v * v);
        }
    }
    Ok(ModelParams::new(kind, tau, sigma, model.flow.clone(), OuProcess::new(ou)?)?
        .with_tracer_scheme(model.tracer_scheme))
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Also run the partner model (colored <-> white) at each point.
    pub paired: bool,
    /// Explicit model kinds; overrides `paired` when set.
    pub kinds: Option<Vec<ModelKind>>,
    pub window_fraction: f64,
    pub workers: usize,
}

impl SweepSpec {
    pub fn kinds(&self) -> Vec<ModelKind> {
        match &self.kinds {
            Some(k) => k.clone(),
            None if self.paired => vec![self.base.model.kind, self.base.model.kind.partner()],
            None => vec![self.base.model.kind],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("values", "sweep axis has no values"));
        }
        if self.values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("values", "sweep values must be finite and positive"));
        }
        if self.kinds().is_empty() {
            return Err(Error::invalid("kinds", "at least one model kind is required"));
        }
        self.base.validate()
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: f64,
    pub kind: ModelKind,
    /// The model at this point, when it could be built.
    pub model: Option<ModelParams>,
    /// Free-particle reference `sigma^2 / 2`.
    pub free_ref: f64,
    pub estimate: std::result::Result<DiffusivityEstimate, String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub seed: u64,
    pub common_random_numbers: bool,
    pub points: Vec<SweepPoint>,
}

/// One ensemble per (value, kind). A failing point is recorded and the sweep continues.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepTable> {
    spec.validate()?;
    let mut points = Vec::new();
    for &value in &spec.values {
        for kind in spec.kinds() {
            points.push(run_point(spec, value, kind));
        }
    }
    Ok(SweepTable {
        seed: spec.base.seed,
        common_random_numbers: true,
        points,
    })
}

fn run_point(spec: &SweepSpec, value: f64, kind: ModelKind) -> SweepPoint {
    let model = model_at(&spec.base.model, kind, Some((spec.axis, value)));
    let free_ref = match &model {
        Ok(m) => m.molecular_diffusivity(),
        Err(_) => spec.base.model.molecular_diffusivity(),
    };
    let mut warnings = Vec::new();
    let estimate = match &model {
        Err(e) => Err(e.to_string()),
        Ok(m) => {
            let mut cfg = spec.base.clone();
            cfg.model = m.clone();
            run_ensemble(&cfg, spec.workers)
                .and_then(|run| {
                    warnings = run.warnings;
                    estimate_k(&run.stats, spec.window_fraction)
                })
                .map_err(|e| e.to_string())
        }
    };
    SweepPoint {
        axis: spec.axis,
        value,
        kind,
        model: model.ok(),
        free_ref,
        estimate,
        warnings,
    }
}

#[derive(Debug, Clone)]
pub struct WhiteNoiseStudy {
    /// Colored base configuration; its `delta` is replaced per point.
    pub base: RunConfig,
    pub deltas: Vec<f64>,
    pub window_fraction: f64,
    pub workers: usize,
    pub bootstrap_reps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaPoint {
    pub delta: f64,
    pub k_colored: f64,
    pub se_colored: f64,
    /// `k_colored - k_white`
    pub diff: f64,
    pub se_diff: f64,
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RateFit {
    Unresolved { resolved_points: usize },
    Resolved {
        rate: f64,
        log_prefactor: f64,
        ci_low: f64,
        ci_high: f64,
        points: usize,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct WhiteNoiseLimitReport {
    pub k_white: f64,
    pub se_white: f64,
    pub points: Vec<DeltaPoint>,
    /// `|dK|` non-increasing as delta decreases, within combined error bars.
    pub non_increasing: bool,
    /// Smallest-delta point within three combined errors of the white model.
    pub converged: bool,
    pub rate: RateFit,
    pub warnings: Vec<String>,
}

/// Runs the colored model at each `delta` and its white-noise partner once,
/// all with the base `dt` and seed. K is the isotropic part (mean diagonal).
pub fn white_noise_limit_study(study: &WhiteNoiseStudy) -> Result<WhiteNoiseLimitReport> {
    let base = &study.base;
    if !base.model.kind.is_colored() {
        return Err(Error::invalid("kind", "the study needs a colored base model"));
    }
    if study.deltas.is_empty() || study.deltas.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::invalid("deltas", "must be non-empty, finite and positive"));
    }
    if study.deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("deltas", "must be strictly decreasing"));
    }
    let delta_min = *study.deltas.last().unwrap();
    if base.dt > delta_min / 20.0 {
        return Err(Error::invalid(
            "dt",
            format!("dt = {} exceeds delta_min / 20 = {}", base.dt, delta_min / 20.0),
        ));
    }

    let mut warnings = Vec::new();
    let mut run = |model: ModelParams| -> Result<(f64, f64)> {
        let mut cfg = base.clone();
        cfg.model = model;
        let out = run_ensemble(&cfg, study.workers)?;
        warnings.extend(out.warnings);
        Ok(estimate_k(&out.stats, study.window_fraction)?.isotropic())
    };

    let (k_white, se_white) = run(model_at(&base.model, base.model.kind.partner(), None)?)?;
    let mut points = Vec::new();
    for &delta in &study.deltas {
        let (k, se) = run(model_at(&base.model, base.model.kind, Some((SweepAxis::Delta, delta)))?)?;
        let diff = k - k_white;
        let se_diff = se.hypot(se_white);
        points.push(DeltaPoint {
            delta,
            k_colored: k,
            se_colored: se,
            diff,
            se_diff,
            resolved: diff.abs() > 3.0 * se_diff,
        });
    }

    let non_increasing = points.windows(2).all(|w| {
        w[1].diff.abs() <= w[0].diff.abs() + 3.0 * w[0].se_diff.hypot(w[1].se_diff)
    });
    let last = points.last().unwrap();
    let converged = last.diff.abs() <= 3.0 * last.se_diff;
    let rate = fit_rate(&points, study.bootstrap_reps, base.seed);
    Ok(WhiteNoiseLimitReport {
        k_white,
        se_white,
        points,
        non_increasing,
        converged,
        rate,
        warnings,
    })
}

/// Weighted fit of `log|dK| = c + p log(delta)` over resolved points, with a
/// parametric bootstrap 95% interval for `p`.
pub fn fit_rate(points: &[DeltaPoint], reps: usize, seed: u64) -> RateFit {
    let resolved: Vec<&DeltaPoint> = points.iter().filter(|p| p.resolved).collect();
    if resolved.len() < 2 {
        return RateFit::Unresolved {
            resolved_points: resolved.len(),
        };
    }
    let fit = |diffs: &[f64]| -> Option<(f64, f64)> {
        let data: Vec<(f64, f64, f64)> = resolved
            .iter()
            .zip(diffs)
            .filter(|(_, d)| **d != 0.0)
            .map(|(p, d)| (p.delta.ln(), d.abs().ln(), (d / p.se_diff).powi(2)))
            .collect();
        weighted_line(&data)
    };
    let observed: Vec<f64> = resolved.iter().map(|p| p.diff).collect();
    let Some((rate, log_prefactor)) = fit(&observed) else {
        return RateFit::Unresolved {
            resolved_points: resolved.len(),
        };
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rates: Vec<f64> = (0..reps)
        .filter_map(|_| {
            let sample: Vec<f64> = resolved
                .iter()
                .map(|p| Normal::new(p.diff, p.se_diff).unwrap().sample(&mut rng))
                .collect();
            fit(&sample).map(|(r, _)| r)
        })
        .collect();
    rates.sort_by(f64::total_cmp);
    let (ci_low, ci_high) = if rates.is_empty() {
        (rate, rate)
    } else {
        let q = |f: f64| rates[((rates.len() - 1) as f64 * f).round() as usize];
        (q(0.025), q(0.975))
    };
    RateFit::Resolved {
        rate,
        log_prefactor,
        ci_low,
        ci_high,
        points: resolved.len(),
    }
}

/// Weighted least squares `y = c + p x`; returns `(p, c)`.
fn weighted_line(data: &[(f64, f64, f64)]) -> Option<(f64, f64)> {
    let sw: f64 = data.iter().map(|d| d.2).sum();
    if data.len() < 2 || sw <= 0.0 {
        return None;
    }
    let mx = data.iter().map(|d| d.2 * d.0).sum::<f64>() / sw;
    let my = data.iter().map(|d| d.2 * d.1).sum::<f64>() / sw;
    let sxx: f64 = data.iter().map(|d| d.2 * (d.0 - mx).powi(2)).sum();
    let sxy: f64 = data.iter().map(|d| d.2 * (d.0 - mx) * (d.1 - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let p = sxy / sxx;
    Some((p, my - p * mx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowField;

    fn point(delta: f64, diff: f64, se: f64) -> DeltaPoint {
        DeltaPoint {
            delta,
            k_colored: diff,
            se_colored: se,
            diff,
            se_diff: se,
            resolved: diff.abs() > 3.0 * se,
        }
    }

    #[test]
    fn exact_power_law_recovered() {
        let pts: Vec<DeltaPoint> = [1.0, 0.5, 0.1, 0.05]
            .iter()
            .map(|d: &f64| point(*d, 0.2 * d.sqrt(), 1e-4))
            .collect();
        match fit_rate(&pts, 200, 1) {
            RateFit::Resolved { rate, ci_low, ci_high, points, .. } => {
                assert!((rate - 0.5).abs() < 1e-12);
                assert!(ci_low <= rate && rate <= ci_high && ci_high - ci_low < 0.05);
                assert_eq!(points, 4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unresolved_when_differences_are_noise() {
        let pts = vec![point(1.0, 0.01, 0.01), point(0.5, 0.1, 0.01), point(0.1, 0.0, 0.01)];
        assert_eq!(fit_rate(&pts, 10, 1), RateFit::Unresolved { resolved_points: 1 });
    }

    #[test]
    fn axis_overrides() {
        let flow = FlowField::taylor_green();
        let ou = OuProcess::new(OuParams::scalar(1.0, 1.0, 1.0)).unwrap();
        let m = ModelParams::new(ModelKind::ColoredInertial, 1.0, 0.1, flow, ou).unwrap();
        let a = model_at(&m, ModelKind::ColoredInertial, Some((SweepAxis::Alpha, 100.0))).unwrap();
        assert_eq!(a.ou.params().a[(0, 0)], 100.0);
        let l = model_at(&m, ModelKind::WhiteInertial, Some((SweepAxis::Lambda, 0.1))).unwrap();
        assert!((l.ou.params().lambda[(0, 0)] - 0.01).abs() < 1e-15);
        assert_eq!(l.kind, ModelKind::WhiteInertial);
        let t = model_at(&m, ModelKind::ColoredTracer, Some((SweepAxis::Sigma, 0.5))).unwrap();
        assert_eq!((t.tau, t.sigma), (0.0, 0.5));
        assert!(model_at(&m, m.kind, Some((SweepAxis::Alpha, 0.0))).is_err());
    }
}
