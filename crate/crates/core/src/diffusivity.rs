//! Effective diffusivity from ensemble displacement statistics.
//!
//! `K(t) = Cov[r(t)] / 2t` at each checkpoint, averaged over a trailing time
//! window with inverse-variance weights. Per-checkpoint errors come from the
//! across-particle fourth moments (delta method); the particles are iid.
//!
//! Checkpoints are computed from the same particles and are strongly
//! correlated, so the window error is taken as the weighted mean of the
//! per-checkpoint errors. That is the exact error for perfectly correlated
//! checkpoints and an upper bound otherwise.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::ensemble::EnsembleStats;
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW_FRACTION: f64 = 0.5;
pub const MIN_WINDOW_POINTS: usize = 4;

#[derive(Debug, Clone, Serialize)]
pub struct KSample {
    pub t: f64,
    pub k: DMatrix<f64>,
    pub stderr: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftEstimate {
    pub v: Vec<f64>,
    pub stderr: Vec<f64>,
    pub t: f64,
    /// Some component exceeds three standard errors.
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiffusivityEstimate {
    pub k: DMatrix<f64>,
    pub k_sym: DMatrix<f64>,
    pub stderr: DMatrix<f64>,
    pub drift: DriftEstimate,
    pub t_lo: f64,
    pub t_hi: f64,
    pub points: usize,
    pub particles: u64,
    /// Least-squares slope of `K11(t)` over the window divided by `K11`.
    pub slope_diag: f64,
    pub series: Vec<KSample>,
}

impl DiffusivityEstimate {
    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    /// Mean of the diagonal and its (averaged) standard error.
    pub fn isotropic(&self) -> (f64, f64) {
        let d = self.dim() as f64;
        (self.k.trace() / d, self.stderr.trace() / d)
    }

    pub fn max_stderr(&self) -> f64 {
        self.stderr.max()
    }

    pub fn min_sym_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.k_sym.clone()).eigenvalues.min()
    }
}

pub fn symmetrize(k: &DMatrix<f64>) -> DMatrix<f64> {
    (k + k.transpose()) * 0.5
}

/// `K(t)` and its standard error at checkpoint `i`.
pub fn k_at(stats: &EnsembleStats, i: usize) -> KSample {
    let t = stats.times[i];
    let scale = 1.0 / (2.0 * t);
    KSample {
        t,
        k: stats.covariance(i) * scale,
        stderr: stats.covariance_variance(i).map(f64::sqrt) * scale,
    }
}

fn window_start(t_last: f64, window_fraction: f64) -> f64 {
    (1.0 - window_fraction) * t_last * (1.0 - 1e-12)
}

/// Number of checkpoints in `times` that fall inside the estimation window.
pub fn window_len(times: &[f64], window_fraction: f64) -> usize {
    let Some(&t_last) = times.last() else { return 0 };
    let t_start = window_start(t_last, window_fraction);
    times.iter().filter(|t| **t >= t_start).count()
}

pub fn estimate_k(stats: &EnsembleStats, window_fraction: f64) -> Result<DiffusivityEstimate> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::invalid("window_fraction", "must lie in (0, 1]"));
    }
    check_counts(stats)?;
    let t_last = *stats.times.last().ok_or(Error::WindowTooSmall {
        found: 0,
        needed: MIN_WINDOW_POINTS,
    })?;
    let t_start = window_start(t_last, window_fraction);
    let series: Vec<KSample> = (0..stats.len())
        .filter(|&i| stats.times[i] >= t_start)
        .map(|i| k_at(stats, i))
        .collect();
    if series.len() < MIN_WINDOW_POINTS {
        return Err(Error::WindowTooSmall {
            found: series.len(),
            needed: MIN_WINDOW_POINTS,
        });
    }

    let d = stats.dim;
    let mut k = DMatrix::zeros(d, d);
    let mut stderr = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            let (value, se) = weighted_mean(series.iter().map(|s| (s.k[(a, b)], s.stderr[(a, b)])));
            k[(a, b)] = value;
            stderr[(a, b)] = se;
        }
    }

    let slope = least_squares_slope(series.iter().map(|s| (s.t, s.k[(0, 0)])));
    let slope_diag = if k[(0, 0)] != 0.0 { slope / k[(0, 0)] } else { 0.0 };

    Ok(DiffusivityEstimate {
        k_sym: symmetrize(&k),
        k,
        stderr,
        drift: estimate_drift(stats)?,
        t_lo: series[0].t,
        t_hi: series[series.len() - 1].t,
        points: series.len(),
        particles: stats.count(stats.len() - 1),
        slope_diag,
        series,
    })
}

/// Mean velocity `<r(t)> / t` at the last checkpoint.
pub fn estimate_drift(stats: &EnsembleStats) -> Result<DriftEstimate> {
    check_counts(stats)?;
    let Some(last) = stats.len().checked_sub(1) else {
        return Err(Error::TooFewSamples("no checkpoints".into()));
    };
    let t = stats.times[last];
    let n = stats.count(last) as f64;
    let cov = stats.covariance(last);
    let v: Vec<f64> = stats.mean(last).iter().map(|m| m / t).collect();
    let stderr: Vec<f64> = (0..stats.dim).map(|a| (cov[(a, a)] / n).sqrt() / t).collect();
    let flagged = v.iter().zip(&stderr).any(|(v, se)| v.abs() > 3.0 * se);
    Ok(DriftEstimate { v, stderr, t, flagged })
}

fn check_counts(stats: &EnsembleStats) -> Result<()> {
    if let Some(c) = stats.checkpoints.iter().find(|c| c.count < 2) {
        return Err(Error::TooFewSamples(format!(
            "{} particles; at least 2 are needed",
            c.count
        )));
    }
    Ok(())
}

/// Inverse-variance weighted mean; equal weights when any error is zero.
fn weighted_mean(points: impl Iterator<Item = (f64, f64)> + Clone) -> (f64, f64) {
    let any_exact = points.clone().any(|(_, se)| se <= 0.0);
    let (mut sw, mut swx, mut swse) = (0.0, 0.0, 0.0);
    for (x, se) in points {
        let w = if any_exact { 1.0 } else { 1.0 / (se * se) };
        sw += w;
        swx += w * x;
        swse += w * se;
    }
    (swx / sw, swse / sw)
}

fn least_squares_slope(points: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let n = points.clone().count() as f64;
    let (mt, my) = points
        .clone()
        .fold((0.0, 0.0), |(a, b), (t, y)| (a + t / n, b + y / n));
    let (mut stt, mut sty) = (0.0, 0.0);
    for (t, y) in points {
        stt += (t - mt) * (t - mt);
        sty += (t - mt) * (y - my);
    }
    if stt > 0.0 {
        sty / stt
    } else {
        0.0
    }
}
