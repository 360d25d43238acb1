//! Ornstein–Uhlenbeck modulation `d mu = -(A/delta) mu dt + (sqrt(Lambda)/delta) dW`.
//!
//! `A` and `Lambda` must be symmetric and commute. They are diagonalized once
//! at construction; stepping then works mode by mode with the exact Gaussian
//! transition law, so there is no time-discretization error for any `dt`.
//!
//! In the scalar case used by the Taylor–Green experiments, `A = alpha` and
//! `Lambda = lambda^2`, i.e. `d mu = -(alpha/delta) mu dt + (lambda/delta) dW`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

/// Largest supported modulation dimension.
pub const MAX_MODULATION_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OuParams {
    pub a: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub delta: f64,
}

impl OuParams {
    /// One-dimensional process with drift `alpha` and noise amplitude `lambda`
    /// (`Lambda = lambda^2`).
    pub fn scalar(alpha: f64, lambda: f64, delta: f64) -> Self {
        Self {
            a: DMatrix::from_element(1, 1, alpha),
            lambda: DMatrix::from_element(1, 1, lambda * lambda),
            delta,
        }
    }

    /// Diagonal `A = diag(alphas)`, `Lambda = diag(lambdas^2)`.
    pub fn diagonal(alphas: &[f64], lambdas: &[f64], delta: f64) -> Self {
        Self {
            a: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(alphas)),
            lambda: DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                lambdas.len(),
                lambdas.iter().map(|l| l * l),
            )),
            delta,
        }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Validated OU process with its precomputed eigenbasis.
#[derive(Debug, Clone)]
pub struct OuProcess {
    params: OuParams,
    /// Orthogonal change of basis; `None` when `A` and `Lambda` are already diagonal.
    basis: Option<DMatrix<f64>>,
    rates: Vec<f64>,
    intensities: Vec<f64>,
    white_gain: DMatrix<f64>,
}

/// Exact one-step transition for a fixed `dt`, in the eigenbasis.
#[derive(Debug, Clone)]
pub struct OuTransition {
    decay: Vec<f64>,
    noise_sd: Vec<f64>,
    basis: Option<DMatrix<f64>>,
}

impl OuProcess {
    pub fn new(params: OuParams) -> Result<Self> {
        let n = params.a.nrows();
        if n == 0 || n > MAX_MODULATION_DIM {
            return Err(Error::invalid(
                "A",
                format!("dimension must be in 1..={MAX_MODULATION_DIM}"),
            ));
        }
        if !params.a.is_square() || params.lambda.shape() != (n, n) {
            return Err(Error::invalid("Lambda", "A and Lambda must be square of equal size"));
        }
        if !(params.delta.is_finite() && params.delta > 0.0) {
            return Err(Error::invalid("delta", "must be finite and positive"));
        }
        if params.a.iter().chain(params.lambda.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("A", "entries must be finite"));
        }
        let scale = params.a.norm().max(params.lambda.norm()).max(1.0);
        if !is_symmetric(&params.a, scale) || !is_symmetric(&params.lambda, scale) {
            return Err(Error::invalid("A", "A and Lambda must be symmetric"));
        }

        let (basis, rates, intensities) = if is_diagonal(&params.a) && is_diagonal(&params.lambda) {
            (
                None,
                params.a.diagonal().iter().copied().collect::<Vec<_>>(),
                params.lambda.diagonal().iter().copied().collect::<Vec<_>>(),
            )
        } else {
            // A generic combination shares the common eigenvectors and
            // separates repeated eigenvalues of either matrix.
            let weight = 0.618_033_988_749_894_8 * params.a.norm() / params.lambda.norm().max(1e-300);
            let mix = &params.a + &params.lambda * weight;
            let eig = SymmetricEigen::new(mix);
            let mut q = eig.eigenvectors;
            for mut col in q.column_iter_mut() {
                let pivot = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
                if pivot < 0.0 {
                    col.neg_mut();
                }
            }
            let a_diag = q.transpose() * &params.a * &q;
            let l_diag = q.transpose() * &params.lambda * &q;
            if !is_diagonal_within(&a_diag, 1e-10 * scale) || !is_diagonal_within(&l_diag, 1e-10 * scale) {
                return Err(Error::invalid("Lambda", "A and Lambda must commute"));
            }
            (
                Some(q),
                a_diag.diagonal().iter().copied().collect(),
                l_diag.diagonal().iter().copied().collect(),
            )
        };

        if rates.iter().any(|r| *r <= 0.0) {
            return Err(Error::invalid("A", "must be positive definite"));
        }
        if intensities.iter().any(|l| *l < -1e-12 * scale) {
            return Err(Error::invalid("Lambda", "must be positive semi-definite"));
        }
        let intensities: Vec<f64> = intensities.into_iter().map(|l| l.max(0.0)).collect();

        let gain_diag: Vec<f64> = rates
            .iter()
            .zip(&intensities)
            .map(|(a, l)| l.sqrt() / a)
            .collect();
        let white_gain = in_original_basis(basis.as_ref(), &gain_diag);

        Ok(Self {
            params,
            basis,
            rates,
            intensities,
            white_gain,
        })
    }

    pub fn params(&self) -> &OuParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.rates.len()
    }

    pub fn delta(&self) -> f64 {
        self.params.delta
    }

    /// Eigenvalues of `A` in the working basis.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// `A^{-1} sqrt(Lambda)`: the spatial gain of the white-noise limit.
    pub fn white_gain(&self) -> &DMatrix<f64> {
        &self.white_gain
    }

    /// Symmetric square root of `Lambda`.
    pub fn sqrt_lambda(&self) -> DMatrix<f64> {
        let diag: Vec<f64> = self.intensities.iter().map(|l| l.sqrt()).collect();
        in_original_basis(self.basis.as_ref(), &diag)
    }

    /// Solution of `A C + C A = Lambda / delta`.
    pub fn stationary_covariance(&self) -> DMatrix<f64> {
        let diag: Vec<f64> = self.stationary_variances().collect();
        in_original_basis(self.basis.as_ref(), &diag)
    }

    fn stationary_variances(&self) -> impl Iterator<Item = f64> + '_ {
        self.rates
            .iter()
            .zip(&self.intensities)
            .map(|(a, l)| l / (2.0 * a * self.params.delta))
    }

    pub fn transition(&self, dt: f64) -> Result<OuTransition> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("dt", "must be finite and positive"));
        }
        let delta = self.params.delta;
        let decay = self.rates.iter().map(|a| (-a * dt / delta).exp()).collect();
        let noise_sd = self
            .rates
            .iter()
            .zip(self.stationary_variances())
            .map(|(a, c)| (c * -(-2.0 * a * dt / delta).exp_m1()).sqrt())
            .collect();
        Ok(OuTransition {
            decay,
            noise_sd,
            basis: self.basis.clone(),
        })
    }

    /// Conditional mean map `E` and conditional covariance of one exact step.
    pub fn transition_moments(&self, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let t = self.transition(dt)?;
        let var: Vec<f64> = t.noise_sd.iter().map(|s| s * s).collect();
        Ok((
            in_original_basis(self.basis.as_ref(), &t.decay),
            in_original_basis(self.basis.as_ref(), &var),
        ))
    }

    /// Exact transition `mu -> E mu + S gauss` with `S S^T = C (I - E^2)`.
    pub fn exact_step(&self, mu: &[f64], dt: f64, gauss: &[f64]) -> Result<Vec<f64>> {
        self.check_len(mu.len())?;
        self.check_len(gauss.len())?;
        let mut out = mu.to_vec();
        self.transition(dt)?.apply(&mut out, gauss);
        Ok(out)
    }

    /// Draw from the stationary law using `n` standard normals.
    pub fn sample_stationary(&self, gauss: &[f64]) -> Result<Vec<f64>> {
        self.check_len(gauss.len())?;
        let mut out = vec![0.0; self.dim()];
        self.sample_stationary_into(gauss, &mut out);
        Ok(out)
    }

    pub(crate) fn sample_stationary_into(&self, gauss: &[f64], out: &mut [f64]) {
        let mut nu = [0.0; MAX_MODULATION_DIM];
        for ((v, c), g) in nu.iter_mut().zip(self.stationary_variances()).zip(gauss) {
            *v = c.sqrt() * g;
        }
        to_original(self.basis.as_ref(), &nu[..self.dim()], out);
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }
}

impl OuTransition {
    /// Advance `mu` in place with `gauss` (one standard normal per mode).
    #[inline]
    pub fn apply(&self, mu: &mut [f64], gauss: &[f64]) {
        match &self.basis {
            None => {
                for i in 0..mu.len() {
                    mu[i] = self.decay[i] * mu[i] + self.noise_sd[i] * gauss[i];
                }
            }
            Some(q) => {
                let n = mu.len();
                let mut nu = [0.0; MAX_MODULATION_DIM];
                for (i, v) in nu.iter_mut().enumerate().take(n) {
                    let projected: f64 = (0..n).map(|r| q[(r, i)] * mu[r]).sum();
                    *v = self.decay[i] * projected + self.noise_sd[i] * gauss[i];
                }
                to_original(Some(q), &nu[..n], mu);
            }
        }
    }

    pub fn decay(&self) -> &[f64] {
        &self.decay
    }

    pub fn noise_sd(&self) -> &[f64] {
        &self.noise_sd
    }
}

fn to_original(basis: Option<&DMatrix<f64>>, nu: &[f64], out: &mut [f64]) {
    match basis {
        None => out.copy_from_slice(nu),
        Some(q) => {
            for (r, o) in out.iter_mut().enumerate() {
                *o = nu.iter().enumerate().map(|(i, v)| q[(r, i)] * v).sum();
            }
        }
    }
}

fn in_original_basis(basis: Option<&DMatrix<f64>>, diag: &[f64]) -> DMatrix<f64> {
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag));
    match basis {
        None => d,
        Some(q) => q * d * q.transpose(),
    }
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    is_diagonal_within(m, 0.0)
}

fn is_diagonal_within(m: &DMatrix<f64>, tol: f64) -> bool {
    m.iter()
        .enumerate()
        .all(|(idx, v)| idx % m.nrows() == idx / m.nrows() || v.abs() <= tol)
}

fn is_symmetric(m: &DMatrix<f64>, scale: f64) -> bool {
    (m - m.transpose()).amax() <= 1e-12 * scale
}
