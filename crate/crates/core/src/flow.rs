//! Spatially periodic structure matrices `F(x)`.
//!
//! A velocity field is `v(x, t) = F(x) mu(t)` where `F(x)` is a `d x n` matrix
//! and `mu` is the modulation process. Every flow kind here is a finite real
//! Fourier sum, so values and spatial derivatives are evaluated in closed form.
//!
//! Matrices are stored column-major: entry `(row a, column j)` lives at
//! `a + d * j`.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowKind {
    TaylorGreen,
    StreamFunctionFourier,
    CoefficientTable,
}

/// One real Fourier mode `amplitude * cos(2 pi k . (x / L) + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierMode {
    pub wavevector: Vec<i32>,
    pub amplitude: f64,
    pub phase: f64,
}

impl FourierMode {
    pub fn new(wavevector: Vec<i32>, amplitude: f64, phase: f64) -> Self {
        Self {
            wavevector,
            amplitude,
            phase,
        }
    }
}

/// A Fourier term contributing to a single entry of `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableTerm {
    pub row: usize,
    pub column: usize,
    pub mode: FourierMode,
}

/// A mode compiled against the period: `arg = kappa . wrap(x) + phase`, and
/// each listed entry receives `c_cos cos(arg) + c_sin sin(arg)`.
#[derive(Debug, Clone)]
struct CompiledMode {
    kappa: Vec<f64>,
    phase: f64,
    contributions: Vec<(usize, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct FlowField {
    kind: FlowKind,
    dim_d: usize,
    dim_n: usize,
    period: Vec<f64>,
    stream_modes: Vec<Vec<FourierMode>>,
    table: Vec<TableTerm>,
    amplitude: f64,
    compiled: Vec<CompiledMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParityReport {
    pub passes: bool,
    pub max_violation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DivergenceReport {
    pub passes: bool,
    pub max_divergence: f64,
}

impl FlowField {
    /// `psi(x) = sin(x1) sin(x2)` on the `2 pi`-periodic cell, one modulation component.
    pub fn taylor_green() -> Self {
        // sin(x1) sin(x2) = cos(x1 - x2)/2 - cos(x1 + x2)/2
        let modes = vec![
            FourierMode::new(vec![1, -1], 0.5, 0.0),
            FourierMode::new(vec![1, 1], -0.5, 0.0),
        ];
        let mut flow = Self::stream_function(vec![TAU, TAU], vec![modes], 1.0)
            .expect("Taylor-Green modes are well formed");
        flow.kind = FlowKind::TaylorGreen;
        flow
    }

    /// Flow with column `j` equal to the skew gradient of `psi_j`, where
    /// `psi_j` is the Fourier sum `modes[j]`. Only defined for `d = 2`.
    pub fn stream_function(
        period: Vec<f64>,
        modes: Vec<Vec<FourierMode>>,
        amplitude: f64,
    ) -> Result<Self> {
        if period.len() != 2 {
            return Err(Error::invalid(
                "period",
                "stream-function flows need exactly two spatial dimensions",
            ));
        }
        check_period(&period)?;
        check_amplitude(amplitude)?;
        if modes.is_empty() {
            return Err(Error::invalid("modes", "at least one column is required"));
        }
        let dim_n = modes.len();
        let mut compiled = Vec::new();
        for (column, column_modes) in modes.iter().enumerate() {
            for mode in column_modes {
                check_mode(mode, 2)?;
                let kappa = scaled_wavevector(&mode.wavevector, &period);
                // psi = a cos(arg): d psi/dx_l = -a kappa_l sin(arg)
                // F(0, j) = -d psi/dx_2, F(1, j) = d psi/dx_1
                let a = mode.amplitude;
                compiled.push(CompiledMode {
                    contributions: vec![
                        (2 * column, 0.0, a * kappa[1]),
                        (1 + 2 * column, 0.0, -a * kappa[0]),
                    ],
                    kappa,
                    phase: mode.phase,
                });
            }
        }
        Ok(Self {
            kind: FlowKind::StreamFunctionFourier,
            dim_d: 2,
            dim_n,
            period,
            stream_modes: modes,
            table: Vec::new(),
            amplitude,
            compiled,
        })
    }

    /// Flow given entry-by-entry as Fourier sums. Not necessarily divergence free.
    pub fn coefficient_table(
        dim_d: usize,
        dim_n: usize,
        period: Vec<f64>,
        terms: Vec<TableTerm>,
        amplitude: f64,
    ) -> Result<Self> {
        if dim_d == 0 || dim_n == 0 {
            return Err(Error::invalid("dim", "dimensions must be positive"));
        }
        if period.len() != dim_d {
            return Err(Error::DimensionMismatch {
                expected: dim_d,
                got: period.len(),
            });
        }
        check_period(&period)?;
        check_amplitude(amplitude)?;
        let mut compiled = Vec::with_capacity(terms.len());
        for term in &terms {
            if term.row >= dim_d || term.column >= dim_n {
                return Err(Error::invalid(
                    "terms",
                    format!(
                        "entry ({}, {}) outside a {}x{} matrix",
                        term.row, term.column, dim_d, dim_n
                    ),
                ));
            }
            check_mode(&term.mode, dim_d)?;
            compiled.push(CompiledMode {
                kappa: scaled_wavevector(&term.mode.wavevector, &period),
                phase: term.mode.phase,
                contributions: vec![(term.row + dim_d * term.column, term.mode.amplitude, 0.0)],
            });
        }
        Ok(Self {
            kind: FlowKind::CoefficientTable,
            dim_d,
            dim_n,
            period,
            stream_modes: Vec::new(),
            table: terms,
            amplitude,
            compiled,
        })
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Result<Self> {
        check_amplitude(amplitude)?;
        self.amplitude = amplitude;
        Ok(self)
    }

    pub fn kind(&self) -> FlowKind {
        self.kind
    }

    pub fn dim_d(&self) -> usize {
        self.dim_d
    }

    pub fn dim_n(&self) -> usize {
        self.dim_n
    }

    pub fn period(&self) -> &[f64] {
        &self.period
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn stream_modes(&self) -> &[Vec<FourierMode>] {
        &self.stream_modes
    }

    pub fn table(&self) -> &[TableTerm] {
        &self.table
    }

    /// True when the columns are skew gradients, hence divergence free.
    pub fn is_incompressible_by_construction(&self) -> bool {
        !matches!(self.kind, FlowKind::CoefficientTable)
    }

    /// Wrap a coordinate into `[0, period)`.
    #[inline]
    pub fn wrap(&self, axis: usize, x: f64) -> f64 {
        let l = self.period[axis];
        if (0.0..l).contains(&x) {
            return x;
        }
        // floor-based reduction is several times cheaper than fmod
        let w = x - l * (x / l).floor();
        if (0.0..l).contains(&w) {
            w
        } else {
            0.0
        }
    }

    /// `F(z)` as a `d x n` matrix.
    pub fn eval_f(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(z)?;
        let mut out = vec![0.0; self.dim_d * self.dim_n];
        self.eval_into(z, &mut out);
        Ok(DMatrix::from_vec(self.dim_d, self.dim_n, out))
    }

    /// Column-major `F(z)` written into `out` (length `d * n`). No checks.
    #[inline]
    pub fn eval_into(&self, z: &[f64], out: &mut [f64]) {
        if self.amplitude == 0.0 {
            out.fill(0.0);
            return;
        }
        match self.kind {
            FlowKind::TaylorGreen => {
                let (s1, c1) = self.wrap(0, z[0]).sin_cos();
                let (s2, c2) = self.wrap(1, z[1]).sin_cos();
                out[0] = -s1 * c2;
                out[1] = c1 * s2;
            }
            _ => {
                out.fill(0.0);
                for mode in &self.compiled {
                    let mut arg = mode.phase;
                    for (axis, k) in mode.kappa.iter().enumerate() {
                        if *k != 0.0 {
                            arg += k * self.wrap(axis, z[axis]);
                        }
                    }
                    let (s, c) = arg.sin_cos();
                    for &(entry, c_cos, c_sin) in &mode.contributions {
                        out[entry] += c_cos * c + c_sin * s;
                    }
                }
            }
        }
        for v in out.iter_mut() {
            *v *= self.amplitude;
        }
    }

    /// Spatial derivatives: `out[(a + d j) + d n l] = dF_{aj}/dx_l`.
    pub fn gradient_into(&self, z: &[f64], out: &mut [f64]) {
        let d = self.dim_d;
        let dn = d * self.dim_n;
        out.fill(0.0);
        if self.amplitude == 0.0 {
            return;
        }
        match self.kind {
            FlowKind::TaylorGreen => {
                let (s1, c1) = self.wrap(0, z[0]).sin_cos();
                let (s2, c2) = self.wrap(1, z[1]).sin_cos();
                // F = (-s1 c2, c1 s2)
                out[0] = -c1 * c2;
                out[1] = -s1 * s2;
                out[dn] = s1 * s2;
                out[1 + dn] = c1 * c2;
            }
            _ => {
                for mode in &self.compiled {
                    let mut arg = mode.phase;
                    for (axis, k) in mode.kappa.iter().enumerate() {
                        if *k != 0.0 {
                            arg += k * self.wrap(axis, z[axis]);
                        }
                    }
                    let (s, c) = arg.sin_cos();
                    for &(entry, c_cos, c_sin) in &mode.contributions {
                        let slope = -c_cos * s + c_sin * c;
                        for (axis, k) in mode.kappa.iter().enumerate() {
                            out[entry + dn * axis] += slope * k;
                        }
                    }
                }
            }
        }
        for v in out.iter_mut() {
            *v *= self.amplitude;
        }
    }

    /// Jacobian `D(F(z) mu)` with respect to `z`, a `d x d` matrix.
    pub fn velocity_jacobian(&self, z: &[f64], mu: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(z)?;
        if mu.len() != self.dim_n {
            return Err(Error::DimensionMismatch {
                expected: self.dim_n,
                got: mu.len(),
            });
        }
        let d = self.dim_d;
        let dn = d * self.dim_n;
        let mut grad = vec![0.0; dn * d];
        self.gradient_into(z, &mut grad);
        Ok(DMatrix::from_fn(d, d, |a, l| {
            (0..self.dim_n)
                .map(|j| grad[a + d * j + dn * l] * mu[j])
                .sum()
        }))
    }

    /// Largest operator 2-norm of `F` over a uniform grid of the cell.
    pub fn sup_norm(&self, grid_per_axis: usize) -> f64 {
        let mut best: f64 = 0.0;
        for point in self.grid_points(grid_per_axis.max(2)) {
            let f = self
                .eval_f(&point)
                .expect("grid points have the flow dimension");
            let norm = f.svd(false, false).singular_values.max();
            best = best.max(norm);
        }
        best
    }

    /// Checks `F(-z) = -F(z)` at quasi-random points spread over `[-L, L]^d`.
    pub fn check_parity(&self, samples: usize, tol: f64) -> ParityReport {
        let d = self.dim_d;
        let mut plus = vec![0.0; d * self.dim_n];
        let mut minus = plus.clone();
        let mut z = vec![0.0; d];
        let mut neg = vec![0.0; d];
        let mut max_violation: f64 = 0.0;
        for i in 0..samples.max(1) {
            for axis in 0..d {
                let h = halton(i as u64 + 1, PRIMES[axis % PRIMES.len()]);
                z[axis] = (2.0 * h - 1.0) * self.period[axis];
                neg[axis] = -z[axis];
            }
            self.eval_into(&z, &mut plus);
            self.eval_into(&neg, &mut minus);
            for (p, m) in plus.iter().zip(&minus) {
                max_violation = max_violation.max((p + m).abs());
            }
        }
        ParityReport {
            passes: max_violation <= tol,
            max_violation,
        }
    }

    /// Largest absolute divergence of any column over a uniform grid, using the
    /// fourth-order central stencil with step `period / grid_per_axis`.
    pub fn check_divergence_free(&self, grid_per_axis: usize, tol: f64) -> Result<DivergenceReport> {
        if grid_per_axis < 4 {
            return Err(Error::invalid("grid_per_axis", "must be at least 4"));
        }
        let d = self.dim_d;
        let n = self.dim_n;
        let mut buf = vec![0.0; d * n];
        let mut shifted = vec![0.0; d];
        let mut div = vec![0.0; n];
        let mut max_divergence: f64 = 0.0;
        for point in self.grid_points(grid_per_axis) {
            div.fill(0.0);
            for axis in 0..d {
                let h = self.period[axis] / grid_per_axis as f64;
                for (offset, weight) in [(2.0, -1.0), (1.0, 8.0), (-1.0, -8.0), (-2.0, 1.0)] {
                    shifted.copy_from_slice(&point);
                    shifted[axis] += offset * h;
                    self.eval_into(&shifted, &mut buf);
                    for (j, dj) in div.iter_mut().enumerate() {
                        *dj += weight * buf[axis + d * j] / (12.0 * h);
                    }
                }
            }
            for dj in &div {
                max_divergence = max_divergence.max(dj.abs());
            }
        }
        Ok(DivergenceReport {
            passes: max_divergence <= tol,
            max_divergence,
        })
    }

    fn grid_points(&self, grid_per_axis: usize) -> Vec<Vec<f64>> {
        let d = self.dim_d;
        let total = grid_per_axis.pow(d as u32);
        (0..total)
            .map(|mut idx| {
                (0..d)
                    .map(|axis| {
                        let i = idx % grid_per_axis;
                        idx /= grid_per_axis;
                        self.period[axis] * i as f64 / grid_per_axis as f64
                    })
                    .collect()
            })
            .collect()
    }

    fn check_point(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim_d {
            return Err(Error::DimensionMismatch {
                expected: self.dim_d,
                got: z.len(),
            });
        }
        Ok(())
    }
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Radical inverse of `index` in `base` (Halton sequence coordinate).
fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

fn scaled_wavevector(k: &[i32], period: &[f64]) -> Vec<f64> {
    k.iter()
        .zip(period)
        .map(|(&ki, &l)| 2.0 * PI * ki as f64 / l)
        .collect()
}

fn check_period(period: &[f64]) -> Result<()> {
    if period.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::invalid("period", "components must be finite and positive"));
    }
    Ok(())
}

fn check_amplitude(amplitude: f64) -> Result<()> {
    if !amplitude.is_finite() {
        return Err(Error::invalid("amplitude", "must be finite"));
    }
    Ok(())
}

fn check_mode(mode: &FourierMode, dim: usize) -> Result<()> {
    if mode.wavevector.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: mode.wavevector.len(),
        });
    }
    if !(mode.amplitude.is_finite() && mode.phase.is_finite()) {
        return Err(Error::invalid("modes", "amplitude and phase must be finite"));
    }
    Ok(())
}
