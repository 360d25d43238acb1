//! Single-particle time stepping.
//!
//! Four models share one state layout:
//!
//! | kind              | equations                                                    |
//! |-------------------|--------------------------------------------------------------|
//! | colored inertial  | `tau x'' = F(x) mu - x' + sigma xi`, `mu` an OU process      |
//! | white inertial    | `tau x'' = F(x) A^-1 sqrt(Lambda) zeta - x' + sigma xi`      |
//! | colored tracer    | `x' = F(x) mu + sigma xi`                                    |
//! | white tracer      | `x' = F(x) A^-1 sqrt(Lambda) o zeta + sigma xi` (Stratonovich) |
//!
//! Positions are Euler–Maruyama (Heun for the white tracer), the modulation is
//! advanced with its exact transition. Every step consumes `d + n` standard
//! normals: the first `d` drive the molecular noise, the remaining `n` drive
//! the modulation (or the white velocity noise).

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::ou::{OuProcess, OuTransition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    ColoredInertial,
    WhiteInertial,
    ColoredTracer,
    WhiteTracer,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::ColoredInertial,
        ModelKind::WhiteInertial,
        ModelKind::ColoredTracer,
        ModelKind::WhiteTracer,
    ];

    pub fn is_inertial(self) -> bool {
        matches!(self, ModelKind::ColoredInertial | ModelKind::WhiteInertial)
    }

    pub fn is_colored(self) -> bool {
        matches!(self, ModelKind::ColoredInertial | ModelKind::ColoredTracer)
    }

    /// Colored <-> white counterpart with the same inertia.
    pub fn partner(self) -> Self {
        match self {
            ModelKind::ColoredInertial => ModelKind::WhiteInertial,
            ModelKind::WhiteInertial => ModelKind::ColoredInertial,
            ModelKind::ColoredTracer => ModelKind::WhiteTracer,
            ModelKind::WhiteTracer => ModelKind::ColoredTracer,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ColoredInertial => "colored-inertial",
            ModelKind::WhiteInertial => "white-inertial",
            ModelKind::ColoredTracer => "colored-tracer",
            ModelKind::WhiteTracer => "white-tracer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Stochastic interpretation of the white-noise tracer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TracerScheme {
    /// Heun predictor–corrector; the limit of smooth (colored) forcing.
    #[default]
    Stratonovich,
    /// Plain Euler–Maruyama.
    Ito,
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub tau: f64,
    pub sigma: f64,
    pub flow: FlowField,
    pub ou: OuProcess,
    pub tracer_scheme: TracerScheme,
}

impl ModelParams {
    pub fn new(kind: ModelKind, tau: f64, sigma: f64, flow: FlowField, ou: OuProcess) -> Result<Self> {
        if flow.dim_n() != ou.dim() {
            return Err(Error::DimensionMismatch {
                expected: flow.dim_n(),
                got: ou.dim(),
            });
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::invalid("sigma", "must be finite and non-negative"));
        }
        let tau = if kind.is_inertial() {
            if !(tau.is_finite() && tau > 0.0) {
                return Err(Error::invalid("tau", "inertial models need tau > 0"));
            }
            tau
        } else {
            0.0
        };
        Ok(Self {
            kind,
            tau,
            sigma,
            flow,
            ou,
            tracer_scheme: TracerScheme::default(),
        })
    }

    pub fn with_tracer_scheme(mut self, scheme: TracerScheme) -> Self {
        self.tracer_scheme = scheme;
        self
    }

    pub fn dim_d(&self) -> usize {
        self.flow.dim_d()
    }

    pub fn dim_n(&self) -> usize {
        self.flow.dim_n()
    }

    /// Standard normals consumed per step.
    pub fn draws_per_step(&self) -> usize {
        self.dim_d() + self.dim_n()
    }

    /// Largest step for which the frozen-coefficient coupling is trusted.
    pub fn dt_max(&self) -> f64 {
        let delta = self.ou.delta();
        match self.kind {
            ModelKind::ColoredInertial => self.tau.min(delta) / 20.0,
            ModelKind::WhiteInertial => self.tau / 20.0,
            ModelKind::ColoredTracer => delta / 20.0,
            ModelKind::WhiteTracer => f64::INFINITY,
        }
    }

    /// Free-particle molecular diffusivity `sigma^2 / 2`.
    pub fn molecular_diffusivity(&self) -> f64 {
        0.5 * self.sigma * self.sigma
    }

    /// One-line parameter summary for diagnostics.
    pub fn echo(&self) -> String {
        let p = self.ou.params();
        format!(
            "kind={} tau={} sigma={} flow={:?} amplitude={} A={:?} Lambda={:?} delta={}",
            self.kind.name(),
            self.tau,
            self.sigma,
            self.flow.kind(),
            self.flow.amplitude(),
            p.a.as_slice(),
            p.lambda.as_slice(),
            p.delta
        )
    }
}

/// Unwrapped position, velocity (empty for tracers) and modulation state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub mu: Vec<f64>,
}

impl ParticleState {
    pub fn new(x: Vec<f64>, u: Vec<f64>, mu: Vec<f64>) -> Self {
        Self { x, u, mu }
    }

    pub fn is_finite(&self) -> bool {
        self.x
            .iter()
            .chain(&self.u)
            .chain(&self.mu)
            .all(|v| v.is_finite())
    }

    fn check_shape(&self, m: &ModelParams) -> Result<()> {
        let d = m.dim_d();
        let expected_u = if m.kind.is_inertial() { d } else { 0 };
        for (expected, got) in [(d, self.x.len()), (expected_u, self.u.len()), (m.dim_n(), self.mu.len())] {
            if expected != got {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        Ok(())
    }
}

/// Per-worker scratch buffers.
#[derive(Debug, Clone)]
pub struct Scratch {
    f: Vec<f64>,
    g: Vec<f64>,
    g_predicted: Vec<f64>,
    predictor: Vec<f64>,
}

impl Scratch {
    pub fn new(m: &ModelParams) -> Self {
        let d = m.dim_d();
        let n = m.dim_n();
        Self {
            f: vec![0.0; d * n],
            g: vec![0.0; d * n],
            g_predicted: vec![0.0; d * n],
            predictor: vec![0.0; d],
        }
    }
}

/// Step coefficients for one model and step size, shared by all particles.
#[derive(Debug, Clone)]
pub struct Integrator<'a> {
    model: &'a ModelParams,
    dt: f64,
    sqrt_dt: f64,
    dt_over_tau: f64,
    /// `sigma sqrt(dt) / tau` for inertial kinds, `sigma sqrt(dt)` for tracers.
    molecular: f64,
    ou: OuTransition,
}

impl<'a> Integrator<'a> {
    pub fn new(model: &'a ModelParams, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("dt", "must be finite and positive"));
        }
        let sqrt_dt = dt.sqrt();
        let (dt_over_tau, molecular) = if model.kind.is_inertial() {
            (dt / model.tau, model.sigma * sqrt_dt / model.tau)
        } else {
            (0.0, model.sigma * sqrt_dt)
        };
        Ok(Self {
            model,
            dt,
            sqrt_dt,
            dt_over_tau,
            molecular,
            ou: model.ou.transition(dt)?,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advance with the scheme of `model.kind`.
    #[inline]
    pub fn advance(&self, s: &mut ParticleState, draws: &[f64], scratch: &mut Scratch) -> Result<()> {
        match self.model.kind {
            ModelKind::ColoredInertial => self.colored_inertial(s, draws, scratch),
            ModelKind::WhiteInertial => self.white_inertial(s, draws, scratch),
            ModelKind::ColoredTracer => self.colored_tracer(s, draws, scratch),
            ModelKind::WhiteTracer => match self.model.tracer_scheme {
                TracerScheme::Stratonovich => self.white_tracer_heun(s, draws, scratch),
                TracerScheme::Ito => self.white_tracer_euler(s, draws, scratch),
            },
        }
        if s.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                what: "particle state after step".into(),
            })
        }
    }

    #[inline]
    fn colored_inertial(&self, s: &mut ParticleState, draws: &[f64], scratch: &mut Scratch) {
        let d = s.x.len();
        let flow = &self.model.flow;
        flow.eval_into(&s.x, &mut scratch.f);
        for a in 0..d {
            let v = velocity(&scratch.f, &s.mu, a, d);
            let u = s.u[a];
            s.x[a] += u * self.dt;
            s.u[a] = u + self.dt_over_tau * (v - u) + self.molecular * draws[a];
        }
        self.ou.apply(&mut s.mu, &draws[d..]);
    }

    #[inline]
    fn white_inertial(&self, s: &mut ParticleState, draws: &[f64], scratch: &mut Scratch) {
        let d = s.x.len();
        self.white_gain_into(&s.x, &mut scratch.f, &mut scratch.g);
        let gain = self.sqrt_dt / self.model.tau;
        for a in 0..d {
            let kick = velocity(&scratch.g, &draws[d..], a, d);
            let u = s.u[a];
            s.x[a] += u * self.dt;
            s.u[a] = u - self.dt_over_tau * u + gain * kick + self.molecular * draws[a];
        }
    }

    #[inline]
    fn colored_tracer(&self, s: &mut ParticleState, draws: &[f64], scratch: &mut Scratch) {
        let d = s.x.len();
        self.model.flow.eval_into(&s.x, &mut scratch.f);
        for a in 0..d {
            let v = velocity(&scratch.f, &s.mu, a, d);
            s.x[a] += v * self.dt + self.molecular * draws[a];
        }
        self.ou.apply(&mut s.mu, &draws[d..]);
    }

    fn white_tracer_euler(&self, s: &mut ParticleState, draws: &[f64], scratch: &mut Scratch) {
        let d = s.x.len();
        self.white_gain_into(&s.x, &mut scratch.f, &mut scratch.g);
        for a in 0..d {
            let kick = self.sqrt_dt * velocity(&scratch.g, &draws[d..], a, d);
            s.x[a] += kick + self.molecular * draws[a];
        }
    }

    fn white_tracer_heun(&self, s: &mut ParticleState, draws: &[f64], scratch: &mut Scratch) {
        let d = s.x.len();
        let n = s.mu.len();
        self.white_gain_into(&s.x, &mut scratch.f, &mut scratch.g);
        for a in 0..d {
            let kick = self.sqrt_dt * velocity(&scratch.g, &draws[d..], a, d);
            scratch.predictor[a] = s.x[a] + kick + self.molecular * draws[a];
        }
        self.white_gain_into(&scratch.predictor, &mut scratch.f, &mut scratch.g_predicted);
        for a in 0..d {
            let mut kick = 0.0;
            for j in 0..n {
                let averaged = 0.5 * (scratch.g[a + d * j] + scratch.g_predicted[a + d * j]);
                kick += averaged * draws[d + j];
            }
            s.x[a] += self.sqrt_dt * kick + self.molecular * draws[a];
        }
    }

    /// `G(x) = F(x) A^-1 sqrt(Lambda)` into `out`, with `f` as scratch for `F(x)`.
    #[inline]
    fn white_gain_into(&self, x: &[f64], f: &mut [f64], out: &mut [f64]) {
        let d = x.len();
        let n = self.model.dim_n();
        let w = self.model.ou.white_gain();
        self.model.flow.eval_into(x, f);
        for j in 0..n {
            for a in 0..d {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += f[a + d * k] * w[(k, j)];
                }
                out[a + d * j] = acc;
            }
        }
    }
}

/// Row `a` of a column-major `d x n` matrix times `v`.
#[inline]
fn velocity(m: &[f64], v: &[f64], a: usize, d: usize) -> f64 {
    let mut acc = 0.0;
    for (j, vj) in v.iter().enumerate() {
        acc += m[a + d * j] * vj;
    }
    acc
}

fn checked_step(
    s: &ParticleState,
    dt: f64,
    m: &ModelParams,
    kind: ModelKind,
    draws: &[f64],
) -> Result<ParticleState> {
    if kind.is_inertial() != m.kind.is_inertial() {
        return Err(Error::invalid("kind", "state layout does not match the model"));
    }
    s.check_shape(m)?;
    if draws.len() != m.draws_per_step() {
        return Err(Error::DimensionMismatch {
            expected: m.draws_per_step(),
            got: draws.len(),
        });
    }
    if !s.is_finite() {
        return Err(Error::NonFinite {
            what: "particle state before step".into(),
        });
    }
    let mut model = m.clone();
    model.kind = kind;
    let integrator = Integrator::new(&model, dt)?;
    let mut next = s.clone();
    let mut scratch = Scratch::new(&model);
    integrator.advance(&mut next, draws, &mut scratch)?;
    Ok(next)
}

/// One step with the scheme selected by `m.kind`.
pub fn step(s: &ParticleState, dt: f64, m: &ModelParams, draws: &[f64]) -> Result<ParticleState> {
    checked_step(s, dt, m, m.kind, draws)
}

pub fn colored_inertial_step(s: &ParticleState, dt: f64, m: &ModelParams, draws: &[f64]) -> Result<ParticleState> {
    checked_step(s, dt, m, ModelKind::ColoredInertial, draws)
}

pub fn white_inertial_step(s: &ParticleState, dt: f64, m: &ModelParams, draws: &[f64]) -> Result<ParticleState> {
    checked_step(s, dt, m, ModelKind::WhiteInertial, draws)
}

pub fn colored_tracer_step(s: &ParticleState, dt: f64, m: &ModelParams, draws: &[f64]) -> Result<ParticleState> {
    checked_step(s, dt, m, ModelKind::ColoredTracer, draws)
}

/// Uses `m.tracer_scheme` (Heun/Stratonovich by default).
pub fn white_tracer_step(s: &ParticleState, dt: f64, m: &ModelParams, draws: &[f64]) -> Result<ParticleState> {
    checked_step(s, dt, m, ModelKind::WhiteTracer, draws)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RankReport {
    pub rank: usize,
    pub dimension: usize,
    pub full: bool,
}

/// Span of the noise directions of the `(z, y, mu)` system and their images
/// under repeated application of the drift Jacobian
///
/// ```text
/// J = [ 0        I      0   ]
///     [ DF/tau  -I/tau  F/tau ]
///     [ 0        0     -A   ]
/// ```
///
/// evaluated at `(z, mu)`. Full rank `2d + n` means the bracket condition holds there.
pub fn check_hypoellipticity_rank(m: &ModelParams, z: &[f64], mu: &[f64]) -> Result<RankReport> {
    if !m.kind.is_inertial() {
        return Err(Error::invalid("kind", "the rank check needs an inertial model"));
    }
    let d = m.dim_d();
    let n = m.dim_n();
    let dim = 2 * d + n;
    let f = m.flow.eval_f(z)?;
    let df = m.flow.velocity_jacobian(z, mu)?;
    let tau = m.tau;
    let a = &m.ou.params().a;

    let mut jac = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..d {
        jac[(i, d + i)] = 1.0;
        jac[(d + i, d + i)] = -1.0 / tau;
        for l in 0..d {
            jac[(d + i, l)] = df[(i, l)] / tau;
        }
        for j in 0..n {
            jac[(d + i, 2 * d + j)] = f[(i, j)] / tau;
        }
    }
    for r in 0..n {
        for c in 0..n {
            jac[(2 * d + r, 2 * d + c)] = -a[(r, c)];
        }
    }

    let sqrt_lambda = m.ou.sqrt_lambda();
    let mut noise = DMatrix::<f64>::zeros(dim, d + n);
    for i in 0..d {
        noise[(d + i, i)] = m.sigma / tau;
    }
    for r in 0..n {
        for c in 0..n {
            noise[(2 * d + r, d + c)] = sqrt_lambda[(r, c)];
        }
    }

    let mut columns: Vec<nalgebra::DVector<f64>> = Vec::new();
    let mut block = noise;
    for _ in 0..dim {
        for col in block.column_iter() {
            let norm = col.norm();
            if norm > 0.0 && norm.is_finite() {
                columns.push(col / norm);
            }
        }
        block = &jac * block;
    }
    let rank = if columns.is_empty() {
        0
    } else {
        let krylov = DMatrix::from_columns(&columns);
        let svd = SVD::new(krylov, false, false);
        let largest = svd.singular_values.max();
        svd.singular_values
            .iter()
            .filter(|s| **s > 1e-9 * largest)
            .count()
    };
    Ok(RankReport {
        rank,
        dimension: dim,
        full: rank == dim,
    })
}
