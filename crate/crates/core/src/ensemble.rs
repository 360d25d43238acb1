//! Ensemble Monte Carlo with reproducible parallelism.
//!
//! Particle `i` draws from its own ChaCha8 stream: the key comes from the
//! master seed and the stream id is `i`, so a particle's noise does not depend
//! on which worker runs it. Particles are grouped into fixed blocks of
//! [`BLOCK_SIZE`]; each block is accumulated serially in particle order and
//! blocks are merged in block order. The reduction tree is therefore the same
//! for any worker count and the output is bit-identical.
//!
//! Only running sums of displacement moments are kept per checkpoint.
//! Displacements are measured from each particle's own starting point.
//!
//! Noise draw order per particle: `n` draws for the initial modulation (when
//! started from the stationary law), then `d + n` draws per step.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Integrator, ModelParams, ParticleState, Scratch};
use crate::error::{Error, Result};

pub const BLOCK_SIZE: usize = 32;
pub const MAX_TRAJECTORY_DUMP: usize = 16;
pub const DEFAULT_CHECKPOINTS: usize = 64;

/// Independent generator for particle `index` of the run seeded by `seed`.
pub fn particle_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CompensatedSum {
    pub hi: f64,
    pub lo: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.hi + v;
        if self.hi.abs() >= v.abs() {
            self.lo += (self.hi - t) + v;
        } else {
            self.lo += (v - t) + self.hi;
        }
        self.hi = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.hi);
        self.lo += other.lo;
    }

    pub fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialPlacement {
    /// Regular lattice over one periodic cell.
    #[default]
    Lattice,
    /// Every particle starts at the origin.
    Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialModulation {
    /// Drawn from the stationary law of the OU process.
    #[default]
    Stationary,
    /// Every component set to the given value; no draws consumed.
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelParams,
    pub particles: usize,
    pub dt: f64,
    pub t_final: f64,
    pub checkpoints: Vec<f64>,
    pub seed: u64,
    pub placement: InitialPlacement,
    pub modulation: InitialModulation,
    /// Number of particles (from index 0) whose positions are recorded.
    pub trajectory_dump: usize,
}

impl RunConfig {
    /// Config with the default checkpoint grid.
    pub fn new(model: ModelParams, particles: usize, dt: f64, t_final: f64, seed: u64) -> Self {
        Self {
            model,
            particles,
            dt,
            t_final,
            checkpoints: default_checkpoints(t_final, DEFAULT_CHECKPOINTS),
            seed,
            placement: InitialPlacement::default(),
            modulation: InitialModulation::default(),
            trajectory_dump: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::invalid("particles", "at least two particles are required"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("dt", "must be finite and positive"));
        }
        if !(self.t_final.is_finite() && self.t_final >= self.dt) {
            return Err(Error::invalid("t_final", "must be finite and at least dt"));
        }
        if self.checkpoints.is_empty() {
            return Err(Error::invalid("checkpoints", "at least one checkpoint is required"));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("checkpoints", "must be strictly increasing"));
        }
        if self.checkpoints[0] <= 0.0 || *self.checkpoints.last().unwrap() > self.t_final {
            return Err(Error::invalid("checkpoints", "must lie in (0, t_final]"));
        }
        if self.trajectory_dump > MAX_TRAJECTORY_DUMP {
            return Err(Error::invalid(
                "trajectory_dump",
                format!("at most {MAX_TRAJECTORY_DUMP} particles"),
            ));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        (self.t_final / self.dt).round() as u64
    }

    /// Checkpoint times snapped to the step grid, duplicates removed.
    pub fn checkpoint_steps(&self) -> Vec<u64> {
        let total = self.total_steps();
        let mut steps: Vec<u64> = self
            .checkpoints
            .iter()
            .map(|t| ((t / self.dt).round() as u64).clamp(1, total))
            .collect();
        steps.dedup();
        steps
    }

    /// Initial state of particle `index`; consumes the initial modulation draws.
    pub fn initial_state(&self, index: usize, rng: &mut impl Rng) -> ParticleState {
        let m = &self.model;
        let d = m.dim_d();
        let n = m.dim_n();
        let x = match self.placement {
            InitialPlacement::Point => vec![0.0; d],
            InitialPlacement::Lattice => lattice_point(index, self.particles, m.flow.period()),
        };
        let u = if m.kind.is_inertial() { vec![0.0; d] } else { Vec::new() };
        let mu = match self.modulation {
            InitialModulation::Fixed(v) => vec![v; n],
            InitialModulation::Stationary => {
                let gauss: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let mut mu = vec![0.0; n];
                m.ou.sample_stationary_into(&gauss, &mut mu);
                mu
            }
        };
        ParticleState::new(x, u, mu)
    }
}

/// `count` geometrically spaced times from `t_final / 100` to `t_final`.
pub fn default_checkpoints(t_final: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![t_final];
    }
    let start = t_final / 100.0;
    let ratio = (t_final / start).powf(1.0 / (count - 1) as f64);
    let mut times: Vec<f64> = (0..count).map(|i| start * ratio.powi(i as i32)).collect();
    times[count - 1] = t_final;
    times
}

fn lattice_point(index: usize, particles: usize, period: &[f64]) -> Vec<f64> {
    let d = period.len();
    let mut per_axis = 1usize;
    while per_axis.pow(d as u32) < particles {
        per_axis += 1;
    }
    let mut rest = index;
    period
        .iter()
        .map(|l| {
            let i = rest % per_axis;
            rest /= per_axis;
            l * (i as f64 + 0.5) / per_axis as f64
        })
        .collect()
}

/// Moment sums of the displacement `r` at one checkpoint. Matrices are
/// row-major `d x d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSums {
    pub count: u64,
    /// `sum r_a`
    pub sum_x: Vec<CompensatedSum>,
    /// `sum r_a r_b`
    pub sum_xx: Vec<CompensatedSum>,
    /// `sum r_a^2 r_b`
    pub sum_x2y: Vec<CompensatedSum>,
    /// `sum r_a^2 r_b^2`
    pub sum_x2y2: Vec<CompensatedSum>,
    /// `sum |u|^2` (zero for tracers)
    pub sum_u2: CompensatedSum,
}

impl CheckpointSums {
    fn empty(d: usize) -> Self {
        Self {
            count: 0,
            sum_x: vec![CompensatedSum::default(); d],
            sum_xx: vec![CompensatedSum::default(); d * d],
            sum_x2y: vec![CompensatedSum::default(); d * d],
            sum_x2y2: vec![CompensatedSum::default(); d * d],
            sum_u2: CompensatedSum::default(),
        }
    }

    fn push(&mut self, r: &[f64], u2: f64) {
        let d = r.len();
        self.count += 1;
        for a in 0..d {
            self.sum_x[a].add(r[a]);
            for b in 0..d {
                let idx = a * d + b;
                self.sum_xx[idx].add(r[a] * r[b]);
                self.sum_x2y[idx].add(r[a] * r[a] * r[b]);
                self.sum_x2y2[idx].add(r[a] * r[a] * r[b] * r[b]);
            }
        }
        self.sum_u2.add(u2);
    }

    fn merge(&mut self, other: &CheckpointSums) {
        self.count += other.count;
        for (lhs, rhs) in [
            (&mut self.sum_x, &other.sum_x),
            (&mut self.sum_xx, &other.sum_xx),
            (&mut self.sum_x2y, &other.sum_x2y),
            (&mut self.sum_x2y2, &other.sum_x2y2),
        ] {
            for (l, r) in lhs.iter_mut().zip(rhs) {
                l.merge(r);
            }
        }
        self.sum_u2.merge(&other.sum_u2);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub dim: usize,
    pub times: Vec<f64>,
    pub checkpoints: Vec<CheckpointSums>,
}

impl EnsembleStats {
    pub fn empty(dim: usize, times: Vec<f64>) -> Self {
        let checkpoints = times.iter().map(|_| CheckpointSums::empty(dim)).collect();
        Self {
            dim,
            times,
            checkpoints,
        }
    }

    /// Add one particle: `displacements` holds `d` values per checkpoint,
    /// `speed2` one `|u|^2` per checkpoint.
    pub fn push_particle(&mut self, displacements: &[f64], speed2: &[f64]) -> Result<()> {
        let d = self.dim;
        let c = self.times.len();
        if displacements.len() != c * d {
            return Err(Error::DimensionMismatch {
                expected: c * d,
                got: displacements.len(),
            });
        }
        if speed2.len() != c {
            return Err(Error::DimensionMismatch {
                expected: c,
                got: speed2.len(),
            });
        }
        for (i, sums) in self.checkpoints.iter_mut().enumerate() {
            sums.push(&displacements[i * d..(i + 1) * d], speed2[i]);
        }
        Ok(())
    }

    /// Component-wise sum; `other` is appended after `self` in the reduction order.
    pub fn merge(&self, other: &EnsembleStats) -> Result<EnsembleStats> {
        let mut out = self.clone();
        out.merge_in(other)?;
        Ok(out)
    }

    pub fn merge_in(&mut self, other: &EnsembleStats) -> Result<()> {
        if self.dim != other.dim || self.times != other.times {
            return Err(Error::GridMismatch);
        }
        for (l, r) in self.checkpoints.iter_mut().zip(&other.checkpoints) {
            l.merge(r);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn count(&self, i: usize) -> u64 {
        self.checkpoints[i].count
    }

    pub fn mean(&self, i: usize) -> Vec<f64> {
        let c = &self.checkpoints[i];
        let n = c.count as f64;
        c.sum_x.iter().map(|s| s.value() / n).collect()
    }

    /// Unbiased sample covariance of the displacement.
    pub fn covariance(&self, i: usize) -> DMatrix<f64> {
        let c = &self.checkpoints[i];
        let d = self.dim;
        let n = c.count as f64;
        let m = self.mean(i);
        DMatrix::from_fn(d, d, |a, b| {
            (c.sum_xx[a * d + b].value() - n * m[a] * m[b]) / (n - 1.0)
        })
    }

    /// Sampling variance of each covariance entry,
    /// `(E[(r_a - m_a)^2 (r_b - m_b)^2] - C_ab^2) / N`.
    pub fn covariance_variance(&self, i: usize) -> DMatrix<f64> {
        let c = &self.checkpoints[i];
        let d = self.dim;
        let n = c.count as f64;
        let m = self.mean(i);
        let e = |v: &CompensatedSum| v.value() / n;
        DMatrix::from_fn(d, d, |a, b| {
            let (ma, mb) = (m[a], m[b]);
            let e_ab = e(&c.sum_xx[a * d + b]);
            let e_aa = e(&c.sum_xx[a * d + a]);
            let e_bb = e(&c.sum_xx[b * d + b]);
            let e_a2b = e(&c.sum_x2y[a * d + b]);
            let e_ab2 = e(&c.sum_x2y[b * d + a]);
            let e_a2b2 = e(&c.sum_x2y2[a * d + b]);
            let fourth = e_a2b2 - 2.0 * mb * e_a2b - 2.0 * ma * e_ab2
                + mb * mb * e_aa
                + ma * ma * e_bb
                + 4.0 * ma * mb * e_ab
                - 3.0 * ma * ma * mb * mb;
            let cov = e_ab - ma * mb;
            (fourth - cov * cov).max(0.0) / n
        })
    }

    pub fn mean_speed2(&self, i: usize) -> f64 {
        let c = &self.checkpoints[i];
        c.sum_u2.value() / c.count as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub particle: usize,
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub stats: EnsembleStats,
    pub warnings: Vec<String>,
    pub trajectories: Vec<Trajectory>,
}

/// Step-size guard warnings for a config.
pub fn step_warnings(cfg: &RunConfig) -> Vec<String> {
    let dt_max = cfg.model.dt_max();
    if cfg.dt > dt_max {
        vec![format!(
            "dt = {} exceeds the recommended bound {} for {}",
            cfg.dt,
            dt_max,
            cfg.model.kind.name()
        )]
    } else {
        Vec::new()
    }
}

/// Simulate `cfg.particles` independent trajectories on `workers` threads.
pub fn run_ensemble(cfg: &RunConfig, workers: usize) -> Result<EnsembleRun> {
    cfg.validate()?;
    let steps = cfg.checkpoint_steps();
    let times: Vec<f64> = steps.iter().map(|s| *s as f64 * cfg.dt).collect();
    let integrator = Integrator::new(&cfg.model, cfg.dt)?;
    let blocks = cfg.particles.div_ceil(BLOCK_SIZE);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<(EnsembleStats, Vec<Trajectory>)>> = pool.install(|| {
        (0..blocks)
            .into_par_iter()
            .map(|b| simulate_block(cfg, &integrator, &steps, &times, b))
            .collect()
    });

    let mut stats = EnsembleStats::empty(cfg.model.dim_d(), times);
    let mut trajectories = Vec::new();
    for result in results {
        let (block, dumps) = result?;
        stats.merge_in(&block)?;
        trajectories.extend(dumps);
    }
    Ok(EnsembleRun {
        stats,
        warnings: step_warnings(cfg),
        trajectories,
    })
}

fn simulate_block(
    cfg: &RunConfig,
    integrator: &Integrator<'_>,
    steps: &[u64],
    times: &[f64],
    block: usize,
) -> Result<(EnsembleStats, Vec<Trajectory>)> {
    let d = cfg.model.dim_d();
    let draws_per_step = cfg.model.draws_per_step();
    let total = cfg.total_steps();
    let dump_stride = (total / 1000).max(1);
    let mut stats = EnsembleStats::empty(d, times.to_vec());
    let mut dumps = Vec::new();
    let mut scratch = Scratch::new(&cfg.model);
    let mut draws = vec![0.0; draws_per_step];
    let mut displacements = vec![0.0; steps.len() * d];
    let mut speed2 = vec![0.0; steps.len()];

    let first = block * BLOCK_SIZE;
    let last = (first + BLOCK_SIZE).min(cfg.particles);
    for particle in first..last {
        let mut rng = particle_rng(cfg.seed, particle as u64);
        let mut state = cfg.initial_state(particle, &mut rng);
        let origin = state.x.clone();
        let mut dump = (particle < cfg.trajectory_dump).then(|| Trajectory {
            particle,
            times: vec![0.0],
            positions: vec![origin.clone()],
        });
        let mut next = 0;
        for step in 1..=total {
            for g in draws.iter_mut() {
                *g = rng.sample(StandardNormal);
            }
            if let Err(e) = integrator.advance(&mut state, &draws, &mut scratch) {
                return Err(match e {
                    Error::NonFinite { .. } => Error::Trajectory {
                        particle,
                        step,
                        time: step as f64 * cfg.dt,
                        echo: cfg.model.echo(),
                    },
                    other => other,
                });
            }
            if next < steps.len() && step == steps[next] {
                for a in 0..d {
                    displacements[next * d + a] = state.x[a] - origin[a];
                }
                speed2[next] = state.u.iter().map(|v| v * v).sum();
                next += 1;
            }
            if let Some(t) = dump.as_mut() {
                if step % dump_stride == 0 {
                    t.times.push(step as f64 * cfg.dt);
                    t.positions.push(state.x.clone());
                }
            }
        }
        stats.push_particle(&displacements, &speed2)?;
        dumps.extend(dump);
    }
    Ok((stats, dumps))
}
