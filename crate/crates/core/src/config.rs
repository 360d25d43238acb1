//! TOML run configuration.
//!
//! Physical parameters are decimals written either as strings or TOML
//! numbers; the original text is kept so the resolved configuration echoed
//! into every output reproduces the input exactly. Unknown keys are errors.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::diffusivity::{window_len, DEFAULT_WINDOW_FRACTION, MIN_WINDOW_POINTS};
use crate::dynamics::{ModelKind, ModelParams, TracerScheme};
use crate::ensemble::{default_checkpoints, InitialModulation, InitialPlacement, RunConfig, DEFAULT_CHECKPOINTS};
use crate::error::{Error, Result};
use crate::flow::{FlowField, FlowKind, FourierMode, TableTerm};
use crate::limits::{SweepAxis, SweepSpec, WhiteNoiseStudy};
use crate::ou::{OuParams, OuProcess};

pub const DEFAULT_BOOTSTRAP_REPS: usize = 1000;

/// A decimal number that remembers how it was written.
#[derive(Debug, Clone, PartialEq)]
pub struct Decimal {
    text: String,
    value: f64,
}

impl Decimal {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl From<f64> for Decimal {
    fn from(value: f64) -> Self {
        Self {
            text: value.to_string(),
            value,
        }
    }
}

impl FromStr for Decimal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let text = s.trim();
        match text.parse::<f64>() {
            Ok(value) if value.is_finite() => Ok(Self {
                text: text.to_string(),
                value,
            }),
            _ => Err(Error::Config(format!("`{s}` is not a finite decimal number"))),
        }
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Int(i64),
            Float(f64),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Text(s) => s,
            Raw::Int(i) => i.to_string(),
            Raw::Float(f) => f.to_string(),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(Decimal),
    Many(Vec<Decimal>),
}

impl OneOrMany {
    fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(d) => vec![d.value()],
            OneOrMany::Many(v) => v.iter().map(Decimal::value).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Decimal>,
    pub sigma: Decimal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracer_scheme: Option<TracerScheme>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub wavevector: Vec<i32>,
    pub amplitude: Decimal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Decimal>,
}

impl ModeSpec {
    fn mode(&self) -> FourierMode {
        FourierMode::new(
            self.wavevector.clone(),
            self.amplitude.value(),
            self.phase.as_ref().map_or(0.0, Decimal::value),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub row: usize,
    pub column: usize,
    pub wavevector: Vec<i32>,
    pub amplitude: Decimal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Decimal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub kind: FlowKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<Decimal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<Vec<Decimal>>,
    /// Stream-function modes, one list per column of `F`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<Vec<ModeSpec>>>,
    /// Coefficient-table entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<Vec<TermSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuSection {
    /// Diagonal of `A`.
    pub alpha: OneOrMany,
    /// Noise amplitudes; `Lambda = diag(lambda^2)`.
    pub lambda: OneOrMany,
    pub delta: Decimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub particles: usize,
    pub dt: Decimal,
    pub t_final: Decimal,
    #[serde(default)]
    pub seed: u64,
    /// Number of geometric checkpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<usize>,
    /// Explicit checkpoint times; overrides `checkpoints`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_times: Option<Vec<Decimal>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_fraction: Option<Decimal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<InitialPlacement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_modulation: Option<InitialModulation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_dump: Option<usize>,
    /// Reduced size applied by `--desk-scale`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub desk_particles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub desk_t_final: Option<Decimal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    #[default]
    Parametric,
    WhiteNoiseLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub start: Decimal,
    pub stop: Decimal,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub axis: SweepAxis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Decimal>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logspace: Option<RangeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linspace: Option<RangeSpec>,
}

impl AxisSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        let name = self.axis.name();
        let spaced = |r: &RangeSpec, log: bool| -> Result<Vec<f64>> {
            let (a, b) = (r.start.value(), r.stop.value());
            if r.points < 2 || (log && (a <= 0.0 || b <= 0.0)) {
                return Err(Error::Config(format!(
                    "sweep axis `{name}`: a range needs at least 2 points{}",
                    if log { " and positive bounds" } else { "" }
                )));
            }
            let step = |i: usize| i as f64 / (r.points - 1) as f64;
            Ok((0..r.points)
                .map(|i| {
                    if log {
                        // base 10 keeps decade values exact
                        10f64.powf(a.log10() + (b.log10() - a.log10()) * step(i))
                    } else {
                        a + (b - a) * step(i)
                    }
                })
                .collect())
        };
        match (&self.values, &self.logspace, &self.linspace) {
            (Some(v), None, None) => Ok(v.iter().map(Decimal::value).collect()),
            (None, Some(r), None) => spaced(r, true),
            (None, None, Some(r)) => spaced(r, false),
            _ => Err(Error::Config(format!(
                "sweep axis `{name}`: give exactly one of values, logspace, linspace"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub study: Study,
    #[serde(default)]
    pub paired: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kinds: Option<Vec<ModelKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_reps: Option<usize>,
    #[serde(default)]
    pub axes: Vec<AxisSpec>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// File stem for outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: Option<ModelSection>,
    pub flow: Option<FlowSection>,
    pub ou: Option<OuSection>,
    pub run: Option<RunSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

/// Command-line style overrides, applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub particles: Option<usize>,
    pub dt: Option<Decimal>,
    pub t_final: Option<Decimal>,
    pub out_dir: Option<String>,
    pub desk_scale: bool,
}

fn missing(section: &str) -> Error {
    Error::Config(format!("missing [{section}] section"))
}

impl ConfigFile {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks that the four required sections are present.
    pub fn require_sections(&self) -> Result<()> {
        self.model.as_ref().ok_or_else(|| missing("model"))?;
        self.flow.as_ref().ok_or_else(|| missing("flow"))?;
        self.ou.as_ref().ok_or_else(|| missing("ou"))?;
        self.run.as_ref().ok_or_else(|| missing("run"))?;
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        let run = self.run.as_mut().ok_or_else(|| missing("run"))?;
        if o.desk_scale {
            if let Some(n) = run.desk_particles {
                run.particles = n;
            }
            if let Some(t) = run.desk_t_final.clone() {
                run.t_final = t;
            }
        }
        if let Some(seed) = o.seed {
            run.seed = seed;
        }
        if let Some(n) = o.particles {
            run.particles = n;
        }
        if let Some(dt) = &o.dt {
            run.dt = dt.clone();
        }
        if let Some(t) = &o.t_final {
            run.t_final = t.clone();
        }
        if let Some(dir) = &o.out_dir {
            self.output.get_or_insert_with(OutputSection::default).dir = Some(dir.clone());
        }
        Ok(())
    }

    pub fn flow_field(&self) -> Result<FlowField> {
        let f = self.flow.as_ref().ok_or_else(|| missing("flow"))?;
        let amplitude = f.amplitude.as_ref().map_or(1.0, Decimal::value);
        let period = |d: usize| -> Vec<f64> {
            f.period
                .as_ref()
                .map(|p| p.iter().map(Decimal::value).collect())
                .unwrap_or_else(|| vec![std::f64::consts::TAU; d])
        };
        match f.kind {
            FlowKind::TaylorGreen => {
                if f.modes.is_some() || f.terms.is_some() || f.period.is_some() {
                    return Err(Error::Config(
                        "[flow] taylor-green takes only `amplitude`".into(),
                    ));
                }
                FlowField::taylor_green().with_amplitude(amplitude)
            }
            FlowKind::StreamFunctionFourier => {
                let modes = f
                    .modes
                    .as_ref()
                    .ok_or_else(|| Error::Config("[flow] stream-function-fourier needs `modes`".into()))?;
                let modes = modes.iter().map(|col| col.iter().map(ModeSpec::mode).collect()).collect();
                FlowField::stream_function(period(2), modes, amplitude)
            }
            FlowKind::CoefficientTable => {
                let (Some(d), Some(n), Some(terms)) = (f.d, f.n, f.terms.as_ref()) else {
                    return Err(Error::Config(
                        "[flow] coefficient-table needs `d`, `n` and `terms`".into(),
                    ));
                };
                let terms = terms
                    .iter()
                    .map(|t| TableTerm {
                        row: t.row,
                        column: t.column,
                        mode: FourierMode::new(
                            t.wavevector.clone(),
                            t.amplitude.value(),
                            t.phase.as_ref().map_or(0.0, Decimal::value),
                        ),
                    })
                    .collect();
                FlowField::coefficient_table(d, n, period(d), terms, amplitude)
            }
        }
    }

    pub fn ou_process(&self) -> Result<OuProcess> {
        let o = self.ou.as_ref().ok_or_else(|| missing("ou"))?;
        let alphas = o.alpha.values();
        let lambdas = o.lambda.values();
        if alphas.len() != lambdas.len() {
            return Err(Error::Config("[ou] alpha and lambda must have the same length".into()));
        }
        let params = OuParams {
            a: DMatrix::from_diagonal(&alphas.into()),
            lambda: DMatrix::from_diagonal(&lambdas.iter().map(|l| l * l).collect::<Vec<_>>().into()),
            delta: o.delta.value(),
        };
        OuProcess::new(params)
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        let m = self.model.as_ref().ok_or_else(|| missing("model"))?;
        let tau = m.tau.as_ref().map_or(0.0, Decimal::value);
        let model = ModelParams::new(m.kind, tau, m.sigma.value(), self.flow_field()?, self.ou_process()?)?;
        Ok(model.with_tracer_scheme(m.tracer_scheme.unwrap_or_default()))
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let r = self.run.as_ref().ok_or_else(|| missing("run"))?;
        let mut cfg = RunConfig::new(
            self.model_params()?,
            r.particles,
            r.dt.value(),
            r.t_final.value(),
            r.seed,
        );
        cfg.checkpoints = match &r.checkpoint_times {
            Some(t) => t.iter().map(Decimal::value).collect(),
            None => default_checkpoints(cfg.t_final, r.checkpoints.unwrap_or(DEFAULT_CHECKPOINTS)),
        };
        cfg.placement = r.placement.unwrap_or_default();
        cfg.modulation = r.initial_modulation.unwrap_or_default();
        cfg.trajectory_dump = r.trajectory_dump.unwrap_or(0);
        cfg.validate()?;
        let times: Vec<f64> = cfg.checkpoint_steps().iter().map(|s| *s as f64 * cfg.dt).collect();
        let found = window_len(&times, self.window_fraction());
        if found < MIN_WINDOW_POINTS {
            return Err(Error::Config(format!(
                "the estimation window holds {found} checkpoints, at least {MIN_WINDOW_POINTS} are required; \
                 add checkpoints or raise window_fraction"
            )));
        }
        Ok(cfg)
    }

    pub fn window_fraction(&self) -> f64 {
        self.run
            .as_ref()
            .and_then(|r| r.window_fraction.as_ref())
            .map_or(DEFAULT_WINDOW_FRACTION, Decimal::value)
    }

    pub fn output_dir(&self) -> String {
        self.output
            .as_ref()
            .and_then(|o| o.dir.clone())
            .unwrap_or_else(|| "out".into())
    }

    pub fn output_name(&self) -> String {
        self.output
            .as_ref()
            .and_then(|o| o.name.clone())
            .unwrap_or_else(|| "effdiff".into())
    }

    fn sweep_section(&self) -> Result<&SweepSection> {
        let s = self.sweep.as_ref().ok_or_else(|| missing("sweep"))?;
        if s.axes.is_empty() {
            return Err(Error::Config("[sweep] axis list is empty".into()));
        }
        Ok(s)
    }

    pub fn study(&self) -> Result<Study> {
        Ok(self.sweep_section()?.study)
    }

    /// One spec per configured axis.
    pub fn sweep_specs(&self, workers: usize) -> Result<Vec<SweepSpec>> {
        let s = self.sweep_section()?;
        let base = self.run_config()?;
        s.axes
            .iter()
            .map(|axis| {
                Ok(SweepSpec {
                    base: base.clone(),
                    axis: axis.axis,
                    values: axis.values()?,
                    paired: s.paired,
                    kinds: s.kinds.clone(),
                    window_fraction: self.window_fraction(),
                    workers,
                })
            })
            .collect()
    }

    pub fn white_noise_study(&self, workers: usize) -> Result<WhiteNoiseStudy> {
        let s = self.sweep_section()?;
        let [axis] = s.axes.as_slice() else {
            return Err(Error::Config("white-noise-limit study takes exactly one axis".into()));
        };
        if axis.axis != SweepAxis::Delta {
            return Err(Error::Config("white-noise-limit study sweeps `delta`".into()));
        }
        Ok(WhiteNoiseStudy {
            base: self.run_config()?,
            deltas: axis.values()?,
            window_fraction: self.window_fraction(),
            workers,
            bootstrap_reps: s.bootstrap_reps.unwrap_or(DEFAULT_BOOTSTRAP_REPS),
        })
    }
}
