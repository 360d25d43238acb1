//! `effdiff`: simulate, sweep and validate effective-diffusivity models.
//!
//! Exit codes: 0 success, 1 a hard validation check failed, 2 configuration
//! error, 3 numerical failure.

mod presets;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use effdiff_core::config::{ConfigFile, Decimal, Overrides, Study};
use effdiff_core::diffusivity::estimate_k;
use effdiff_core::ensemble::run_ensemble;
use effdiff_core::limits::{run_sweep, white_noise_limit_study};
use effdiff_core::report;
use effdiff_core::verify;
use effdiff_core::Error;

#[derive(Parser)]
#[command(name = "effdiff", version, about = "Effective diffusivity of inertial particles in modulated cellular flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one ensemble and estimate K.
    Simulate(Common),
    /// Run the parameter sweep or white-noise-limit study in [sweep].
    Sweep(Common),
    /// Check flow, hypoellipticity, Lyapunov and centering properties.
    Validate(Common),
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, env = "EFFDIFF_CONFIG", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration by name (see `effdiff presets`).
    #[arg(long, env = "EFFDIFF_PRESET")]
    preset: Option<String>,
    #[arg(long, env = "EFFDIFF_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "EFFDIFF_PARTICLES")]
    particles: Option<usize>,
    #[arg(long, env = "EFFDIFF_DT")]
    dt: Option<String>,
    #[arg(long, env = "EFFDIFF_T_FINAL")]
    t_final: Option<String>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, env = "EFFDIFF_WORKERS")]
    workers: Option<usize>,
    #[arg(long, env = "EFFDIFF_OUT_DIR")]
    out_dir: Option<String>,
    /// Use the reduced particle count and horizon given in [run].
    #[arg(long, env = "EFFDIFF_DESK_SCALE")]
    desk_scale: bool,
}

/// Error with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_config_error() || matches!(e, Error::Io(_)) { 2 } else { 3 };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

struct Loaded {
    file: ConfigFile,
    echo: String,
    workers: usize,
    out_dir: PathBuf,
    name: String,
}

fn load(c: &Common) -> Result<Loaded, Failure> {
    let text = match (&c.config, &c.preset) {
        (Some(path), _) => std::fs::read_to_string(path)
            .map_err(|e| config_failure(format!("cannot read {}: {e}", path.display())))?,
        (None, Some(name)) => presets::get(name)
            .ok_or_else(|| config_failure(format!("unknown preset `{name}`")))?
            .to_string(),
        (None, None) => return Err(config_failure("one of --config or --preset is required")),
    };
    let mut file = ConfigFile::from_toml_str(&text)?;
    file.require_sections()?;
    let parse = |s: &Option<String>| s.as_deref().map(str::parse::<Decimal>).transpose();
    file.apply(&Overrides {
        seed: c.seed,
        particles: c.particles,
        dt: parse(&c.dt)?,
        t_final: parse(&c.t_final)?,
        out_dir: c.out_dir.clone(),
        desk_scale: c.desk_scale,
    })?;
    let workers = c
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(config_failure("--workers must be at least 1"));
    }
    Ok(Loaded {
        echo: file.to_toml()?,
        out_dir: PathBuf::from(file.output_dir()),
        name: file.output_name(),
        file,
        workers,
    })
}

fn write_json(path: &Path, value: &Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    report::write_file(path, &(text + "\n"))?;
    Ok(())
}

fn simulate(c: &Common) -> Result<u8, Failure> {
    let l = load(c)?;
    let cfg = l.file.run_config()?;
    let start = Instant::now();
    let run = run_ensemble(&cfg, l.workers)?;
    let est = estimate_k(&run.stats, l.file.window_fraction())?;
    let wall = start.elapsed().as_secs_f64();

    let csv = report::estimate_csv(&cfg, &est)?;
    report::write_file(&l.out_dir.join(format!("{}.csv", l.name)), &csv)?;
    report::write_file(&l.out_dir.join(format!("{}.stats.json", l.name)), &run.stats.to_json()?)?;

    let symmetry = if est.dim() == 2 {
        serde_json::to_value(verify::symmetry_check(&est)?).map_err(Error::from)?
    } else {
        Value::Null
    };
    let series: Vec<Value> = est
        .series
        .iter()
        .map(|s| json!({ "t": s.t, "K": s.k.iter().collect::<Vec<_>>(), "stderr": s.stderr.iter().collect::<Vec<_>>() }))
        .collect();
    let mut summary = json!({
        "metadata": report::metadata(&l.echo, cfg.seed, wall, &run.warnings),
        "estimate": report::estimate_json(&est),
        "isotropic_K": est.isotropic().0,
        "isotropic_stderr": est.isotropic().1,
        "free_ref": cfg.model.molecular_diffusivity(),
        "symmetry": symmetry,
        "window_series": series,
    });
    if !run.trajectories.is_empty() {
        summary["trajectories"] = serde_json::to_value(&run.trajectories).map_err(Error::from)?;
    }
    write_json(&l.out_dir.join(format!("{}.json", l.name)), &summary)?;

    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
    let (k, se) = est.isotropic();
    println!(
        "{}: K11 = {} ± {}, K22 = {} ± {}, isotropic K = {k} ± {se} (free particle {})",
        cfg.model.kind.name(),
        est.k[(0, 0)],
        est.stderr[(0, 0)],
        est.k[(est.dim() - 1, est.dim() - 1)],
        est.stderr[(est.dim() - 1, est.dim() - 1)],
        cfg.model.molecular_diffusivity(),
    );
    println!("wrote {}", l.out_dir.join(format!("{}.csv", l.name)).display());
    Ok(0)
}

fn sweep(c: &Common) -> Result<u8, Failure> {
    let l = load(c)?;
    let start = Instant::now();
    match l.file.study()? {
        Study::Parametric => {
            let specs = l.file.sweep_specs(l.workers)?;
            let base = l.file.run_config()?;
            let mut points = Vec::new();
            let mut warnings = Vec::new();
            for spec in &specs {
                let table = run_sweep(spec)?;
                for p in &table.points {
                    match &p.estimate {
                        Ok(e) => println!(
                            "{} = {:<10} {:<16} K = {:.6e} ± {:.2e}",
                            p.axis.name(),
                            p.value,
                            p.kind.name(),
                            e.isotropic().0,
                            e.isotropic().1
                        ),
                        Err(msg) => println!("{} = {:<10} {:<16} failed: {msg}", p.axis.name(), p.value, p.kind.name()),
                    }
                    warnings.extend(p.warnings.iter().cloned());
                }
                points.push(table);
            }
            let mut csv = String::new();
            for (i, table) in points.iter().enumerate() {
                let part = report::sweep_csv(&base, table)?;
                // one header for the whole file
                csv.push_str(if i == 0 { &part } else { part.split_once('\n').map_or("", |p| p.1) });
            }
            report::write_file(&l.out_dir.join(format!("{}.sweep.csv", l.name)), &csv)?;
            warnings.sort();
            warnings.dedup();
            let failures = points.iter().flat_map(|t| &t.points).filter(|p| p.estimate.is_err()).count();
            let summary = json!({
                "metadata": report::metadata(&l.echo, base.seed, start.elapsed().as_secs_f64(), &warnings),
                "common_random_numbers": true,
                "note": "every grid point reuses the master seed (common random numbers)",
                "points": points.iter().map(|t| t.points.len()).sum::<usize>(),
                "failed_points": failures,
            });
            write_json(&l.out_dir.join(format!("{}.sweep.json", l.name)), &summary)?;
            println!("wrote {}", l.out_dir.join(format!("{}.sweep.csv", l.name)).display());
        }
        Study::WhiteNoiseLimit => {
            let study = l.file.white_noise_study(l.workers)?;
            let result = white_noise_limit_study(&study)?;
            report::write_file(
                &l.out_dir.join(format!("{}.white-noise.csv", l.name)),
                &report::white_noise_csv(&result)?,
            )?;
            let summary = json!({
                "metadata": report::metadata(&l.echo, study.base.seed, start.elapsed().as_secs_f64(), &result.warnings),
                "common_random_numbers": true,
                "study": result,
            });
            write_json(&l.out_dir.join(format!("{}.white-noise.json", l.name)), &summary)?;
            println!("K_white = {:.6e} ± {:.2e}", result.k_white, result.se_white);
            for p in &result.points {
                println!("delta = {:<8} dK = {:+.3e} ± {:.2e}", p.delta, p.diff, p.se_diff);
            }
            println!("rate: {:?}", result.rate);
        }
    }
    Ok(0)
}

const LYAPUNOV_SAMPLES: usize = 10_000;
const LYAPUNOV_RADIUS: f64 = 1e3;

fn validate(c: &Common) -> Result<u8, Failure> {
    let l = load(c)?;
    let start = Instant::now();
    let model = l.file.model_params()?;
    let seed = l.file.run_config()?.seed;
    let mut hard = serde_json::Map::new();
    let mut soft = serde_json::Map::new();
    let mut ok = true;
    let mut record = |map: &mut serde_json::Map<String, Value>, name: &str, passes: bool, detail: Value, counts: bool| {
        println!("{:<6} {name}", if passes { "pass" } else if counts { "FAIL" } else { "note" });
        if counts && !passes {
            ok = false;
        }
        map.insert(name.into(), json!({ "passes": passes, "detail": detail }));
    };

    let div = model.flow.check_divergence_free(64, 1e-8)?;
    record(&mut hard, "divergence_free", div.passes, json!(div.max_divergence), true);

    if model.kind.is_inertial() {
        let rank = verify::hypoellipticity_survey(&model, 100, seed)?;
        record(&mut hard, "hypoellipticity", rank.all_full, serde_json::to_value(rank).map_err(Error::from)?, true);
    }
    if model.kind == effdiff_core::dynamics::ModelKind::ColoredInertial {
        let spec = verify::LyapunovSpec::from_model(&model);
        let lyap = verify::lyapunov_drift_check(&model, &spec, LYAPUNOV_SAMPLES, LYAPUNOV_RADIUS, seed)?;
        let agreement = verify::generator_agreement(&model, &spec, 100, LYAPUNOV_RADIUS, seed)?;
        let exists = lyap.fitted_beta.is_finite() && agreement.max_relative_error <= 1e-6;
        record(
            &mut hard,
            "lyapunov_existence",
            exists,
            json!({ "fitted_beta": lyap.fitted_beta, "generator_max_relative_error": agreement.max_relative_error }),
            true,
        );
        record(&mut soft, "lyapunov_printed_beta", lyap.passes && lyap.origin_value <= lyap.spec_beta, serde_json::to_value(lyap).map_err(Error::from)?, false);
        if model.sigma > 0.0 {
            let centering = verify::centering_check(&model, 1e-2_f64.min(model.dt_max()), 100.0, 2000.0, seed)?;
            record(&mut soft, "centering", centering.centered, serde_json::to_value(centering).map_err(Error::from)?, false);
        }
    }
    let parity = model.flow.check_parity(1000, 1e-12);
    record(&mut soft, "parity", parity.passes, json!(parity.max_violation), false);

    let summary = json!({
        "metadata": report::metadata(&l.echo, seed, start.elapsed().as_secs_f64(), &[]),
        "passes": ok,
        "hard": hard,
        "soft": soft,
    });
    write_json(&l.out_dir.join(format!("{}.validate.json", l.name)), &summary)?;
    Ok(if ok { 0 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Sweep(c) => sweep(c),
        Command::Validate(c) => validate(c),
        Command::Presets => {
            for name in presets::NAMES {
                println!("{name}");
            }
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
