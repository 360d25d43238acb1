//! CSV and JSON output.
//!
//! Estimate columns, in order:
//!
//! ```text
//! kind, tau, sigma, alpha, lambda, delta, particles, dt, t_final, seed,
//! K11, K12, .., Kdd, se11, .., sedd, V1, .., Vd, seV1, .., seVd,
//! t_lo, t_hi, slope_diag, free_ref
//! ```
//!
//! Sweep rows prepend `axis, value` and append `status` (`ok` or the error).
//! With several modulation modes, `alpha` and `lambda` list the diagonal
//! separated by `;`. Numbers use the shortest representation that round-trips.

use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};

use crate::diffusivity::DiffusivityEstimate;
use crate::dynamics::ModelParams;
use crate::ensemble::RunConfig;
use crate::error::{Error, Result};
use crate::limits::{SweepTable, WhiteNoiseLimitReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn estimate_columns(d: usize) -> Vec<String> {
    let mut cols: Vec<String> = [
        "kind", "tau", "sigma", "alpha", "lambda", "delta", "particles", "dt", "t_final", "seed",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for prefix in ["K", "se"] {
        for a in 1..=d {
            for b in 1..=d {
                cols.push(format!("{prefix}{a}{b}"));
            }
        }
    }
    for prefix in ["V", "seV"] {
        cols.extend((1..=d).map(|a| format!("{prefix}{a}")));
    }
    cols.extend(["t_lo", "t_hi", "slope_diag", "free_ref"].map(String::from));
    cols
}

pub fn sweep_columns(d: usize) -> Vec<String> {
    let mut cols = vec!["axis".to_string(), "value".to_string()];
    cols.extend(estimate_columns(d));
    cols.push("status".into());
    cols
}

fn joined(v: impl Iterator<Item = f64>) -> String {
    v.map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn parameter_fields(m: &ModelParams, cfg: &RunConfig) -> Vec<String> {
    let p = m.ou.params();
    vec![
        m.kind.name().to_string(),
        m.tau.to_string(),
        m.sigma.to_string(),
        joined(p.a.diagonal().iter().copied()),
        joined(p.lambda.diagonal().iter().map(|l| l.sqrt())),
        p.delta.to_string(),
        cfg.particles.to_string(),
        cfg.dt.to_string(),
        cfg.t_final.to_string(),
        cfg.seed.to_string(),
    ]
}

fn estimate_fields(e: &DiffusivityEstimate) -> Vec<String> {
    let d = e.dim();
    let mut out = Vec::new();
    for m in [&e.k, &e.stderr] {
        for a in 0..d {
            for b in 0..d {
                out.push(m[(a, b)].to_string());
            }
        }
    }
    out.extend(e.drift.v.iter().map(f64::to_string));
    out.extend(e.drift.stderr.iter().map(f64::to_string));
    out.extend([e.t_lo, e.t_hi, e.slope_diag].map(|v| v.to_string()));
    out
}

/// One estimate row.
pub fn estimate_row(cfg: &RunConfig, e: &DiffusivityEstimate) -> Vec<String> {
    let mut row = parameter_fields(&cfg.model, cfg);
    row.extend(estimate_fields(e));
    row.push(cfg.model.molecular_diffusivity().to_string());
    row
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

fn write_csv(out: impl Write, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn estimate_csv(cfg: &RunConfig, e: &DiffusivityEstimate) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, &estimate_columns(e.dim()), &[estimate_row(cfg, e)])?;
    Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
}

pub fn sweep_csv(base: &RunConfig, table: &SweepTable) -> Result<String> {
    let d = base.model.dim_d();
    let width = estimate_columns(d).len();
    let rows: Vec<Vec<String>> = table
        .points
        .iter()
        .map(|p| {
            let mut row = vec![p.axis.name().to_string(), p.value.to_string()];
            let mut cfg = base.clone();
            match (&p.model, &p.estimate) {
                (Some(m), Ok(e)) => {
                    cfg.model = m.clone();
                    row.extend(estimate_row(&cfg, e));
                    row.push("ok".into());
                }
                (model, result) => {
                    if let Some(m) = model {
                        cfg.model = m.clone();
                    }
                    let mut fields = parameter_fields(&cfg.model, &cfg);
                    fields[0] = p.kind.name().to_string();
                    fields.resize(width - 1, String::new());
                    fields.push(p.free_ref.to_string());
                    row.extend(fields);
                    row.push(match result {
                        Err(msg) => msg.clone(),
                        Ok(_) => "error: model could not be built".into(),
                    });
                }
            }
            row
        })
        .collect();
    let mut buf = Vec::new();
    write_csv(&mut buf, &sweep_columns(d), &rows)?;
    Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
}

pub const WHITE_NOISE_COLUMNS: [&str; 8] =
    ["delta", "k_colored", "se_colored", "k_white", "se_white", "diff", "se_diff", "resolved"];

pub fn white_noise_csv(report: &WhiteNoiseLimitReport) -> Result<String> {
    let header: Vec<String> = WHITE_NOISE_COLUMNS.iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = report
        .points
        .iter()
        .map(|p| {
            vec![
                p.delta.to_string(),
                p.k_colored.to_string(),
                p.se_colored.to_string(),
                report.k_white.to_string(),
                report.se_white.to_string(),
                p.diff.to_string(),
                p.se_diff.to_string(),
                p.resolved.to_string(),
            ]
        })
        .collect();
    let mut buf = Vec::new();
    write_csv(&mut buf, &header, &rows)?;
    Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Value {
    Value::from(
        (0..m.nrows())
            .map(|a| (0..m.ncols()).map(|b| m[(a, b)]).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    )
}

/// JSON summary of one estimate (series omitted).
pub fn estimate_json(e: &DiffusivityEstimate) -> Value {
    json!({
        "K": matrix_rows(&e.k),
        "K_sym": matrix_rows(&e.k_sym),
        "stderr": matrix_rows(&e.stderr),
        "drift_V": e.drift.v,
        "drift_stderr": e.drift.stderr,
        "drift_flagged": e.drift.flagged,
        "window": [e.t_lo, e.t_hi],
        "window_points": e.points,
        "particles": e.particles,
        "slope_diag": e.slope_diag,
    })
}

/// Metadata block embedded in every JSON output.
pub fn metadata(config_echo: &str, seed: u64, wall_clock_seconds: f64, warnings: &[String]) -> Value {
    json!({
        "version": VERSION,
        "seed": seed,
        "wall_clock_seconds": wall_clock_seconds,
        "warnings": warnings,
        "config": config_echo,
    })
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}
