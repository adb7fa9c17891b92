//! Configuration-driven batch front end: task dispatch, CSV/JSON artifact
//! emission and the reproducibility manifest.
//!
//! Exit codes: 0 success, 1 validation error, 2 numeric failure (NaN or a
//! certification/oracle threshold breach). The manifest is written next to
//! the results whenever the output directory is known, including on numeric
//! failure; it contains no timestamps or worker counts, so reruns with the
//! same `(config, seed)` are byte-identical at any parallelism.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, TaskSpec};
use crate::consumption::{certify, control_mean_table, optimal_control, CertifyOptions};
use crate::error::{Error, Result};
use crate::forward::performance;
use crate::malliavin::run_oracle_suite;
use crate::principle::{gateaux_fd, gateaux_via_y};
use crate::resolvent::ResolventTable;

/// Format a float with 17 significant decimal digits (round-trip safe,
/// locale independent).
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Write a CSV file: header row from the schema, `\n` line endings, floats
/// already formatted by the caller. Empty row sets produce a header-only
/// file.
pub fn emit_csv(path: &Path, schema: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&schema.join(","));
    out.push('\n');
    for row in rows {
        if row.len() != schema.len() {
            return Err(Error::invalid(format!(
                "row width {} does not match schema width {}",
                row.len(),
                schema.len()
            )));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Manifest {
    config_sha256: String,
    seed: u64,
    package: &'static str,
    version: &'static str,
    task: String,
    outputs: Vec<String>,
    status: &'static str,
}

/// Options resolved from the command line.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config_path: PathBuf,
    /// Worker threads; `None` uses the rayon default. Affects wall-clock
    /// only, never results.
    pub workers: Option<usize>,
    /// Overrides the config's `output_dir`.
    pub out_dir: Option<PathBuf>,
    /// When launched via a named subcommand, the task id it must match.
    pub expected_task: Option<String>,
}

/// Execute a config end to end; returns the process exit code.
pub fn run(options: &RunOptions) -> i32 {
    let raw = match fs::read(&options.config_path) {
        Ok(raw) => raw,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", options.config_path.display());
            return 1;
        }
    };
    let config_sha256 = hex_digest(&raw);
    let config = match serde_json::from_slice::<ExperimentConfig>(&raw) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: config parse: {e}");
            return 1;
        }
    };
    let out_dir = options
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output_dir));

    let seed = match effective_seed(&config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };

    let mut manifest = Manifest {
        config_sha256,
        seed,
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        task: config.task.name().to_string(),
        outputs: Vec::new(),
        status: "ok",
    };

    if let Some(expected) = &options.expected_task {
        if expected != config.task.name() {
            eprintln!(
                "error: task: subcommand `{expected}` does not match config task `{}`",
                config.task.name()
            );
            manifest.status = "validation_error";
            let _ = write_manifest(&out_dir, &manifest);
            return 1;
        }
    }
    if let Err(e) = config.validate() {
        eprintln!("error: {e}");
        manifest.status = "validation_error";
        let _ = write_manifest(&out_dir, &manifest);
        return 1;
    }
    if let Err(e) = fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return 1;
    }

    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: worker pool: {e}");
            return 1;
        }
    };
    let outcome = pool.install(|| execute_task(&config, seed, &out_dir));
    match outcome {
        Ok(TaskOutcome { outputs, numeric_ok }) => {
            manifest.outputs = outputs;
            manifest.status = if numeric_ok { "ok" } else { "numeric_failure" };
            if let Err(e) = write_manifest(&out_dir, &manifest) {
                eprintln!("error: manifest: {e}");
                return 2;
            }
            if numeric_ok {
                0
            } else {
                eprintln!("error: numeric thresholds breached; see reports in {}", out_dir.display());
                2
            }
        }
        Err(e) => {
            let code = match &e {
                Error::Config { .. } | Error::InvalidArgument(_) => 1,
                _ => 2,
            };
            eprintln!("error: {e}");
            manifest.status = if code == 1 {
                "validation_error"
            } else {
                "numeric_failure"
            };
            let _ = write_manifest(&out_dir, &manifest);
            code
        }
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// `VOLTERRA_SEED` overrides the config seed.
fn effective_seed(config: &ExperimentConfig) -> Result<u64> {
    match std::env::var("VOLTERRA_SEED") {
        Ok(raw) => raw.parse::<u64>().map_err(|_| {
            Error::config("VOLTERRA_SEED", format!("not a valid seed: {raw:?}"))
        }),
        Err(_) => Ok(config.monte_carlo.base_seed as u64),
    }
}

fn write_manifest(out_dir: &Path, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("manifest.json"), manifest)
}

struct TaskOutcome {
    outputs: Vec<String>,
    numeric_ok: bool,
}

fn execute_task(config: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<TaskOutcome> {
    let grid = config.grid_instance()?;
    let model = config.model_instance();
    let n_paths = config.monte_carlo.n_paths as u64;
    let mut outputs = Vec::new();
    let mut numeric_ok = true;

    match &config.task {
        TaskSpec::Simulate { control } => {
            let coeffs = model.coefficients();
            let ctrl = control.build(&model, &grid)?;
            let est = performance(&coeffs, &ctrl, &grid, &model.levy, n_paths, seed)?;
            let rows = vec![vec![
                n_paths.to_string(),
                fmt_float(est.value),
                fmt_float(est.std_error),
            ]];
            let path = out_dir.join("performance.csv");
            emit_csv(&path, &["n_paths", "j_estimate", "std_error"], &rows)?;
            outputs.push("performance.csv".into());
        }
        TaskSpec::Resolvent { tol } => {
            let b0 = model.b0;
            let table = ResolventTable::build(
                &move |t, s| b0.eval(t, s),
                b0.sup_abs(model.horizon),
                &grid,
                *tol,
            )?;
            let mut rows = Vec::new();
            for i in 0..=grid.steps() {
                for j in i..=grid.steps() {
                    rows.push(vec![
                        fmt_float(grid.node(i)),
                        fmt_float(grid.node(j)),
                        fmt_float(table.psi(i, j)),
                        table.truncation_order.to_string(),
                        fmt_float(table.tail_bound),
                    ]);
                }
            }
            let path = out_dir.join("psi.csv");
            emit_csv(&path, &["t", "delta", "psi", "n_star", "tail_bound"], &rows)?;
            outputs.push("psi.csv".into());
        }
        TaskSpec::Demo {
            u_min,
            u_max,
            info_mode,
            tol,
            certify: certify_options,
        } => {
            let u_hat = optimal_control(&model, *info_mode, &grid, *tol, (*u_min, *u_max))?;
            let table = control_mean_table(&u_hat, &grid, &model.levy, n_paths.min(20_000), seed)?;
            let rows: Vec<Vec<String>> = table
                .iter()
                .enumerate()
                .map(|(i, est)| {
                    vec![
                        fmt_float(grid.node(i)),
                        fmt_float(est.value),
                        fmt_float(est.std_error),
                    ]
                })
                .collect();
            emit_csv(&out_dir.join("u_hat.csv"), &["t", "u_hat", "se"], &rows)?;
            outputs.push("u_hat.csv".into());

            let options = certify_options
                .clone()
                .unwrap_or_else(|| CertifyOptions::for_horizon(model.horizon));
            let report = certify(&model, &u_hat, &grid, n_paths, seed, &options)?;

            let scan_rows: Vec<Vec<String>> = report
                .scan
                .iter()
                .map(|r| vec![fmt_float(r.kappa), fmt_float(r.j), fmt_float(r.se)])
                .collect();
            emit_csv(&out_dir.join("scan.csv"), &["kappa", "J", "se"], &scan_rows)?;
            outputs.push("scan.csv".into());

            let residual_rows: Vec<Vec<String>> = report
                .residuals
                .iter()
                .map(|r| vec![fmt_float(r.t), fmt_float(r.value), fmt_float(r.se)])
                .collect();
            emit_csv(
                &out_dir.join("residuals.csv"),
                &["t", "residual", "se"],
                &residual_rows,
            )?;
            outputs.push("residuals.csv".into());

            write_json(&out_dir.join("certify.json"), &report)?;
            outputs.push("certify.json".into());
            numeric_ok = report.pass;
        }
        TaskSpec::Perturb {
            control,
            perturbations,
            lambdas,
        } => {
            let coeffs = model.coefficients();
            let ctrl = control.build(&model, &grid)?;
            let mut rows = Vec::new();
            for pert in perturbations {
                let via_y =
                    gateaux_via_y(&coeffs, &ctrl, pert, &grid, &model.levy, n_paths, seed)?;
                for &lambda in lambdas {
                    let fd = gateaux_fd(
                        &coeffs,
                        &ctrl,
                        pert,
                        lambda,
                        &grid,
                        &model.levy,
                        n_paths,
                        seed,
                    )?;
                    // se column: combined error of the two routes
                    let se = (fd.estimate.std_error.powi(2) + via_y.std_error.powi(2)).sqrt();
                    rows.push(vec![
                        fmt_float(pert.start),
                        fmt_float(pert.width),
                        fmt_float(pert.eta),
                        fmt_float(lambda),
                        fmt_float(fd.estimate.value),
                        fmt_float(via_y.value),
                        fmt_float(se),
                    ]);
                }
            }
            let path = out_dir.join("perturb.csv");
            emit_csv(
                &path,
                &["t", "h", "eta", "lambda", "fd_estimate", "y_estimate", "se"],
                &rows,
            )?;
            outputs.push("perturb.csv".into());
        }
        TaskSpec::Check { refinement_steps } => {
            let steps: Vec<usize> = refinement_steps.iter().map(|s| *s as usize).collect();
            let report = run_oracle_suite(&grid, &model.levy, &steps, n_paths, seed)?;
            write_json(&out_dir.join("check.json"), &report)?;
            outputs.push("check.json".into());
            numeric_ok = report.pass;
        }
        TaskSpec::Certify { control, options } => {
            let ctrl = control.build(&model, &grid)?;
            let options = options
                .clone()
                .unwrap_or_else(|| CertifyOptions::for_horizon(model.horizon));
            let report = certify(&model, &ctrl, &grid, n_paths, seed, &options)?;
            write_json(&out_dir.join("certify.json"), &report)?;
            outputs.push("certify.json".into());
            numeric_ok = report.pass;
        }
    }
    Ok(TaskOutcome {
        outputs,
        numeric_ok,
    })
}
