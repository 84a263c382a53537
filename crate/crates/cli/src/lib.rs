//! Library side of the `hte` command: configuration, the analysis pipeline
//! and thin wrappers over the simulation benchmark.

pub mod analyze;
pub mod config;

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use hte_core::simbench::{calibrate, run_benchmark, BenchmarkReport, Calibration, CalibrationParams};

pub use analyze::{analyze, cmd_analyze, write_report, AnalysisReport};
pub use config::{AppConfig, DEFAULT_SEED};

/// Runs the benchmark described by the config and writes the report directory.
pub fn cmd_benchmark(config: &AppConfig, seed: u64, fast: bool, out: &Path) -> Result<BenchmarkReport> {
    let mut bench = config.benchmark_config();
    if fast {
        bench = bench.fast();
    }
    let report = run_benchmark(&bench, seed).context("running benchmark")?;
    report.write_dir(out).with_context(|| format!("writing {}", out.display()))?;
    Ok(report)
}

/// Calibrates one scenario and writes the record as JSON.
pub fn cmd_calibrate(
    config: &AppConfig,
    scenario: u8,
    target_r2: Option<f64>,
    seed: u64,
    out: &Path,
) -> Result<Calibration> {
    let s = &config.simbench;
    let params = CalibrationParams {
        target_r2: target_r2.unwrap_or(s.calibration.target_r2),
        multipliers: s.multipliers.clone(),
        ..s.calibration.clone()
    };
    let record = calibrate(scenario, s.n, &params, &s.covariates, seed).context("calibrating scenario")?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, serde_json::to_string_pretty(&record)? + "\n").with_context(|| format!("writing {}", out.display()))?;
    Ok(record)
}

/// Runs `f` on a dedicated pool of `workers` threads (all cores when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        anyhow::ensure!(w > 0, "--workers must be at least 1");
        builder = builder.num_threads(w);
    }
    let pool = builder.build().context("building worker pool")?;
    Ok(pool.install(f))
}
