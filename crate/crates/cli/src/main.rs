use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use hte_cli::{cmd_analyze, cmd_benchmark, cmd_calibrate, with_workers, AppConfig, DEFAULT_SEED};
use hte_core::hettest::StatisticKind;

#[derive(Parser)]
#[command(name = "hte", version, about = "Treatment effect heterogeneity analysis with DR-learner pseudo-outcomes")]
struct Cli {
    /// Worker threads (defaults to all available cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stat {
    Max,
    Quad,
}

#[derive(Subcommand)]
enum Command {
    /// Global test, effect-modifier ranking and CATE for one dataset.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, value_enum)]
        stat: Option<Stat>,
        /// Cross-fitting folds.
        #[arg(long)]
        folds: Option<usize>,
        /// Level of the global test used to gate the ranking.
        #[arg(long)]
        alpha: Option<f64>,
        /// Number of top covariates given subgroup displays.
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Simulation benchmark over the configured scenarios and effect grid.
    Benchmark {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// 100 replicates of n = 200.
        #[arg(long)]
        fast: bool,
    },
    /// Calibrates s, beta1* and the beta0 table of one scenario.
    Calibrate {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        scenario: u8,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override of the control-arm R² used to scale the prognostic term.
        #[arg(long)]
        target_r2: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze { data, schema, config, out, seed, stat, folds, alpha, top_k } => {
            let mut cfg = AppConfig::load(config.as_deref())?;
            if let Some(s) = stat {
                cfg.test.settings.statistic = match s {
                    Stat::Max => StatisticKind::MaxType,
                    Stat::Quad => StatisticKind::Quadratic,
                };
            }
            if let Some(k) = folds {
                cfg.metalearner.folds = k;
            }
            if let Some(a) = alpha {
                cfg.test.alpha = a;
            }
            if let Some(k) = top_k {
                cfg.ranking.top_k = k;
            }
            let report = with_workers(cli.workers, || cmd_analyze(&data, &schema, &cfg, seed, &out))??;
            for w in &report.provenance.warnings {
                eprintln!("warning: {w}");
            }
            let t = &report.global_test;
            println!("global test p = {} ({})", t.result.p_value, t.conclusion);
            println!("top covariates: {}", report.ranking.top_k.join(", "));
            println!("report written to {}", out.display());
        }
        Command::Benchmark { config, out, seed, fast } => {
            let cfg = AppConfig::load(config.as_deref())?;
            let report = with_workers(cli.workers, || cmd_benchmark(&cfg, seed, fast, &out))??;
            let failed: usize = report.aggregates.iter().map(|a| a.failed).sum();
            if failed > 0 {
                eprintln!("warning: {failed} method runs failed; see replicates.csv");
            }
            println!("{} replicate rows written to {}", report.records.len(), out.display());
        }
        Command::Calibrate { scenario, out, seed, config, target_r2 } => {
            let cfg = AppConfig::load(config.as_deref())?;
            let record = with_workers(cli.workers, || cmd_calibrate(&cfg, scenario, target_r2, seed, &out))??;
            println!("scenario {scenario}: s = {}, beta1* = {}", record.s, record.beta1_star);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
