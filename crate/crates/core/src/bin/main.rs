use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shiftbai::diagnostics::{
    bias_identity_check, consistency_probe, covariance_conjecture_probe, estimator_moments,
    ConjectureConfig, ConsistencyConfig, DiagError, FixedDesign, Truth,
};
use shiftbai::harness::{run_experiment, write_csv, ExperimentConfig, HarnessError};
use shiftbai::policies::PolicyKind;

#[derive(Parser)]
#[command(
    name = "shiftbai",
    version,
    about = "Best-arm identification under global environment shifts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replicated experiment and write PICS/EOC per policy and budget.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Also write paired-difference statistics next to the output.
        #[arg(long)]
        paired: bool,
    },
    /// Monte Carlo diagnostics of the estimator.
    Diag {
        #[command(subcommand)]
        mode: DiagMode,
    },
    /// Print the policy kinds accepted in config files.
    ListPolicies,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    reps: u64,
}

#[derive(Subcommand)]
enum DiagMode {
    /// Moments of the fit on a balanced fixed design.
    Moments {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2)]
        arms: usize,
        #[arg(long, default_value_t = 2)]
        envs: usize,
        #[arg(long, default_value_t = 5)]
        per_cell: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
    },
    /// Variance of the mean estimates versus sample size under round-robin.
    Consistency {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [500u64, 1000, 2000, 4000])]
        grid: Vec<u64>,
    },
    /// Shift-estimate covariances against the first environment's inverse size.
    Conjecture {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        arms: usize,
        #[arg(long, default_value_t = 2)]
        per_arm: usize,
        #[arg(long, default_value_t = 40)]
        envs: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
    },
    /// Sample-mean bias identity on random count patterns.
    Bias {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        patterns: u64,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<DiagError> for Failure {
    fn from(e: DiagError) -> Self {
        match e {
            DiagError::InvalidInput(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::ListPolicies => {
            for name in PolicyKind::KIND_NAMES {
                println!("{name}");
            }
        }
        Command::Run {
            config,
            out,
            threads,
            paired,
        } => {
            let config =
                ExperimentConfig::from_path(&config).map_err(|e| Failure::Config(e.to_string()))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.unwrap_or(0))
                .build()
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            let series = pool.install(|| run_experiment(&config))?;
            write_csv(&series, &out)?;
            if paired {
                let path = out.with_extension("paired.csv");
                std::fs::write(&path, series.paired_csv()).map_err(|e| {
                    Failure::Runtime(format!("cannot write {}: {e}", path.display()))
                })?;
            }
        }
        Command::Diag { mode } => match mode {
            DiagMode::Moments {
                common,
                arms,
                envs,
                per_cell,
                sigma,
            } => {
                let design = FixedDesign::balanced(arms, envs, per_cell);
                let truth = Truth {
                    mu: (0..arms).map(|i| 0.5 * i as f64).collect(),
                    shifts: (0..envs).map(|j| 3.0 * j as f64).collect(),
                    sigma,
                };
                let report = estimator_moments(&design, &truth, common.reps, common.seed)?;
                report.write_csv(&common.out)?;
                eprintln!(
                    "max |bias|/SE = {:.3}, max relative covariance error = {:.4}",
                    report.max_bias_z(),
                    report.max_rel_error
                );
            }
            DiagMode::Consistency { common, grid } => {
                let cfg = ConsistencyConfig::standard(grid, common.reps, common.seed);
                consistency_probe(&cfg)?.write_csv(&common.out)?;
            }
            DiagMode::Conjecture {
                common,
                arms,
                per_arm,
                envs,
                sigma,
            } => {
                let cfg = ConjectureConfig {
                    arms,
                    per_arm,
                    envs,
                    sigma,
                    reps: common.reps,
                    seed: common.seed,
                };
                covariance_conjecture_probe(&cfg)?.write_csv(&common.out)?;
            }
            DiagMode::Bias {
                out,
                seed,
                patterns,
            } => {
                let report = bias_identity_check(patterns, seed);
                report.write_csv(&out)?;
                eprintln!("max identity residual = {:e}", report.max_residual());
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
