use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use derl::config::{generate_sweep, parse_config, ExperimentConfig, SweepKind};
use derl::envs::solve_optimal_return;
use derl::harness::{aggregate_report, run_to_dir, write_report};
use derl::{exec, Error, Result};

#[derive(Parser)]
#[command(name = "derl", version, about = "Decoupled exploration/exploitation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Sectioned key = value config document.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set algo=dea2c --set intrinsic.lambda=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let text = match &self.config {
            Some(path) => std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
            None => String::new(),
        };
        parse_config(&text, &self.overrides)
    }
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run a single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds; defaults to `schedule.seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, default_value = "runs")]
    outdir: PathBuf,
    /// Number of runs executed concurrently.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

impl RunArgs {
    fn seeds(&self, config: &ExperimentConfig) -> Vec<u64> {
        match (&self.seed, &self.seeds) {
            (Some(s), _) => vec![*s],
            (None, Some(list)) => list.clone(),
            (None, None) => config.schedule.seeds.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration on one or more seeds.
    Train(RunArgs),
    /// Train every point of a sensitivity sweep.
    Sweep {
        /// `lambda` or `decay`.
        #[arg(long)]
        kind: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Aggregate every run under a directory into summary.csv and normalized.csv.
    Report {
        #[arg(long, default_value = "runs")]
        outdir: PathBuf,
    },
    /// Print the optimal undiscounted return of the configured task.
    Solve {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

struct Job {
    config: ExperimentConfig,
    seed: u64,
    prefix: Option<String>,
}

/// Runs every job and reports how many aborted.
fn run_jobs(jobs: &[Job], outdir: &Path, parallel: usize) -> usize {
    let outcomes = exec::run(jobs, parallel, |job| {
        let label = format!(
            "{}{}/{} seed {}",
            job.prefix.as_deref().map(|p| format!("{p}/")).unwrap_or_default(),
            job.config.env_spec().task_name(),
            job.config.cell_name(),
            job.seed
        );
        match run_to_dir(&job.config, job.seed, outdir, job.prefix.as_deref()) {
            Ok(log) => {
                println!(
                    "{label}: mean eval return {:.4}, max {:.4}",
                    log.mean_eval_return(),
                    log.max_eval_return()
                );
                true
            }
            Err(e) => {
                eprintln!("{label}: aborted: {e}");
                false
            }
        }
    });
    outcomes.iter().filter(|ok| !**ok).count()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn real_main(cli: Cli) -> Result<ExitCode> {
    let failures = match cli.command {
        Command::Train(run) => {
            let config = run.config.resolve()?;
            let jobs: Vec<Job> =
                run.seeds(&config).into_iter().map(|seed| Job { config: config.clone(), seed, prefix: None }).collect();
            run_jobs(&jobs, &run.outdir, run.parallel)
        }
        Command::Sweep { kind, run } => {
            let kind: SweepKind = kind.parse().map_err(Error::Usage)?;
            let base = run.config.resolve()?;
            let seeds = run.seeds(&base);
            let jobs: Vec<Job> = generate_sweep(kind, &base)?
                .into_iter()
                .flat_map(|p| {
                    seeds.iter().map(move |&seed| Job { config: p.config.clone(), seed, prefix: Some(p.label.clone()) })
                })
                .collect();
            run_jobs(&jobs, &run.outdir, run.parallel)
        }
        Command::Report { outdir } => {
            let report = aggregate_report(&outdir)?;
            write_report(&report, &outdir)?;
            for c in &report.cells {
                println!(
                    "{:<24} {:<22} mean {:.3} ± {:.3}  max {:.3}  ci [{:.3}, {:.3}]  seeds {}",
                    c.task, c.cell, c.mean, c.std, c.max, c.ci_low, c.ci_high, c.seeds
                );
            }
            report.skipped.len()
        }
        Command::Solve { config } => {
            let config = config.resolve()?;
            let spec = config.env_spec();
            println!("{spec}: {}", solve_optimal_return(&spec)?);
            0
        }
    };
    Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
