use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use histloss::experiment::{self, BiasSimArgs, ExperimentConfig, StudyKind, OUT_DIR_ENV};

/// Histogram-loss regression: training, bias simulations and studies.
#[derive(Parser, Debug)]
#[command(name = "histloss", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one or more runs and write metrics, checkpoints and a summary.
    Train(RunArgs),
    /// Simulate the bias of truncated-Gaussian targets.
    BiasSim(BiasArgs),
    /// Run a comparison study.
    Study {
        /// corrupt, sensitivity, anneal, representation, multitask, moments or gradnorm
        kind: StudyKind,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BiasArgs {
    /// JSON file with bias-simulation settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of bins.
    #[arg(long)]
    k: Option<usize>,
    /// Number of equispaced targets per sweep.
    #[arg(long)]
    points: Option<usize>,
    /// Also check the prediction-error bound; exit nonzero on any violation.
    #[arg(long)]
    check_bounds: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
}

const DEFAULT_OUT: &str = "histloss-out";

fn experiment_config(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    cfg.out = Some(out.clone());
    cfg.validate()?;
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(args) => {
            let (cfg, out) = experiment_config(&args)?;
            let s = experiment::cmd_train(&cfg, &out)?;
            println!(
                "{} x{}: train MAE {:.6} ± {:.6}, test MAE {:.6} ± {:.6} ({})",
                s.loss,
                s.runs,
                s.train_mae.mean,
                s.train_mae.stderr,
                s.test_mae.mean,
                s.test_mae.stderr,
                out.display()
            );
            Ok(true)
        }
        Command::BiasSim(args) => {
            let mut b = match &args.config {
                Some(p) => BiasSimArgs::load(p)?,
                None => BiasSimArgs::default(),
            };
            if let Some(k) = args.k {
                b.k = k;
            }
            if let Some(n) = args.points {
                b.points = n;
            }
            if let Some(s) = args.seed {
                b.seed = s;
            }
            b.check_bounds |= args.check_bounds;
            let out = args.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            let report = experiment::cmd_bias_sim(&b, &out)?;
            print!("{}", experiment::describe_bias_sim(&report));
            Ok(!b.check_bounds || report.passed())
        }
        Command::Study { kind, run } => {
            let (cfg, out) = experiment_config(&run)?;
            let table = experiment::cmd_study(kind, &cfg, &out)?;
            println!(
                "{}: {} rows written to {}",
                kind.name(),
                table.rows.len(),
                out.join(format!("{}.csv", kind.name())).display()
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: bound check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
