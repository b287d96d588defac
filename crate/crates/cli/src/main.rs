use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evifuse::experiment::{
    beta_table, configure_threads, load_experiment_dataset, run_experiment, ExperimentConfig, RunOptions,
};
use evifuse::io::{save_dataset, Checkpoint};
use evifuse::selftest;

#[derive(Parser)]
#[command(name = "evifuse", version, about = "Evidential multimodal segmentation fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the dataset described by a configuration to a container file.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output container path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, evaluate and write all artifacts.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Artifacts directory.
        #[arg(long)]
        out: PathBuf,
        /// Evaluate this checkpoint without training (requires --eval-only).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, requires = "checkpoint")]
        eval_only: bool,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print the learned reliability table of a checkpoint.
    Report {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write the table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle suites.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Error carrying its machine-readable code.
struct Failure {
    code: &'static str,
    message: String,
}

impl From<evifuse::Error> for Failure {
    fn from(e: evifuse::Error) -> Self {
        Failure { code: e.code(), message: e.to_string() }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut config = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if seed.is_some() {
        config.seed = seed;
    }
    Ok(config)
}

fn experiment(config: &ExperimentConfig, out: &Path, eval_only: Option<PathBuf>) -> Result<(), Failure> {
    let outcome = run_experiment(config, out, &RunOptions { eval_only })?;
    let s = &outcome.summary.test;
    println!("artifacts written to {}", out.display());
    println!("test examples {} (skipped {})", s.evaluated, s.skipped.len());
    println!("fused: dice {:.4} brier {:.4} nll {:.4} ece {:.4}", s.fused.dice, s.fused.brier, s.fused.nll, s.fused.ece);
    for (name, m) in &s.modalities {
        println!("{name}: dice {:.4} brier {:.4} nll {:.4} ece {:.4}", m.dice, m.brier, m.nll, m.ece);
    }
    for id in &s.skipped {
        eprintln!("warning: {id} has no foreground and was skipped");
    }
    print!("{}", beta_table(&outcome.model));
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Failure> {
    configure_threads()?;
    match cli.command {
        Command::Generate { config, seed, out } => {
            let config = load_config(config.as_deref(), seed)?.resolved();
            let dataset = load_experiment_dataset(&config)?;
            save_dataset(&dataset, &out)?;
            println!("{} examples written to {}", dataset.examples.len(), out.display());
        }
        Command::Train { config, seed, out, checkpoint, eval_only } => {
            let config = load_config(config.as_deref(), seed)?;
            let eval_only = if eval_only { checkpoint } else { None };
            experiment(&config, &out, eval_only)?;
        }
        Command::Eval { config, seed, out, checkpoint } => {
            let config = load_config(config.as_deref(), seed)?;
            experiment(&config, &out, Some(checkpoint))?;
        }
        Command::Report { checkpoint, out } => {
            let ckpt: Checkpoint = Checkpoint::load(&checkpoint)?;
            let table = beta_table(&ckpt.model);
            match out {
                Some(p) => std::fs::write(&p, table).map_err(|e| Failure::from(evifuse::Error::from(e)))?,
                None => print!("{table}"),
            }
        }
        Command::Selftest { seed } => {
            let checks = selftest::run_all(seed);
            for c in &checks {
                println!("{}", c.line());
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[E_USAGE]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error[E_SELFTEST]: one or more oracle suites failed");
            ExitCode::FAILURE
        }
        Err(f) => {
            let message = f.message.replace('\n', " ");
            eprintln!("error[{}]: {message}", f.code);
            ExitCode::FAILURE
        }
    }
}
