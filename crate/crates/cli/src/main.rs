//! `affect`: runs the pipeline one stage per invocation.
//!
//! Every stage reads its inputs from the configured directories and writes
//! into the work directory; see the README for the layout.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use affect_core::error::ErrorClass;
use affect_core::pipeline::TrainStage;
use affect_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "affect",
    version,
    about = "Multi-term, multi-task affect recognition pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Replace outputs left by an earlier run.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the seeded synthetic corpus to features_dir and labels_dir.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Standardize, reduce and window every split.
    Extract {
        #[command(flatten)]
        common: Common,
    },
    /// Rebalance the training windows per the balancing toggles.
    Balance {
        #[command(flatten)]
        common: Common,
    },
    /// Train the model stack up to a stage and write the bundle.
    Train {
        #[command(flatten)]
        common: Common,
        /// subgroup, single-term, multi-term, fusion or all.
        #[arg(long, default_value = "all")]
        stage: TrainStage,
    },
    /// Predict every windowed sample of a split with the bundle.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "valid")]
        split: String,
    },
    /// Score a prediction table.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "valid")]
        split: String,
    },
    /// Score every learner grid cell on the short-term features.
    Gridsearch {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "valid")]
        split: String,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::StageDependency => 4,
        ErrorClass::Other => 1,
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn run(cli: Cli) -> affect_core::Result<()> {
    use commands::*;
    match cli.command {
        Command::Synth { common } => synth(&Ctx::new(&common.config, common.force)?),
        Command::Extract { common } => extract(&Ctx::new(&common.config, common.force)?),
        Command::Balance { common } => balance(&Ctx::new(&common.config, common.force)?),
        Command::Train { common, stage } => train(&Ctx::new(&common.config, common.force)?, stage),
        Command::Predict { common, split } => {
            predict(&Ctx::new(&common.config, common.force)?, &split)
        }
        Command::Evaluate { common, split } => {
            evaluate(&Ctx::new(&common.config, common.force)?, &split)
        }
        Command::Gridsearch { common, split } => {
            gridsearch(&Ctx::new(&common.config, common.force)?, &split)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("error kind=usage message={}", one_line(&e.to_string()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "error kind={} message={}",
                e.kind(),
                one_line(&e.to_string())
            );
            ExitCode::from(exit_code(&e))
        }
    }
}
