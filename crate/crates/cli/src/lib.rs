//! The `kneecast` command line.
//!
//! Every failure ends with one line on stderr,
//! `error kind=<kind> msg=<JSON string>`, and an exit code by class:
//! 1 for usage or configuration problems, 2 for bad data, 3 for numeric
//! failures.

use std::ffi::OsString;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use kneecast::dataset::Condition;
use kneecast::error::ErrorClass;
use kneecast::{Error, Scenario};

mod commands;
pub mod config;
pub mod data;

pub use config::{DataSource, Part, RunConfig, RUN_CONFIG_SCHEMA};

#[derive(Debug, Parser)]
#[command(name = "kneecast", version, about = "Knee-angle forecasting from EMG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by commands that train.
#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for initialization and batch order; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Epoch cap; overrides the config.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic gait recording.
    Synth {
        #[arg(long, default_value_t = 40)]
        cycles: usize,
        #[arg(long, default_value = "normal", value_parser = Condition::from_str)]
        condition: Condition,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Add thigh and shank interaction forces.
        #[arg(long)]
        forces: bool,
        #[arg(long, default_value = "synthetic")]
        subject: String,
        #[arg(long, default_value = "0")]
        trial: String,
        /// Mean gait cycle period in seconds.
        #[arg(long, default_value_t = 1.2)]
        period: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Window recordings into a binary example cache.
    Preprocess {
        inputs: Vec<PathBuf>,
        #[arg(long, value_parser = Scenario::from_str)]
        scenario: Option<Scenario>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train a fresh model, or run the config's stage plan.
    Train {
        inputs: Vec<PathBuf>,
        #[arg(long, value_parser = Scenario::from_str)]
        scenario: Option<Scenario>,
        #[arg(long)]
        horizon: Option<usize>,
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Graft a checkpoint into another scenario and train it.
    Transfer {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        from: PathBuf,
        /// Target scenario; defaults to the kinematic counterpart.
        #[arg(long, value_parser = Scenario::from_str)]
        scenario: Option<Scenario>,
        #[command(flatten)]
        run: RunArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Adapt a checkpoint to new recordings at a reduced rate.
    Finetune {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        lr_scale: f64,
        #[command(flatten)]
        run: RunArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Score a checkpoint on recordings.
    Eval {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        /// Expected scenario; a checkpoint of another scenario is refused.
        #[arg(long, value_parser = Scenario::from_str)]
        scenario: Option<Scenario>,
        /// Configuration the checkpoint must agree with.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Metrics JSON; printed as a table when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// CSV of truth and prediction per window and step.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Forecast every complete window of a recording.
    Predict {
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Expected horizon; must match the checkpoint.
        #[arg(long)]
        horizon: Option<usize>,
        /// CSV output; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn diagnostic(kind: &str, msg: &str) {
    eprintln!("error kind={kind} msg={}", serde_json::to_string(msg).expect("string serialize"));
}

pub fn exit_code(err: &Error) -> i32 {
    match err.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

/// Runs one command. `args` includes the program name.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            diagnostic("usage", first);
            return 1;
        }
    };
    let result = kneecast::parallel::init_threads_from_env().and_then(|_| commands::dispatch(cli.command));
    match result {
        Ok(()) => 0,
        Err(e) => {
            diagnostic(e.kind(), &e.to_string());
            exit_code(&e)
        }
    }
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod guide {}
