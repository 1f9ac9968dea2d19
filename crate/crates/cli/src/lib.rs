//! `floodnet` command-line pipeline: simulate or ingest sensor data, train,
//! sweep loss weights, evaluate and emit per-sensor flood probabilities.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use floodnet::Error;

pub mod commands;
pub mod config;

pub use config::RunConfig;

/// Error carrying the process exit code: 1 usage, 2 I/O, 3 numeric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    /// Same code, message prefixed with `context`.
    pub fn context(self, context: impl fmt::Display) -> Self {
        Self {
            code: self.code,
            message: format!("{context}: {}", self.message),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Contract(_) => 1,
            Error::Io(_)
            | Error::Load(_)
            | Error::Parse { .. }
            | Error::Dimension { .. }
            | Error::Window { .. }
            | Error::EmptyInput(_) => 2,
            Error::Numeric(_)
            | Error::DegenerateVariance { .. }
            | Error::UndefinedMetric(_)
            | Error::NoPositives
            | Error::Divergence { .. }
            | Error::SimulationDivergence { .. } => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "floodnet", version, about = "FastGRNN-FCN urban flood prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sensor network, events and packed datasets.
    Simulate(Common),
    /// Window sensor CSVs (graph.csv, edges.csv, train/, test/) into datasets.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Directory with graph.csv, edges.csv, train/ and test/.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train a model on train.bin with early stopping on val.bin.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this model file.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Monte-Carlo sweep over loss weights.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated weight grid.
        #[arg(long)]
        weights: Option<String>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Threshold metrics of one or more models on test.bin.
    Evaluate(Common),
    /// Per-sensor flood probabilities over an event.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Directory of sensor CSVs (defaults to <data>/test).
        #[arg(long)]
        event: Option<PathBuf>,
        /// Steps between predictions.
        #[arg(long)]
        interval: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Dataset directory (defaults to the output directory).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model file; `evaluate` accepts a comma-separated list.
    #[arg(long)]
    pub model: Option<String>,
    /// Any configuration key, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Configuration file first, then `--set` pairs, then dedicated flags.
fn resolve(common: &Common, extra: &[(&str, Option<String>)]) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    let flags = [
        ("seed", common.seed.map(|s| s.to_string())),
        ("data", common.data.as_ref().map(|p| p.display().to_string())),
        ("model", common.model.clone()),
    ];
    for (k, v) in flags.iter().chain(extra) {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    Ok(cfg)
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

/// Runs one parsed invocation.
pub fn run(cli: Cli) -> Result<(), CliError> {
    use commands::*;
    match cli.command {
        Command::Simulate(c) => simulate(&resolve(&c, &[])?, &c.out),
        Command::Prepare { common, input } => {
            prepare(&resolve(&common, &[("input", path_str(&input))])?, &common.out)
        }
        Command::Train { common, resume, variant } => {
            let cfg = resolve(&common, &[("resume", path_str(&resume)), ("variant", variant)])?;
            train(&cfg, &common.out)
        }
        Command::Sweep { common, weights, runs } => {
            let cfg = resolve(
                &common,
                &[("weights", weights), ("runs", runs.map(|r| r.to_string()))],
            )?;
            sweep(&cfg, &common.out)
        }
        Command::Evaluate(c) => evaluate(&resolve(&c, &[])?, &c.out),
        Command::Predict { common, event, interval, threshold } => {
            let cfg = resolve(
                &common,
                &[
                    ("event", path_str(&event)),
                    ("interval", interval.map(|i| i.to_string())),
                    ("threshold", threshold.map(|t| t.to_string())),
                ],
            )?;
            predict(&cfg, &common.out)
        }
    }
}
