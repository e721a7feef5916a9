//! The `stepnet` command line: train, evaluate, benchmark and replay.
//!
//! Every command reads one experiment document (see [`document`]) and writes
//! plot-ready CSV under `--out`. Each CSV starts with a `# stepnet <kind> vN`
//! comment naming its schema version.

pub mod bench;
pub mod csv;
pub mod document;
pub mod eval;
pub mod replay;
pub mod train;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use stepnet::config::ConfigError;
use stepnet::env::EnvError;
use stepnet::trainer::TrainError;
use thiserror::Error;

pub use document::Document;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config file {} not found", .0.display())]
    MissingConfig(PathBuf),
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Script(String),
}

impl CliError {
    /// 2 for problems with the command line or the document, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingConfig(_) | CliError::Config(_) => 2,
            CliError::Train(TrainError::Config(_)) | CliError::Env(EnvError::Config(_)) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn io_error(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_owned(), source }
}

#[derive(Debug, Parser)]
#[command(name = "stepnet", version, about = "Packet-level network simulation with an embedded RL environment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a DQN policy; writes a checkpoint and training logs.
    Train(Common),
    /// Sweep a trained policy over network parameters.
    Eval(Common),
    /// Time rollout collection for several worker counts.
    Bench(Common),
    /// Run one episode under scripted actions and write its traces.
    Replay(Common),
}

#[derive(Clone, Debug, Args)]
pub struct Common {
    /// Experiment document (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the environment and trainer seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the worker count (train) or the worker list (bench).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Overrides the step budget (train, bench) or caps episode length
    /// (eval, replay).
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl Common {
    /// Loads the document and applies the command-line overrides.
    pub fn document(&self) -> Result<Document, CliError> {
        let mut doc = Document::load(&self.config)?;
        if let Some(seed) = self.seed {
            doc.env.seed = seed;
            doc.trainer.seed = seed;
            doc.bench.seeds = vec![seed];
        }
        if let Some(w) = self.workers {
            if w == 0 {
                return Err(ConfigError::invalid("--workers", "must be at least 1").into());
            }
            doc.trainer.workers = w;
            doc.bench.workers = vec![w];
        }
        Ok(doc)
    }

    pub fn create_out(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out).map_err(io_error(&self.out))
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(c) => train::run(&c),
        Command::Eval(c) => eval::run(&c),
        Command::Bench(c) => bench::run(&c),
        Command::Replay(c) => replay::run(&c),
    }
}
