//! Experiment runner behind the `autoint` binary.
//!
//! Every command reads a JSON config, derives all randomness from the config
//! seed and writes deterministic artifacts into the output directory. Wall
//! clock timings only go to stdout, inside the [`RunReport`].

pub mod config;
mod ct;
mod fit1d;
mod graph_dump;
mod nvr;
pub mod report;

use std::path::PathBuf;

use autoint::graph::GraphError;
use autoint::nets::NetError;
use autoint::tomography::TomoError;
use autoint::train::TrainError;
use autoint::volrender::RenderError;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{load_config, ExperimentConfig, SCHEMA_VERSION};
pub use report::RunReport;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("numerical abort: {0}")]
    NonFinite(String),
    #[error("{0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 0 success, 2 config or usage, 3 missing artifact, 4 NaN abort, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact(_) => 3,
            CliError::NonFinite(_) => 4,
            CliError::Runtime(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::NonFinite(e.to_string()),
            TrainError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Build(_) => CliError::Config(e.to_string()),
            NetError::Io(io) => CliError::Io(io),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TomoError> for CliError {
    fn from(e: TomoError) -> Self {
        match e {
            TomoError::Divisibility { .. } | TomoError::Shape(_) => CliError::Config(e.to_string()),
            TomoError::Train(t) => t.into(),
            TomoError::Net(n) => n.into(),
            TomoError::Io(io) => CliError::Io(io),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<RenderError> for CliError {
    fn from(e: RenderError) -> Self {
        match e {
            RenderError::Ray(_) => CliError::Config(e.to_string()),
            RenderError::Train(t) => t.into(),
            RenderError::Net(n) => n.into(),
            RenderError::Io(io) => CliError::Io(io),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "autoint", version, about = "Automatic integration experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for reference data generation.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a grad network to a 1-D signal and tabulate its integrals.
    Fit1d(RunArgs),
    /// Sparse-view tomography.
    Ct {
        #[command(subcommand)]
        action: CtAction,
    },
    /// Piecewise neural volume rendering.
    Nvr {
        #[command(subcommand)]
        action: NvrAction,
    },
    /// Graph inspection.
    Graph {
        #[command(subcommand)]
        action: GraphAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum CtAction {
    /// Train on the subsampled sinogram, then inpaint it.
    Train(RunArgs),
    /// Inpaint from checkpoints written by `ct train`.
    Inpaint(RunArgs),
}

#[derive(Debug, Subcommand)]
pub enum NvrAction {
    /// Train on the training views and render the test views.
    Train(RunArgs),
    /// Render the test views from a trained checkpoint.
    Render(RunArgs),
    /// Integral-network evaluation counts per frame across interval counts.
    Bench(RunArgs),
}

#[derive(Debug, Subcommand)]
pub enum GraphAction {
    /// Write a Graphviz listing of a checkpointed network.
    Dump(DumpArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dump the grad network instead of the integral network.
    #[arg(long)]
    pub grad: bool,
    /// Network inside a rendering checkpoint.
    #[arg(long, value_enum, default_value_t = NetChoice::Sigma)]
    pub net: NetChoice,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum NetChoice {
    Sigma,
    Color,
    Sampler,
}

/// Runs one command. Returns the report for commands that produce one.
pub fn run(cli: Cli) -> Result<Option<RunReport>, CliError> {
    match cli.command {
        Command::Fit1d(args) => fit1d::run(&args).map(Some),
        Command::Ct { action } => match action {
            CtAction::Train(args) => ct::train(&args).map(Some),
            CtAction::Inpaint(args) => ct::inpaint(&args).map(Some),
        },
        Command::Nvr { action } => match action {
            NvrAction::Train(args) => nvr::train(&args).map(Some),
            NvrAction::Render(args) => nvr::render(&args).map(Some),
            NvrAction::Bench(args) => nvr::bench(&args).map(Some),
        },
        Command::Graph {
            action: GraphAction::Dump(args),
        } => graph_dump::run(&args).map(|_| None),
    }
}

/// Thread pool for order-preserving parallel maps.
pub(crate) fn pool(threads: usize) -> Result<rayon::ThreadPool, CliError> {
    if threads == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

pub(crate) fn write(path: &std::path::Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}
