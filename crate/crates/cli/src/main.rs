//! `lidarcam`: run the calibration pipeline stages over files.
//!
//! Exit codes: 1 configuration, 2 I/O, 3 association, 4 solver,
//! 5 evaluation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lidarcam::Error;

use config::{RunConfig, SynthConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] Error),
}

// lets `?` lift any core module error into CliError
macro_rules! lift {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        })*
    };
}

lift!(
    lidarcam::GeometryError,
    lidarcam::GraphError,
    lidarcam::CorrespondError,
    lidarcam::SolverError,
    lidarcam::ObservabilityError,
    lidarcam::SynthError,
    lidarcam::MappingError,
    lidarcam::EvaluateError,
    lidarcam::FormatError
);

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
            CliError::Core(e) => match e {
                Error::Synth(_) => 1,
                Error::Format(_) => 2,
                Error::Graph(_) | Error::Correspond(_) => 3,
                Error::Solver(lidarcam::SolverError::Correspond(_)) => 3,
                Error::Geometry(_) | Error::Solver(_) | Error::Observability(_) => 4,
                Error::Mapping(lidarcam::MappingError::Format(_)) => 2,
                Error::Mapping(_) | Error::Evaluate(_) => 5,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lidarcam", version, about = "LiDAR-camera self-calibration pipeline")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Associate, extract correspondences and solve for poses and extrinsic.
    Solve,
    /// Sweep the solved extrinsic along each dimension.
    Probe,
    /// Refine stereo depth maps with LiDAR and assemble a model.
    Refine,
    /// Compare the assembled model with a reference model.
    Eval,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    let need_config = || {
        cli.config
            .clone()
            .ok_or_else(|| CliError::Config("--config is required".into()))
    };
    if let Command::Synth { out } = &cli.command {
        let cfg: SynthConfig = match &cli.config {
            Some(p) => lidarcam::io::read_json(p).map_err(|e| CliError::Config(e.to_string()))?,
            None => SynthConfig::default(),
        };
        return commands::synth(&cfg, out, cli.seed);
    }
    let mut cfg = RunConfig::load(&need_config()?)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Synth { .. } => unreachable!(),
        Command::Solve => commands::solve(&cfg),
        Command::Probe => commands::probe(&cfg),
        Command::Refine => commands::refine(&cfg),
        Command::Eval => commands::eval(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
