//! `tdm`: data generation, training, sampling and evaluation driver.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tdm::dynamics::SampleMode;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, missing inputs or unusable paths.
    Config(String),
    Core(tdm::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Core(e) if e.is_numeric() => write!(f, "numeric failure: {e}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<tdm::Error> for CliError {
    fn from(e: tdm::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numeric() => 3,
            _ => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "tdm", version, about = "Trivialized diffusion models on compact matrix Lie groups")]
struct Cli {
    /// Worker thread cap.
    #[arg(long, global = true, env = "TDM_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration.
    #[arg(short, long)]
    pub config: PathBuf,

    /// Override a config field, e.g. `--set train.iters=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate or import a dataset and split it into train and test files.
    MakeData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a score network, resuming from the last checkpoint if asked.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: bool,
        /// Stop after this many total iterations; the schedule still spans `train.iters`.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Draw samples from a trained model.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(short, long)]
        n: Option<usize>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<SampleMode>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Compare a sample file against reference data.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Estimate the test negative log-likelihood.
    Nll {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<SampleMode, String> {
    match s {
        "sde" => Ok(SampleMode::Sde),
        "ode" => Ok(SampleMode::Ode),
        _ => Err(format!("expected sde or ode, got {s:?}")),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        tdm::par::init_threads(n);
    }
    match cli.command {
        Command::MakeData { common } => commands::make_data(&common),
        Command::Train { common, resume, stop_after } => commands::train(&common, resume, stop_after),
        Command::Sample { common, checkpoint, n, mode, out } => commands::sample(&common, checkpoint, n, mode, out),
        Command::Eval { common, samples, reference, out } => commands::eval(&common, samples, reference, out),
        Command::Nll { common, checkpoint, test, out } => commands::nll(&common, checkpoint, test, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
