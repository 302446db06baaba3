//! `indfair`: split data, learn a fair metric, train baseline and
//! individually fair classifiers, and audit them.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 isolation
//! violation.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::artifacts::Layout;
use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("refusing to overwrite: {0}")]
    Refused(String),
    #[error("{0}")]
    Missing(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] indfair::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Refused(_) => 2,
            CliError::Core(indfair::Error::Argument(_)) => 2,
            CliError::Core(indfair::Error::Isolation(_)) => 4,
            _ => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    BaselineNn,
    Sensr,
    BaselineGbt,
    Ifgb,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::BaselineNn => "baseline-nn",
            Method::Sensr => "sensr",
            Method::BaselineGbt => "baseline-gbt",
            Method::Ifgb => "ifgb",
        }
    }

    pub fn is_fair(self) -> bool {
        matches!(self, Method::Sensr | Method::Ifgb)
    }
}

#[derive(Parser)]
#[command(name = "indfair", version, about = "Train and audit individually fair classifiers")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Global seed; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overwrite existing stage outputs.
    #[arg(long, global = true)]
    force: bool,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split the data into metric_train, main_train and test.
    Split,
    /// Learn the fair metric from metric_train.
    LearnMetric,
    /// Train one classifier on main_train.
    Train {
        #[arg(long, value_enum)]
        method: Method,
    },
    /// Audit trained models on the test split.
    Evaluate {
        /// Model names under models/ or paths to model files; all models by
        /// default.
        #[arg(long, num_args = 1..)]
        models: Vec<String>,
    },
    /// Write a synthetic credit-default CSV with a planted gender proxy.
    Synth {
        #[arg(long, default_value_t = 5000)]
        rows: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    if let Command::Synth { rows, out } = &cli.command {
        return commands::synth(out, *rows, cli.seed, cli.force);
    }
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let cfg = RunConfig::load(path, cli.seed)?;
    let root = cli
        .output
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::Config("no output directory: pass --output or set output_dir".into()))?;
    let layout = Layout::new(root);
    match &cli.command {
        Command::Split => commands::split(&cfg, &layout, cli.force),
        Command::LearnMetric => commands::learn_metric(&cfg, &layout, cli.force),
        Command::Train { method } => commands::train(&cfg, &layout, *method, cli.force),
        Command::Evaluate { models } => commands::evaluate(&cfg, &layout, models, cli.force),
        Command::Synth { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
