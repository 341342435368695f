mod artifact;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Shared, SimFlags};
use owlset::error::Error;

#[derive(Parser)]
#[command(name = "owlset", version, about = "Single- and set-valued treatment recommendations by outcome weighted learning")]
struct Cli {
    /// TOML file supplying defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a recommendation rule at fixed parameters.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        shared: Shared,
    },
    /// Recommend treatments for new covariates.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        delta: Option<f64>,
    },
    /// Select the regularisation weight (and threshold) and refit.
    Tune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the score table.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[command(flatten)]
        shared: Shared,
    },
    /// Estimate the value and weighted outcome of a model on labelled data.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        shared: Shared,
    },
    /// Run the replication study for a simulation example.
    Simulate {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-point recommendations of the first replication, for plotting.
        #[arg(long)]
        points: Option<PathBuf>,
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        sim: SimFlags,
    },
}

/// A failure with its exit code: 2 configuration, 3 data, 4 numerical.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }

    /// Library errors raised while resolving options are configuration
    /// errors whatever their kind.
    pub fn config_from(e: Error) -> Self {
        Self::config(e.to_string())
    }

    fn kind(&self) -> &'static str {
        match self.code {
            2 => "config",
            3 => "data",
            _ => "numerical",
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidArgument(_) | Error::Refused(_) => 2,
            Error::InvalidDataset(_) | Error::InvalidModel(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
            Error::UndefinedValue(_) | Error::TuningFailed(_) | Error::Numerical(_) => 4,
        };
        Self { code, message: e.to_string() }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    let file = config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Fit { data, out, shared } => commands::fit(data, out, shared.or(file.shared)),
        Command::Predict { model, data, out, delta } => commands::predict(model, data, out, delta),
        Command::Tune { data, out, scores, shared } => commands::tune_cmd(data, out, scores, shared.or(file.shared)),
        Command::Evaluate { model, data, out, shared } => commands::evaluate(model, data, out, shared.or(file.shared)),
        Command::Simulate { out, points, shared, sim } => {
            commands::simulate(out, points, shared.or(file.shared), sim.or(file.simulate))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.message.replace('\n', " ");
            eprintln!("error[{}] exit={}: {line}", e.kind(), e.code);
            ExitCode::from(e.code)
        }
    }
}
