//! Run configuration: command-line flags over a TOML file over defaults.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use owlset::evaluate::{FoldMode, TuneGrid};
use owlset::simulate::NoiseConvention;

use crate::CliError;

/// Flags shared by the subcommands. Every field is optional so that a
/// config file can supply it.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Shared {
    /// Recommendation method: plugin, two-step or one-step.
    #[arg(long)]
    pub method: Option<String>,
    /// Loss family token (e.g. squared, bent-hinge, exponential).
    #[arg(long)]
    pub loss: Option<String>,
    /// Function class: linear, poly[:degree[:offset]], gauss[:bandwidth|auto].
    #[arg(long)]
    pub kernel: Option<String>,
    /// Near-optimality factor.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Comma list, or `5^a..5^b` for powers of five.
    #[arg(long)]
    pub lambda_grid: Option<String>,
    /// One-step threshold.
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    /// Comma list, or `lo:hi:count` for evenly spaced points.
    #[arg(long, allow_hyphen_values = true)]
    pub delta_grid: Option<String>,
    /// Number of folds, or `resubstitution`.
    #[arg(long)]
    pub folds: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Solver token: admm or dual-cd.
    #[arg(long)]
    pub solver: Option<String>,
    /// Randomized trial: propensities are `1/k`.
    #[arg(long)]
    #[serde(default)]
    pub randomized: bool,
    /// Propensity source: column, uniform or fit-logistic.
    #[arg(long)]
    pub propensity: Option<String>,
    /// Replace outcomes by `exp((y - m(x)) / 5)` with `m` an OLS fit.
    #[arg(long)]
    #[serde(default)]
    pub transform_outcome: bool,
    /// Number of treatments; defaults to the largest label in the data.
    #[arg(long)]
    pub k: Option<usize>,
}

impl Shared {
    /// Fills every unset field from `file`.
    pub fn or(self, file: Shared) -> Shared {
        Shared {
            method: self.method.or(file.method),
            loss: self.loss.or(file.loss),
            kernel: self.kernel.or(file.kernel),
            c: self.c.or(file.c),
            lambda: self.lambda.or(file.lambda),
            lambda_grid: self.lambda_grid.or(file.lambda_grid),
            delta: self.delta.or(file.delta),
            delta_grid: self.delta_grid.or(file.delta_grid),
            folds: self.folds.or(file.folds),
            seed: self.seed.or(file.seed),
            solver: self.solver.or(file.solver),
            randomized: self.randomized || file.randomized,
            propensity: self.propensity.or(file.propensity),
            transform_outcome: self.transform_outcome || file.transform_outcome,
            k: self.k.or(file.k),
        }
    }
}

/// Simulation flags.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SimFlags {
    #[arg(long)]
    pub example: Option<u8>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma list drawn from plugin, two-step, one-step, bayes.
    #[arg(long)]
    pub methods: Option<String>,
    /// variance (eps variance 0.5) or sd (eps standard deviation 0.5).
    #[arg(long)]
    pub noise_convention: Option<String>,
    #[arg(long)]
    pub two_step_kernel: Option<String>,
    #[arg(long)]
    pub one_step_kernel: Option<String>,
    #[arg(long)]
    pub plugin_kernel: Option<String>,
    /// Sweep budget of each solver call.
    #[arg(long)]
    pub max_sweeps: Option<usize>,
}

impl SimFlags {
    pub fn or(self, file: SimFlags) -> SimFlags {
        SimFlags {
            example: self.example.or(file.example),
            p: self.p.or(file.p),
            n_train: self.n_train.or(file.n_train),
            n_test: self.n_test.or(file.n_test),
            reps: self.reps.or(file.reps),
            methods: self.methods.or(file.methods),
            noise_convention: self.noise_convention.or(file.noise_convention),
            two_step_kernel: self.two_step_kernel.or(file.two_step_kernel),
            one_step_kernel: self.one_step_kernel.or(file.one_step_kernel),
            plugin_kernel: self.plugin_kernel.or(file.plugin_kernel),
            max_sweeps: self.max_sweeps.or(file.max_sweeps),
        }
    }
}

/// A config file: shared keys at the top level, simulation keys under
/// `[simulate]`.
#[derive(Debug, Default)]
pub struct FileConfig {
    pub shared: Shared,
    pub simulate: SimFlags,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let bad = |e: String| CliError::config(format!("config {}: {e}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| bad(e.message().to_string()))?;
    let simulate = match table.remove("simulate") {
        Some(v) => v.try_into().map_err(|e: toml::de::Error| bad(e.message().to_string()))?,
        None => SimFlags::default(),
    };
    let shared = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| bad(e.message().to_string()))?;
    Ok(FileConfig { shared, simulate })
}

/// Fully resolved settings, embedded in every output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Resolved {
    pub method: String,
    pub loss: Option<String>,
    pub kernel: String,
    pub c: f64,
    pub lambda: f64,
    pub delta: f64,
    pub lambda_grid: Vec<f64>,
    pub delta_grid: Vec<f64>,
    pub folds: String,
    pub seed: u64,
    pub solver: Option<String>,
    pub propensity: String,
    pub transform_outcome: bool,
    pub k: Option<usize>,
    pub data: Option<PathBuf>,
}

pub const METHODS: [&str; 3] = ["plugin", "two-step", "one-step"];

impl Resolved {
    pub fn from_shared(s: Shared, data: Option<PathBuf>) -> Result<Self, CliError> {
        let method = s.method.unwrap_or_else(|| "one-step".into());
        if !METHODS.contains(&method.as_str()) {
            return Err(CliError::config(format!(
                "unknown method '{method}' (known: {})",
                METHODS.join(", ")
            )));
        }
        if method != "one-step" && (s.delta.is_some() || s.delta_grid.is_some()) {
            return Err(CliError::config("delta options apply only to the one-step method"));
        }
        let propensity = match (s.randomized, s.propensity) {
            (true, Some(p)) if p != "uniform" => {
                return Err(CliError::config(format!("--randomized conflicts with propensity mode '{p}'")))
            }
            (true, _) => "uniform".to_string(),
            (false, Some(p)) => p,
            (false, None) => "column".to_string(),
        };
        if !["column", "uniform", "fit-logistic"].contains(&propensity.as_str()) {
            return Err(CliError::config(format!(
                "unknown propensity mode '{propensity}' (known: column, uniform, fit-logistic)"
            )));
        }
        let folds = s.folds.unwrap_or_else(|| "5".into());
        parse_folds(&folds)?;
        let lambda_grid = match &s.lambda_grid {
            Some(g) => parse_lambda_grid(g)?,
            None => TuneGrid::default().lambdas,
        };
        let delta_grid = match &s.delta_grid {
            Some(g) => parse_delta_grid(g)?,
            None => TuneGrid::default().deltas,
        };
        Ok(Self {
            method,
            loss: s.loss,
            kernel: s.kernel.unwrap_or_else(|| "linear".into()),
            c: s.c.unwrap_or(1.2),
            lambda: s.lambda.unwrap_or(0.01),
            delta: s.delta.unwrap_or(0.0),
            lambda_grid,
            delta_grid,
            folds,
            seed: s.seed.unwrap_or(0),
            solver: s.solver,
            propensity,
            transform_outcome: s.transform_outcome,
            k: s.k,
            data,
        })
    }

    pub fn fold_mode(&self) -> FoldMode {
        parse_folds(&self.folds).expect("validated")
    }
}

pub fn parse_folds(s: &str) -> Result<FoldMode, CliError> {
    if s == "resubstitution" {
        return Ok(FoldMode::Resubstitution);
    }
    match s.parse::<usize>() {
        Ok(v) if v >= 2 => Ok(FoldMode::CrossValidation(v)),
        _ => Err(CliError::config(format!("folds must be an integer >= 2 or 'resubstitution', got '{s}'"))),
    }
}

fn number(s: &str) -> Result<f64, CliError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CliError::config(format!("cannot parse number '{s}'")))
}

fn power_of_five(s: &str) -> Result<i32, CliError> {
    s.trim()
        .strip_prefix("5^")
        .and_then(|e| e.parse::<i32>().ok())
        .ok_or_else(|| CliError::config(format!("expected 5^<integer>, got '{s}'")))
}

pub fn parse_lambda_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let grid = match s.split_once("..") {
        Some((lo, hi)) => TuneGrid::powers_of_five(power_of_five(lo)?, power_of_five(hi)?),
        None => s.split(',').map(number).collect::<Result<_, _>>()?,
    };
    if grid.is_empty() || grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(CliError::config(format!("lambda grid '{s}' must be nonempty and positive")));
    }
    Ok(grid)
}

pub fn parse_delta_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let grid = if parts.len() == 3 {
        let count = parts[2]
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::config(format!("bad point count in '{s}'")))?;
        TuneGrid::linspace(number(parts[0])?, number(parts[1])?, count)
    } else {
        s.split(',').map(number).collect::<Result<_, _>>()?
    };
    if grid.is_empty() || grid.iter().any(|d| !d.is_finite()) {
        return Err(CliError::config(format!("delta grid '{s}' must be nonempty and finite")));
    }
    Ok(grid)
}

pub fn parse_noise(s: &str) -> Result<NoiseConvention, CliError> {
    match s {
        "variance" => Ok(NoiseConvention::Variance),
        "sd" => Ok(NoiseConvention::Sd),
        _ => Err(CliError::config(format!("noise convention must be 'variance' or 'sd', got '{s}'"))),
    }
}
