//! Simulation scenarios with known conditional means, their Bayes rules,
//! and the replication study that summarises fitted rules by region.

mod report;
mod study;

pub use report::{write_points_csv, write_study_csv};
pub use study::{run_study, Cell, MethodOutcome, PointRecord, ReplicationResult, StudyReport, SummaryRow, STUDY_METHODS};

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, TrialDataset};
use crate::error::{Error, Result};
use crate::evaluate::{FoldMode, TuneGrid};

/// Outcomes at or below zero are replaced by this value.
pub const OUTCOME_FLOOR: f64 = 1e-3;

/// How the noise level `0.5` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseConvention {
    /// `eps ~ N(0, 0.5)` with variance 0.5.
    Variance,
    /// Standard deviation 0.5.
    Sd,
}

impl NoiseConvention {
    pub fn label(&self) -> &'static str {
        match self {
            NoiseConvention::Variance => "variance",
            NoiseConvention::Sd => "sd",
        }
    }

    pub fn sd(&self) -> f64 {
        match self {
            NoiseConvention::Variance => 0.5f64.sqrt(),
            NoiseConvention::Sd => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub example: u8,
    pub p: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub replications: usize,
    pub seed: u64,
    pub c: f64,
    pub noise: NoiseConvention,
    pub folds: FoldMode,
    /// Regularisation grid; `None` uses the example's default.
    pub lambdas: Option<Vec<f64>>,
    pub deltas: Vec<f64>,
    /// Kernel tokens; `None` uses the example's default.
    pub two_step_kernel: Option<String>,
    pub one_step_kernel: Option<String>,
    pub plugin_kernel: String,
    /// Sweep budget of every solver call during the study.
    pub max_sweeps: usize,
}

impl ScenarioSpec {
    pub fn new(example: u8, p: usize) -> Self {
        Self {
            example,
            p,
            n_train: 2000,
            n_test: 1000,
            replications: 20,
            seed: 2024,
            c: 1.2,
            noise: NoiseConvention::Variance,
            folds: FoldMode::CrossValidation(5),
            lambdas: None,
            deltas: TuneGrid::default().deltas,
            two_step_kernel: None,
            one_step_kernel: None,
            plugin_kernel: "linear".into(),
            max_sweeps: 300,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let active = active_covariates(self.example)?;
        if self.p < active {
            return Err(Error::invalid_argument(format!(
                "example {} needs p >= {active}, got {}",
                self.example, self.p
            )));
        }
        if self.n_train == 0 || self.n_test == 0 || self.replications == 0 {
            return Err(Error::invalid_argument("sample sizes and replications must be positive"));
        }
        if !(self.c >= 1.0) {
            return Err(Error::invalid_argument(format!("c must be >= 1, got {}", self.c)));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        treatments(self.example).unwrap_or(0)
    }

    pub fn lambda_grid(&self) -> Vec<f64> {
        self.lambdas.clone().unwrap_or_else(|| match self.example {
            1 => TuneGrid::powers_of_five(-6, 2),
            2 => TuneGrid::powers_of_five(-9, -1),
            _ => TuneGrid::powers_of_five(-7, 0),
        })
    }

    pub fn two_step_kernel(&self) -> String {
        self.two_step_kernel.clone().unwrap_or_else(|| match self.example {
            2 => "gauss:auto".into(),
            _ => "poly:2".into(),
        })
    }

    pub fn one_step_kernel(&self) -> String {
        self.one_step_kernel.clone().unwrap_or_else(|| "poly:2".into())
    }
}

pub fn treatments(example: u8) -> Result<usize> {
    match example {
        1 | 3 => Ok(3),
        2 => Ok(4),
        _ => Err(Error::invalid_argument(format!("unknown example {example} (expected 1, 2 or 3)"))),
    }
}

fn active_covariates(example: u8) -> Result<usize> {
    treatments(example)?;
    Ok(if example == 3 { 4 } else { 2 })
}

/// Conditional mean outcomes of every treatment at `x`.
pub fn bayes_mu(example: u8, x: &[f64]) -> Result<Vec<f64>> {
    let active = active_covariates(example)?;
    if x.len() < active {
        return Err(Error::invalid_argument(format!(
            "example {example} needs {active} covariates, got {}",
            x.len()
        )));
    }
    let (x1, x2) = (x[0], x[1]);
    Ok(match example {
        1 => vec![
            1.0 + 3.0 * x1 * x1 + 3.0 * x2 * x2,
            3.0 - 0.5 * x1 * x1 + 0.5 * x2 * x2,
            3.0 + x1 + x2,
        ],
        2 => (1..=4)
            .map(|a: i32| {
                let sign = if a > 2 { 1.0 } else { -1.0 };
                let alt = if a % 2 == 0 { 1.0 } else { -1.0 };
                2.0 + sign * (0.5 * PI * (x1 + alt * x2)).cos()
            })
            .collect(),
        _ => {
            let (x3, x4) = (x[2], x[3]);
            vec![
                3.0 + 3.0 * x1 * x1 + 3.0 * x2 * x2 - 0.5 * (0.5 * x3 * x3 + x4).exp(),
                3.0 - 2.0 * x1 * x1 + (x3 + x4 * x4).exp(),
                3.0 - x2.powi(3) - 2.0 * x3 * x3 + 0.5 * ((x1 + x4).exp() - 1.0).powi(2),
            ]
        }
    })
}

/// `n` uniform points on `[0, 1]^p`.
pub fn uniform_points(n: usize, p: usize, seed: u64) -> Covariates {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * p).map(|_| rng.random::<f64>()).collect();
    Covariates::new(n, p, data).expect("shape is consistent")
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: TrialDataset,
    /// Number of outcomes replaced by [`OUTCOME_FLOOR`].
    pub floored: usize,
}

/// Draws `n` trial rows: uniform covariates, treatments uniform and
/// independent of `x`, Gaussian noise around the conditional mean.
pub fn generate(spec: &ScenarioSpec, n: usize, seed: u64) -> Result<Simulated> {
    spec.validate()?;
    let k = spec.k();
    let x = uniform_points(n, spec.p, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let noise = Normal::new(0.0, spec.noise.sd()).map_err(|e| Error::invalid_argument(e.to_string()))?;
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut floored = 0;
    for row in x.rows() {
        let t = rng.random_range(0..k);
        let mut v = bayes_mu(spec.example, row)?[t] + noise.sample(&mut rng);
        if v <= 0.0 {
            v = OUTCOME_FLOOR;
            floored += 1;
        }
        a.push(t);
        y.push(v);
    }
    let data = TrialDataset::new_unchecked_coverage(x, a, y, vec![1.0 / k as f64; n], k)?;
    Ok(Simulated { data, floored })
}

/// Seed of stream `stream` derived from `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
