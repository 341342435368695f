use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{
    empirical_value, empirical_weighted_outcome, performance_interval, region_fractions, split_regions, tune,
    RegionLabel, TuneGrid,
};
use crate::kernel::KernelChoice;
use crate::recommend::{method_registry, MethodConfig};
use crate::recommendation::{argmin, optimal_aitr, Recommendation};

use super::{bayes_mu, derive_seed, generate, ScenarioSpec};

/// Methods a study can run, in report order.
pub const STUDY_METHODS: [&str; 4] = ["plugin", "two-step", "one-step", "bayes"];

/// One method's results in one replication. Region entries are `None`
/// when the region holds no test point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: String,
    pub lambda: Option<f64>,
    pub delta: Option<f64>,
    pub itr_regions: [Option<f64>; 3],
    pub aitr_regions: [Option<(f64, f64)>; 3],
    pub itr_all: Option<f64>,
    pub aitr_all: Option<f64>,
    /// Mean over all test points of the true mean of the single
    /// recommendation.
    pub itr_expected: f64,
    /// Whether the final refit met its solver tolerance within the sweep
    /// budget.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub index: usize,
    pub seed: u64,
    pub floored: usize,
    pub region_fractions: [f64; 3],
    pub outcomes: Vec<MethodOutcome>,
    /// `(method, reason)` for every method that failed in this replication.
    pub failures: Vec<(String, String)>,
    /// Per-point recommendations, kept for the first replication only.
    pub points: Option<Vec<PointRecord>>,
}

/// One test point of the first replication, for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub x: Vec<f64>,
    pub region: RegionLabel,
    /// 0-based single recommendation per successful method, in report order.
    pub itr: Vec<usize>,
    pub sets: Vec<Recommendation>,
}

impl ReplicationResult {
    pub fn outcome(&self, method: &str) -> Option<&MethodOutcome> {
        self.outcomes.iter().find(|o| o.method == method)
    }
}

/// Mean and standard error across replications of one report cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl Cell {
    fn from(values: &[f64]) -> Option<Self> {
        let count = values.len();
        if count == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let se = if count > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
            (var / count as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, se, count })
    }
}

/// One row of the per-region summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    /// `ITR` or `A-ITR`.
    pub rule: String,
    pub regions: [(Option<Cell>, Option<Cell>); 3],
    pub all: Option<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub spec: ScenarioSpec,
    pub methods: Vec<String>,
    pub replications: Vec<ReplicationResult>,
    pub summary: Vec<SummaryRow>,
}

impl StudyReport {
    pub fn row(&self, method: &str, rule: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.method == method && r.rule == rule)
    }

    pub fn failures(&self) -> usize {
        self.replications.iter().map(|r| r.failures.len()).sum()
    }
}

fn method_config(spec: &ScenarioSpec, method: &str) -> Result<MethodConfig> {
    let kernel = match method {
        "plugin" => spec.plugin_kernel.clone(),
        "two-step" => spec.two_step_kernel(),
        _ => spec.one_step_kernel(),
    };
    let mut cfg = MethodConfig {
        c: spec.c,
        kernel: KernelChoice::parse(&kernel)?,
        ..MethodConfig::default()
    };
    let opts = &mut cfg.solver_options;
    opts.dual_cd.max_iter = spec.max_sweeps;
    opts.admm.max_iter = spec.max_sweeps;
    opts.admm.inner_max_sweeps = spec.max_sweeps;
    Ok(cfg)
}

struct TestSet {
    data: crate::data::TrialDataset,
    mu: Vec<Vec<f64>>,
    labels: Vec<RegionLabel>,
}

fn score(method: &str, test: &TestSet, itr: &[usize], aitr: &[Recommendation], c: f64) -> Result<MethodOutcome> {
    let mut itr_regions = [None; 3];
    let mut aitr_regions = [None; 3];
    let singles: Vec<Recommendation> = itr.iter().map(|&j| Recommendation::singleton(j)).collect();
    for (r, region) in RegionLabel::ALL.into_iter().enumerate() {
        let Ok((v, _)) = performance_interval(&singles, &test.mu, &test.labels, region) else {
            continue;
        };
        let (lo, hi) = performance_interval(aitr, &test.mu, &test.labels, region)?;
        if !(lo <= v && v <= hi) {
            return Err(Error::Numerical(format!(
                "{method}: interval ({lo}, {hi}) on {region} misses the single-valued value {v}"
            )));
        }
        itr_regions[r] = Some(v);
        aitr_regions[r] = Some((lo, hi));
    }
    Ok(MethodOutcome {
        method: method.to_string(),
        lambda: None,
        delta: None,
        itr_regions,
        aitr_regions,
        itr_all: empirical_value(&test.data, itr).ok(),
        itr_expected: itr.iter().zip(&test.mu).map(|(&j, m)| m[j]).sum::<f64>() / itr.len() as f64,
        aitr_all: empirical_weighted_outcome(&test.data, aitr, c).ok(),
        converged: true,
    })
}

type Recommended = (Vec<usize>, Vec<Recommendation>);

fn run_method(
    spec: &ScenarioSpec,
    method: &str,
    train: &crate::data::TrialDataset,
    test: &TestSet,
    seed: u64,
) -> Result<(MethodOutcome, Recommended)> {
    if method == "bayes" {
        let itr: Vec<usize> = test.mu.iter().map(|m| argmin(m)).collect();
        let aitr = test.mu.iter().map(|m| optimal_aitr(m, spec.c)).collect::<Result<Vec<_>>>()?;
        let out = score(method, test, &itr, &aitr, spec.c)?;
        return Ok((out, (itr, aitr)));
    }
    let m = method_registry().build(method)?;
    let cfg = method_config(spec, method)?;
    let grid = TuneGrid {
        lambdas: spec.lambda_grid(),
        deltas: spec.deltas.clone(),
        folds: spec.folds,
    };
    let tuned = tune(train, m.as_ref(), &cfg, &grid, seed)?;
    let scores = tuned.rule.scores_batch(test.data.features())?;
    let itr: Vec<usize> = scores.iter().map(|s| tuned.rule.itr_from_scores(s)).collect();
    let aitr = scores
        .iter()
        .map(|s| tuned.rule.recommend_from_scores(s))
        .collect::<Result<Vec<_>>>()?;
    let mut out = score(method, test, &itr, &aitr, spec.c)?;
    out.lambda = Some(tuned.lambda);
    out.converged = tuned.rule.solver_report().is_none_or(|r| r.converged);
    out.delta = tuned.delta;
    Ok((out, (itr, aitr)))
}

fn replicate(spec: &ScenarioSpec, methods: &[String], index: usize) -> Result<ReplicationResult> {
    let seed = derive_seed(spec.seed, index as u64);
    let train = generate(spec, spec.n_train, derive_seed(seed, 0))?;
    let test_sim = generate(spec, spec.n_test, derive_seed(seed, 1))?;
    let x = test_sim.data.features();
    let mu = x.rows().map(|r| bayes_mu(spec.example, r)).collect::<Result<Vec<_>>>()?;
    let labels = split_regions(|r| bayes_mu(spec.example, r).expect("validated"), spec.c, x)?;
    let test = TestSet {
        data: test_sim.data,
        mu,
        labels,
    };
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    let mut recommended = Vec::new();
    for (mi, method) in methods.iter().enumerate() {
        match run_method(spec, method, &train.data, &test, derive_seed(seed, 2 + mi as u64)) {
            Ok((o, rec)) => {
                outcomes.push(o);
                recommended.push(rec);
            }
            Err(e) => {
                warn!("replication {index}: {method} failed: {e}");
                failures.push((method.clone(), e.to_string()));
            }
        }
    }
    let points = (index == 0).then(|| {
        (0..test.mu.len())
            .map(|i| PointRecord {
                x: test.data.x(i).to_vec(),
                region: test.labels[i],
                itr: recommended.iter().map(|r| r.0[i]).collect(),
                sets: recommended.iter().map(|r| r.1[i].clone()).collect(),
            })
            .collect()
    });
    info!("replication {index} done");
    Ok(ReplicationResult {
        index,
        seed,
        floored: train.floored + test_sim.floored,
        region_fractions: region_fractions(&test.labels),
        outcomes,
        failures,
        points,
    })
}

fn summarise(methods: &[String], reps: &[ReplicationResult]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for method in methods {
        let outs: Vec<&MethodOutcome> = reps.iter().filter_map(|r| r.outcome(method)).collect();
        let collect = |f: &dyn Fn(&MethodOutcome) -> Option<f64>| -> Option<Cell> {
            Cell::from(&outs.iter().filter_map(|o| f(o)).collect::<Vec<_>>())
        };
        let itr_regions = [0, 1, 2].map(|r| {
            let c = collect(&|o| o.itr_regions[r]);
            (c, c)
        });
        let aitr_regions =
            [0, 1, 2].map(|r| (collect(&|o| o.aitr_regions[r].map(|v| v.0)), collect(&|o| o.aitr_regions[r].map(|v| v.1))));
        rows.push(SummaryRow {
            method: method.clone(),
            rule: "ITR".into(),
            regions: itr_regions,
            all: collect(&|o| o.itr_all),
        });
        rows.push(SummaryRow {
            method: method.clone(),
            rule: "A-ITR".into(),
            regions: aitr_regions,
            all: collect(&|o| o.aitr_all),
        });
    }
    rows
}

/// Runs every replication of `spec` for `methods` (names from
/// [`STUDY_METHODS`]). A method that fails in a replication is recorded
/// in that replication's failures and left out of the summary.
pub fn run_study(spec: &ScenarioSpec, methods: &[&str]) -> Result<StudyReport> {
    spec.validate()?;
    if methods.is_empty() {
        return Err(Error::invalid_argument("no study methods"));
    }
    if let Some(m) = methods.iter().find(|m| !STUDY_METHODS.contains(m)) {
        return Err(Error::invalid_argument(format!(
            "unknown study method '{m}' (known: {})",
            STUDY_METHODS.join(", ")
        )));
    }
    let methods: Vec<String> = STUDY_METHODS
        .iter()
        .filter(|m| methods.contains(m))
        .map(|m| m.to_string())
        .collect();
    let mut replications = (0..spec.replications)
        .into_par_iter()
        .map(|i| replicate(spec, &methods, i))
        .collect::<Result<Vec<_>>>()?;
    replications.sort_by_key(|r| r.index);
    let summary = summarise(&methods, &replications);
    Ok(StudyReport {
        spec: spec.clone(),
        methods,
        replications,
        summary,
    })
}
