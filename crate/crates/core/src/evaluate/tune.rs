use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::recommend::{one_step_from_margins, FittedRule, Method, MethodConfig};
use crate::recommendation::Recommendation;

use super::{empirical_value, empirical_weighted_outcome};

/// How held-out scores are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FoldMode {
    /// `v`-fold cross-validation.
    CrossValidation(usize),
    /// Fit and score on the full data.
    Resubstitution,
}

impl FoldMode {
    pub fn label(&self) -> String {
        match self {
            FoldMode::CrossValidation(v) => format!("{v}-fold cross-validation"),
            FoldMode::Resubstitution => "resubstitution".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneGrid {
    pub lambdas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub folds: FoldMode,
}

impl TuneGrid {
    /// `5^lo, ..., 5^hi`.
    pub fn powers_of_five(lo: i32, hi: i32) -> Vec<f64> {
        (lo..=hi).map(|e| 5f64.powi(e)).collect()
    }

    /// `count` evenly spaced points on `[lo, hi]`.
    pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
        match count {
            0 => vec![],
            1 => vec![lo],
            _ => (0..count)
                .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                .collect(),
        }
    }
}

impl Default for TuneGrid {
    fn default() -> Self {
        Self {
            lambdas: Self::powers_of_five(-9, 2),
            deltas: Self::linspace(-0.2, 0.2, 21),
            folds: FoldMode::CrossValidation(5),
        }
    }
}

/// One line of the score table. `fold == None` marks the pooled score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub method: String,
    pub lambda: f64,
    pub delta: Option<f64>,
    pub fold: Option<usize>,
    pub empirical_value: Option<f64>,
    pub empirical_weighted_outcome: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub lambda: f64,
    pub delta: Option<f64>,
    /// Refit on the full data at the selected parameters.
    pub rule: FittedRule,
    pub scores: Vec<ScoreRow>,
    pub mode: FoldMode,
}

/// Fold index of every row; a pure function of its arguments.
pub fn fold_assignment(seed: u64, n: usize, folds: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assign = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assign[i] = pos % folds.max(1);
    }
    assign
}

/// Held-out scores for every row at one `lambda`, or the failure.
struct Candidate {
    lambda: f64,
    scores: Vec<Option<Vec<f64>>>,
    rules: Vec<Option<FittedRule>>,
}

fn held_out(
    ds: &TrialDataset,
    method: &dyn Method,
    cfg: &MethodConfig,
    lambda: f64,
    splits: &[(Vec<usize>, Vec<usize>)],
) -> Candidate {
    let cfg = MethodConfig { lambda, ..cfg.clone() };
    let mut scores = vec![None; ds.n()];
    let fits: Vec<_> = splits
        .par_iter()
        .map(|(train, test)| {
            let fit = method.fit(&ds.subset(train), &cfg).and_then(|rule| {
                let s = rule.scores_batch(&ds.features().select(test))?;
                Ok((rule, s))
            });
            if let Err(e) = &fit {
                warn!("{} at lambda {lambda}: {e}", method.name());
            }
            fit.ok()
        })
        .collect();
    let mut rules = Vec::with_capacity(splits.len());
    for ((_, test), fit) in splits.iter().zip(fits) {
        match fit {
            Some((rule, s)) => {
                for (&i, row) in test.iter().zip(s) {
                    scores[i] = Some(row);
                }
                rules.push(Some(rule));
            }
            None => rules.push(None),
        }
    }
    Candidate { lambda, scores, rules }
}

fn defined(r: Result<f64>) -> Option<f64> {
    match r {
        Ok(v) if v.is_finite() => Some(v),
        _ => None,
    }
}

/// Value of the ITR and weighted outcome of the recommendations on the
/// rows `rows`, using the held-out scores of a candidate.
fn score_rows(
    ds: &TrialDataset,
    rule: &FittedRule,
    scores: &[Option<Vec<f64>>],
    rows: &[usize],
    c: f64,
    recommend: &dyn Fn(&[f64]) -> Result<Recommendation>,
) -> (Option<f64>, Option<f64>) {
    let mut idx = Vec::with_capacity(rows.len());
    let mut itr = Vec::with_capacity(rows.len());
    let mut sets = Vec::with_capacity(rows.len());
    for &i in rows {
        let Some(s) = &scores[i] else { return (None, None) };
        let Ok(set) = recommend(s) else { return (None, None) };
        idx.push(i);
        itr.push(rule.itr_from_scores(s));
        sets.push(set);
    }
    let sub = ds.subset(&idx);
    (
        defined(empirical_value(&sub, &itr)),
        defined(empirical_weighted_outcome(&sub, &sets, c)),
    )
}

/// Selects the regularisation weight by the pooled held-out value of the
/// ITR and, for methods with a threshold, the threshold by the pooled
/// held-out weighted outcome. Undefined candidates score `+inf`; ties go
/// to the earlier grid entry (for thresholds, to the one nearest 0).
pub fn tune(
    ds: &TrialDataset,
    method: &dyn Method,
    cfg: &MethodConfig,
    grid: &TuneGrid,
    seed: u64,
) -> Result<TuneResult> {
    if grid.lambdas.is_empty() {
        return Err(Error::invalid_argument("empty lambda grid"));
    }
    if let Some(l) = grid.lambdas.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        return Err(Error::invalid_argument(format!("lambda must be positive, got {l}")));
    }
    if method.tunes_delta() && grid.deltas.is_empty() {
        return Err(Error::invalid_argument("empty delta grid"));
    }
    let n = ds.n();
    let splits: Vec<(Vec<usize>, Vec<usize>)> = match grid.folds {
        FoldMode::Resubstitution => vec![((0..n).collect(), (0..n).collect())],
        FoldMode::CrossValidation(v) => {
            if v < 2 || v > n {
                return Err(Error::invalid_argument(format!("{v} folds for {n} rows")));
            }
            let assign = fold_assignment(seed, n, v);
            (0..v)
                .map(|f| {
                    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| assign[i] == f);
                    (train, test)
                })
                .collect()
        }
    };
    let all: Vec<usize> = (0..n).collect();
    let name = method.name().to_string();
    let mut table = Vec::new();

    let candidates: Vec<Candidate> = grid
        .lambdas
        .iter()
        .map(|&lambda| held_out(ds, method, cfg, lambda, &splits))
        .collect();

    let mut best: Option<(f64, usize)> = None;
    for (ci, cand) in candidates.iter().enumerate() {
        let Some(rule) = cand.rules.iter().flatten().next() else {
            table.push(ScoreRow {
                method: name.clone(),
                lambda: cand.lambda,
                delta: None,
                fold: None,
                empirical_value: None,
                empirical_weighted_outcome: None,
            });
            continue;
        };
        let rec = |s: &[f64]| rule.recommend_from_scores(s);
        let delta = method.tunes_delta().then_some(cfg.delta);
        if splits.len() > 1 {
            for (f, (_, test)) in splits.iter().enumerate() {
                let (v, w) = score_rows(ds, rule, &cand.scores, test, cfg.c, &rec);
                table.push(ScoreRow {
                    method: name.clone(),
                    lambda: cand.lambda,
                    delta,
                    fold: Some(f),
                    empirical_value: v,
                    empirical_weighted_outcome: w,
                });
            }
        }
        let (v, w) = score_rows(ds, rule, &cand.scores, &all, cfg.c, &rec);
        table.push(ScoreRow {
            method: name.clone(),
            lambda: cand.lambda,
            delta,
            fold: None,
            empirical_value: v,
            empirical_weighted_outcome: w,
        });
        let score = v.unwrap_or(f64::INFINITY);
        if score.is_finite() && best.is_none_or(|(b, _)| score < b) {
            best = Some((score, ci));
        }
    }
    let Some((_, chosen)) = best else {
        return Err(Error::TuningFailed(format!(
            "every lambda candidate of {name} has an undefined held-out value"
        )));
    };
    let cand = &candidates[chosen];

    let mut delta = None;
    if method.tunes_delta() {
        let rule = cand.rules.iter().flatten().next().expect("chosen candidate has a fit");
        let mut best_d: Option<(f64, f64)> = None;
        for &d in &grid.deltas {
            let rec = |s: &[f64]| Ok(one_step_from_margins(s, d));
            if splits.len() > 1 {
                for (f, (_, test)) in splits.iter().enumerate() {
                    let (v, w) = score_rows(ds, rule, &cand.scores, test, cfg.c, &rec);
                    table.push(ScoreRow {
                        method: name.clone(),
                        lambda: cand.lambda,
                        delta: Some(d),
                        fold: Some(f),
                        empirical_value: v,
                        empirical_weighted_outcome: w,
                    });
                }
            }
            let (v, w) = score_rows(ds, rule, &cand.scores, &all, cfg.c, &rec);
            table.push(ScoreRow {
                method: name.clone(),
                lambda: cand.lambda,
                delta: Some(d),
                fold: None,
                empirical_value: v,
                empirical_weighted_outcome: w,
            });
            let score = w.unwrap_or(f64::INFINITY);
            let better = match best_d {
                None => score.is_finite(),
                Some((bs, bd)) => score < bs || (score == bs && d.abs() < bd.abs()),
            };
            if better {
                best_d = Some((score, d));
            }
        }
        let Some((_, d)) = best_d else {
            return Err(Error::TuningFailed(format!(
                "every delta candidate of {name} has an undefined held-out weighted outcome"
            )));
        };
        delta = Some(d);
    }

    let final_cfg = MethodConfig {
        lambda: cand.lambda,
        delta: delta.unwrap_or(cfg.delta),
        ..cfg.clone()
    };
    let rule = method.fit(ds, &final_cfg)?;
    Ok(TuneResult {
        lambda: cand.lambda,
        delta,
        rule,
        scores: table,
        mode: grid.folds,
    })
}

/// Writes the score table as CSV. Undefined scores are empty fields and
/// pooled rows carry `all` in the fold column.
pub fn write_score_table<W: Write>(rows: &[ScoreRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "lambda",
        "delta",
        "fold",
        "empirical_value",
        "empirical_weighted_outcome",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.lambda.to_string(),
            opt(r.delta),
            r.fold.map(|f| (f + 1).to_string()).unwrap_or_else(|| "all".into()),
            opt(r.empirical_value),
            opt(r.empirical_weighted_outcome),
        ])?;
    }
    w.flush()?;
    Ok(())
}
