//! Value estimators, the weighted-outcome criterion, oracle sets, region
//! splits, performance intervals and tuning.

mod tune;

pub use tune::{fold_assignment, tune, write_score_table, FoldMode, ScoreRow, TuneGrid, TuneResult};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Covariates, TrialDataset};
use crate::error::{Error, Result};
use crate::recommendation::{optimal_aitr, Recommendation};

/// Largest `k` for which [`phi_plus`] enumerates subsets.
pub const PHI_PLUS_MAX_K: usize = 20;

/// Ratio estimator of the value of a single-valued rule:
/// `sum 1{a_i = d_i} y_i / p_i` over `sum 1{a_i = d_i} / p_i`. `itr`
/// holds the 0-based recommendation for every row.
pub fn empirical_value(ds: &TrialDataset, itr: &[usize]) -> Result<f64> {
    if itr.len() != ds.n() {
        return Err(Error::invalid_argument(format!(
            "{} recommendations for {} rows",
            itr.len(),
            ds.n()
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &d) in itr.iter().enumerate() {
        if ds.treatment(i) == d {
            num += ds.outcome(i) / ds.propensity(i);
            den += 1.0 / ds.propensity(i);
        }
    }
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(Error::UndefinedValue("the rule never matches an observed treatment".into()))
    }
}

/// Empirical weighted outcome of a set-valued rule: numerator
/// `sum 1{a_i in phi_i} y_i / (p_i (1 + (|phi_i| - 1) c))`, denominator
/// `sum 1{a_i in phi_i} / (p_i |phi_i|)`.
pub fn empirical_weighted_outcome(ds: &TrialDataset, aitr: &[Recommendation], c: f64) -> Result<f64> {
    if aitr.len() != ds.n() {
        return Err(Error::invalid_argument(format!(
            "{} recommendations for {} rows",
            aitr.len(),
            ds.n()
        )));
    }
    if !(c >= 1.0) {
        return Err(Error::invalid_argument(format!("c must be >= 1, got {c}")));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (i, set) in aitr.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::invalid_argument(format!("empty recommendation at row {}", i + 1)));
        }
        if set.contains(ds.treatment(i)) {
            let size = set.len() as f64;
            num += ds.outcome(i) / (ds.propensity(i) * (1.0 + (size - 1.0) * c));
            den += 1.0 / (ds.propensity(i) * size);
        }
    }
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(Error::UndefinedValue("no observed treatment falls in its recommended set".into()))
    }
}

/// `(1 / (1 + (|phi| - 1) c)) sum_{j in phi} mu_j`.
pub fn mu_phi(mu: &[f64], members: &Recommendation, c: f64) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::invalid_argument("mu_phi needs a nonempty set"));
    }
    if let Some(&j) = members.members().iter().find(|&&j| j >= mu.len()) {
        return Err(Error::invalid_argument(format!("treatment {} outside 1..{}", j + 1, mu.len())));
    }
    let sum: f64 = members.members().iter().map(|&j| mu[j]).sum();
    Ok(sum / (1.0 + (members.len() as f64 - 1.0) * c))
}

/// Minimiser of [`mu_phi`] over all nonempty subsets. Ties go to the
/// smaller set, then to the lexicographically first one.
pub fn phi_plus(mu: &[f64], c: f64) -> Result<Recommendation> {
    let k = mu.len();
    if k == 0 {
        return Err(Error::invalid_argument("no conditional means"));
    }
    if k > PHI_PLUS_MAX_K {
        return Err(Error::Refused(format!(
            "subset enumeration is limited to k <= {PHI_PLUS_MAX_K}, got {k}"
        )));
    }
    if !(c >= 1.0) {
        return Err(Error::invalid_argument(format!("c must be >= 1, got {c}")));
    }
    let mut best: Option<(f64, Recommendation)> = None;
    for mask in 1u32..(1u32 << k) {
        let set = Recommendation::from_mask(mask);
        let v = mu_phi(mu, &set, c)?;
        let better = match &best {
            None => true,
            Some((bv, bs)) => {
                v < *bv || (v == *bv && (set.len(), set.members()) < (bs.len(), bs.members()))
            }
        };
        if better {
            best = Some((v, set));
        }
    }
    Ok(best.expect("k >= 1").1)
}

/// Region of a covariate point by the size of its optimal set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionLabel {
    /// A single treatment is near-optimal.
    R1,
    /// Some but not all treatments are near-optimal.
    R2,
    /// Every treatment is near-optimal.
    R3,
}

impl RegionLabel {
    pub const ALL: [RegionLabel; 3] = [RegionLabel::R1, RegionLabel::R2, RegionLabel::R3];

    pub fn from_size(size: usize, k: usize) -> Self {
        if size <= 1 {
            RegionLabel::R1
        } else if size >= k {
            RegionLabel::R3
        } else {
            RegionLabel::R2
        }
    }
}

impl fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RegionLabel::R1 => "R1",
            RegionLabel::R2 => "R2",
            RegionLabel::R3 => "R3",
        };
        f.write_str(s)
    }
}

/// Labels every row of `x` by `|optimal_aitr(mu(x), c)|`.
pub fn split_regions<F>(oracle: F, c: f64, x: &Covariates) -> Result<Vec<RegionLabel>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    x.rows()
        .map(|r| {
            let mu = oracle(r);
            Ok(RegionLabel::from_size(optimal_aitr(&mu, c)?.len(), mu.len()))
        })
        .collect()
}

/// Fraction of points in R1, R2 and R3.
pub fn region_fractions(labels: &[RegionLabel]) -> [f64; 3] {
    let n = labels.len().max(1) as f64;
    RegionLabel::ALL.map(|r| labels.iter().filter(|l| **l == r).count() as f64 / n)
}

/// Average over the points of `region` of the smallest and largest mean
/// inside each recommended set. `mu` holds the oracle means per point.
pub fn performance_interval(
    aitr: &[Recommendation],
    mu: &[Vec<f64>],
    labels: &[RegionLabel],
    region: RegionLabel,
) -> Result<(f64, f64)> {
    if aitr.len() != mu.len() || aitr.len() != labels.len() {
        return Err(Error::invalid_argument("recommendations, means and labels differ in length"));
    }
    let (mut lo, mut hi, mut count) = (0.0, 0.0, 0usize);
    for ((set, m), l) in aitr.iter().zip(mu).zip(labels) {
        if *l != region {
            continue;
        }
        let vals = set.members().iter().map(|&j| m[j]);
        lo += vals.clone().fold(f64::INFINITY, f64::min);
        hi += vals.fold(f64::NEG_INFINITY, f64::max);
        count += 1;
    }
    if count == 0 {
        return Err(Error::UndefinedValue(format!("no points in region {region}")));
    }
    Ok((lo / count as f64, hi / count as f64))
}
