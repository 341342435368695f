//! Set-valued treatment recommendations and the optimal near-optimal set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A nonempty set of treatments. Members are kept sorted and 0-based;
/// `Display` renders 1-based labels joined by `+` (e.g. `1+3`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Recommendation {
    members: Vec<usize>,
}

impl Recommendation {
    /// Builds a recommendation from 0-based members. Duplicates are
    /// removed; members must be `< k`.
    pub fn new(mut members: Vec<usize>, k: usize) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        if members.is_empty() {
            return Err(Error::invalid_argument("recommendation set must be nonempty"));
        }
        if let Some(&bad) = members.iter().find(|&&j| j >= k) {
            return Err(Error::invalid_argument(format!(
                "treatment {} outside 1..{k}",
                bad + 1
            )));
        }
        Ok(Self { members })
    }

    pub fn singleton(j: usize) -> Self {
        Self { members: vec![j] }
    }

    pub fn all(k: usize) -> Self {
        Self {
            members: (0..k).collect(),
        }
    }

    /// From a bitmask over 0-based treatments. Panics on an empty mask.
    pub fn from_mask(mask: u32) -> Self {
        assert!(mask != 0, "empty recommendation mask");
        Self {
            members: (0..32).filter(|j| mask & (1 << j) != 0).collect(),
        }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// 1-based labels.
    pub fn labels(&self) -> Vec<usize> {
        self.members.iter().map(|j| j + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_singleton(&self) -> bool {
        self.members.len() == 1
    }

    pub fn contains(&self, j: usize) -> bool {
        self.members.binary_search(&j).is_ok()
    }

    pub fn is_subset(&self, other: &Recommendation) -> bool {
        self.members.iter().all(|&j| other.contains(j))
    }
}

impl fmt::Display for Recommendation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<String> = self.members.iter().map(|j| (j + 1).to_string()).collect();
        f.write_str(&labels.join("+"))
    }
}

impl FromStr for Recommendation {
    type Err = Error;

    /// Parses `1+3` style labels. The upper bound on labels is not known
    /// here, so only positivity is checked.
    fn from_str(s: &str) -> Result<Self> {
        let members = s
            .split('+')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&l| l >= 1)
                    .map(|l| l - 1)
                    .ok_or_else(|| Error::invalid_argument(format!("bad treatment label '{t}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Recommendation::new(members, usize::MAX)
    }
}

/// The near-optimal set `{j : mu_j / min_i mu_i <= c}`.
///
/// The comparison is an exact `<=`; with `c = 1` this is the argmin set.
pub fn optimal_aitr(mu: &[f64], c: f64) -> Result<Recommendation> {
    if mu.is_empty() {
        return Err(Error::invalid_argument("no conditional means"));
    }
    if let Some(bad) = mu.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
        return Err(Error::invalid_argument(format!(
            "conditional means must be positive, got {bad}"
        )));
    }
    if !(c >= 1.0) {
        return Err(Error::invalid_argument(format!("c must be >= 1, got {c}")));
    }
    let best = mu.iter().copied().fold(f64::INFINITY, f64::min);
    let members = (0..mu.len()).filter(|&j| mu[j] / best <= c).collect();
    Ok(Recommendation { members })
}

/// Index of the smallest entry, ties to the smallest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = j;
        }
    }
    best
}

/// Index of the largest entry, ties to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = j;
        }
    }
    best
}
