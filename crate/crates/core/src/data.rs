//! Trial datasets: covariates, assigned treatments, outcomes and
//! propensities, plus CSV ingestion.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major covariate matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl Covariates {
    pub fn new(n: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * p {
            return Err(Error::invalid_argument(format!(
                "covariate buffer has {} values, expected {n}x{p}",
                data.len()
            )));
        }
        Ok(Self { n, p, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * p);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != p {
                return Err(Error::invalid_argument(format!(
                    "row {i} has {} covariates, expected {p}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            n: rows.len(),
            p,
            data,
        })
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        (0..self.n).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.p);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            n: idx.len(),
            p: self.p,
            data,
        }
    }
}

/// One parsed CSV row before validation. `treatment` is the 1-based label
/// as written in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub covariates: Vec<f64>,
    pub treatment: i64,
    pub outcome: f64,
    pub propensity: Option<f64>,
}

/// How to fill propensities that are absent from the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingPropensity {
    /// Absence is an error.
    Reject,
    /// Randomized trial: every missing propensity becomes `1/k`.
    Uniform,
}

/// Validated trial data. Treatments are stored 0-based; every public
/// file format uses 1-based labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    features: Covariates,
    treatments: Vec<usize>,
    outcomes: Vec<f64>,
    propensities: Vec<f64>,
    k: usize,
}

impl TrialDataset {
    /// Builds a dataset from already-typed columns, checking every
    /// invariant. `treatments` are 0-based here.
    pub fn new(
        features: Covariates,
        treatments: Vec<usize>,
        outcomes: Vec<f64>,
        propensities: Vec<f64>,
        k: usize,
    ) -> Result<Self> {
        let ds = Self::new_unchecked_coverage(features, treatments, outcomes, propensities, k)?;
        ds.check_label_coverage()?;
        Ok(ds)
    }

    /// Like [`TrialDataset::new`] but does not require every label to be
    /// observed. Used for folds and other subsets of a validated dataset.
    pub fn new_unchecked_coverage(
        features: Covariates,
        treatments: Vec<usize>,
        outcomes: Vec<f64>,
        propensities: Vec<f64>,
        k: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if treatments.len() != n || outcomes.len() != n || propensities.len() != n {
            return Err(Error::invalid_dataset(format!(
                "column lengths disagree: {n} covariate rows, {} treatments, {} outcomes, {} propensities",
                treatments.len(),
                outcomes.len(),
                propensities.len()
            )));
        }
        if k < 2 {
            return Err(Error::invalid_dataset(format!("need at least 2 treatments, got k = {k}")));
        }
        if let Some(i) = treatments.iter().position(|&a| a >= k) {
            return Err(Error::invalid_dataset(format!(
                "row {}: treatment {} outside 1..{k}",
                i + 1,
                treatments[i] + 1
            )));
        }
        let bad: Vec<String> = outcomes
            .iter()
            .enumerate()
            .filter(|(_, y)| !(y.is_finite() && **y > 0.0))
            .map(|(i, y)| format!("row {} (y = {y})", i + 1))
            .collect();
        if !bad.is_empty() {
            return Err(Error::invalid_dataset(format!(
                "outcomes must be positive and finite; rejected {}",
                bad.join(", ")
            )));
        }
        if let Some(i) = propensities
            .iter()
            .position(|p| !(p.is_finite() && *p > 0.0 && *p <= 1.0))
        {
            return Err(Error::invalid_dataset(format!(
                "row {}: propensity {} outside (0, 1]",
                i + 1,
                propensities[i]
            )));
        }
        if let Some(i) = features.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid_dataset(format!(
                "row {}: non-finite covariate",
                i / features.ncols().max(1) + 1
            )));
        }
        let ds = Self {
            features,
            treatments,
            outcomes,
            propensities,
            k,
        };
        if let Some(i) = (0..ds.n()).find(|&i| !ds.weight(i).is_finite()) {
            return Err(Error::invalid_dataset(format!(
                "row {}: weight y/p is not finite",
                i + 1
            )));
        }
        Ok(ds)
    }

    fn check_label_coverage(&self) -> Result<()> {
        let counts = self.treatment_counts();
        if let Some(j) = counts.iter().position(|&c| c == 0) {
            return Err(Error::invalid_dataset(format!(
                "treatment {} never appears (k = {})",
                j + 1,
                self.k
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn features(&self) -> &Covariates {
        &self.features
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// 0-based treatment of row `i`.
    pub fn treatment(&self, i: usize) -> usize {
        self.treatments[i]
    }

    pub fn treatments(&self) -> &[usize] {
        &self.treatments
    }

    pub fn outcome(&self, i: usize) -> f64 {
        self.outcomes[i]
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn propensity(&self, i: usize) -> f64 {
        self.propensities[i]
    }

    pub fn propensities(&self) -> &[f64] {
        &self.propensities
    }

    /// Outcome weight `y_i / p(a_i | x_i)`.
    pub fn weight(&self, i: usize) -> f64 {
        self.outcomes[i] / self.propensities[i]
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.weight(i)).collect()
    }

    pub fn max_weight(&self) -> f64 {
        (0..self.n()).map(|i| self.weight(i)).fold(0.0, f64::max)
    }

    pub fn treatment_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &a in &self.treatments {
            counts[a] += 1;
        }
        counts
    }

    /// Rows `idx` in the given order. Label coverage is not re-checked.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select(idx),
            treatments: idx.iter().map(|&i| self.treatments[i]).collect(),
            outcomes: idx.iter().map(|&i| self.outcomes[i]).collect(),
            propensities: idx.iter().map(|&i| self.propensities[i]).collect(),
            k: self.k,
        }
    }

    pub fn with_outcomes(&self, outcomes: Vec<f64>) -> Result<Self> {
        Self::new_unchecked_coverage(
            self.features.clone(),
            self.treatments.clone(),
            outcomes,
            self.propensities.clone(),
            self.k,
        )
    }

    pub fn with_propensities(&self, propensities: Vec<f64>) -> Result<Self> {
        Self::new_unchecked_coverage(
            self.features.clone(),
            self.treatments.clone(),
            self.outcomes.clone(),
            propensities,
            self.k,
        )
    }
}

/// Validates parsed rows into a [`TrialDataset`].
///
/// `k` defaults to the largest label present. Missing propensities are
/// filled with `1/k` only under [`MissingPropensity::Uniform`].
pub fn validate_dataset(
    rows: &[RawRow],
    k: Option<usize>,
    missing: MissingPropensity,
) -> Result<TrialDataset> {
    if rows.is_empty() {
        return Err(Error::invalid_dataset("no rows"));
    }
    let max_label = rows.iter().map(|r| r.treatment).max().unwrap_or(0);
    let k = match k {
        Some(k) => k,
        None if max_label >= 2 => max_label as usize,
        None => return Err(Error::invalid_dataset("fewer than two treatment labels present")),
    };
    let mut treatments = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if r.treatment < 1 || r.treatment as usize > k {
            return Err(Error::invalid_dataset(format!(
                "row {}: treatment label {} outside 1..{k}",
                i + 1,
                r.treatment
            )));
        }
        treatments.push(r.treatment as usize - 1);
    }
    let mut propensities = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        match (r.propensity, missing) {
            (Some(p), _) => propensities.push(p),
            (None, MissingPropensity::Uniform) => propensities.push(1.0 / k as f64),
            (None, MissingPropensity::Reject) => {
                return Err(Error::invalid_dataset(format!(
                    "row {}: propensity missing (pass the randomized flag to default to 1/k)",
                    i + 1
                )))
            }
        }
    }
    let covs: Vec<Vec<f64>> = rows.iter().map(|r| r.covariates.clone()).collect();
    let features = Covariates::from_rows(&covs).map_err(|e| Error::invalid_dataset(e.to_string()))?;
    let outcomes = rows.iter().map(|r| r.outcome).collect();
    TrialDataset::new(features, treatments, outcomes, propensities, k)
}

/// Column layout of a dataset CSV: `x1..xp`, `a`, `y`, optional `prop`.
#[derive(Debug, Clone)]
struct Layout {
    covariates: Vec<usize>,
    treatment: usize,
    outcome: Option<usize>,
    propensity: Option<usize>,
}

impl Layout {
    fn from_header(header: &csv::StringRecord, need_outcome: bool) -> Result<Self> {
        let mut covariates: Vec<(usize, usize)> = Vec::new();
        let mut treatment = None;
        let mut outcome = None;
        let mut propensity = None;
        for (col, name) in header.iter().enumerate() {
            let name = name.trim();
            match name {
                "a" => treatment = Some(col),
                "y" => outcome = Some(col),
                "prop" => propensity = Some(col),
                _ => {
                    let idx = name
                        .strip_prefix('x')
                        .and_then(|s| s.parse::<usize>().ok())
                        .filter(|&j| j >= 1)
                        .ok_or_else(|| {
                            Error::invalid_dataset(format!("unrecognised column '{name}'"))
                        })?;
                    covariates.push((idx, col));
                }
            }
        }
        covariates.sort_unstable();
        for (expect, (idx, _)) in covariates.iter().enumerate() {
            if *idx != expect + 1 {
                return Err(Error::invalid_dataset(format!(
                    "covariate columns must be x1..xp without gaps (missing x{})",
                    expect + 1
                )));
            }
        }
        let treatment = treatment.ok_or_else(|| Error::invalid_dataset("missing column 'a'"))?;
        if need_outcome && outcome.is_none() {
            return Err(Error::invalid_dataset("missing column 'y'"));
        }
        Ok(Self {
            covariates: covariates.into_iter().map(|(_, c)| c).collect(),
            treatment,
            outcome,
            propensity,
        })
    }
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, col: usize, line: usize, what: &str) -> Result<T> {
    let raw = rec.get(col).unwrap_or("").trim();
    raw.parse::<T>().map_err(|_| {
        Error::invalid_dataset(format!("row {line}: cannot parse {what} '{raw}'"))
    })
}

/// Parses dataset CSV text into raw rows. Lines starting with `#` are
/// ignored.
pub fn read_rows<R: Read>(reader: R) -> Result<Vec<RawRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let layout = Layout::from_header(rdr.headers()?, true)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 1;
        let covariates = layout
            .covariates
            .iter()
            .enumerate()
            .map(|(j, &c)| parse_field::<f64>(&rec, c, line, &format!("x{}", j + 1)))
            .collect::<Result<Vec<_>>>()?;
        let treatment = parse_field::<i64>(&rec, layout.treatment, line, "treatment a")?;
        let outcome = parse_field::<f64>(&rec, layout.outcome.expect("checked"), line, "outcome y")?;
        let propensity = match layout.propensity {
            Some(c) if !rec.get(c).unwrap_or("").trim().is_empty() => {
                Some(parse_field::<f64>(&rec, c, line, "propensity")?)
            }
            _ => None,
        };
        rows.push(RawRow {
            covariates,
            treatment,
            outcome,
            propensity,
        });
    }
    Ok(rows)
}

pub fn read_rows_from_path(path: impl AsRef<Path>) -> Result<Vec<RawRow>> {
    let file = std::fs::File::open(path.as_ref())?;
    read_rows(std::io::BufReader::new(file))
}

/// Reads only the covariate columns of a CSV (other columns are allowed
/// and ignored). Used for prediction inputs.
pub fn read_covariates<R: Read>(reader: R) -> Result<Covariates> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut cols: Vec<(usize, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(c, name)| {
            name.trim()
                .strip_prefix('x')
                .and_then(|s| s.parse::<usize>().ok())
                .map(|j| (j, c))
        })
        .collect();
    cols.sort_unstable();
    if cols.is_empty() {
        return Err(Error::invalid_dataset("no covariate columns x1..xp"));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        rows.push(
            cols.iter()
                .map(|&(j, c)| parse_field::<f64>(&rec, c, i + 1, &format!("x{j}")))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Covariates::from_rows(&rows)
}

/// Writes a dataset in the CSV schema (with a `prop` column).
pub fn write_dataset<W: std::io::Write>(ds: &TrialDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=ds.p()).map(|j| format!("x{j}")).collect();
    header.extend(["a".into(), "y".into(), "prop".into()]);
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec: Vec<String> = ds.x(i).iter().map(|v| v.to_string()).collect();
        rec.push((ds.treatment(i) + 1).to_string());
        rec.push(ds.outcome(i).to_string());
        rec.push(ds.propensity(i).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
