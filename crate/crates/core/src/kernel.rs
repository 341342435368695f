//! Kernels, gram matrices and explicit finite feature maps.

use std::fmt;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Covariates;
use crate::error::{Error, Result};
use crate::registry::Registry;

/// Explicit feature maps larger than this are not used; the solvers fall
/// back to the gram matrix.
pub const MAX_FEATURE_DIM: usize = 512;

/// Rows used by the median-distance bandwidth heuristic.
const MEDIAN_HEURISTIC_ROWS: usize = 3000;

/// Fully resolved kernel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    Polynomial { degree: u32, offset: f64 },
    Gaussian { bandwidth: f64 },
}

impl KernelSpec {
    pub fn polynomial(degree: u32, offset: f64) -> Result<Self> {
        if degree < 1 {
            return Err(Error::invalid_argument("polynomial degree must be >= 1"));
        }
        if !(offset.is_finite() && offset >= 0.0) {
            return Err(Error::invalid_argument(format!(
                "polynomial offset must be >= 0, got {offset}"
            )));
        }
        Ok(KernelSpec::Polynomial { degree, offset })
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::invalid_argument(format!(
                "gaussian bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(KernelSpec::Gaussian { bandwidth })
    }

    pub fn build(&self) -> Box<dyn Kernel> {
        match *self {
            KernelSpec::Linear => Box::new(LinearKernel),
            KernelSpec::Polynomial { degree, offset } => Box::new(PolynomialKernel { degree, offset }),
            KernelSpec::Gaussian { bandwidth } => Box::new(GaussianKernel {
                inv_two_sigma_sq: 1.0 / (2.0 * bandwidth * bandwidth),
                bandwidth,
            }),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Polynomial { degree, offset } => write!(f, "poly:{degree}:{offset}"),
            KernelSpec::Gaussian { bandwidth } => write!(f, "gauss:{bandwidth}"),
        }
    }
}

pub trait Kernel: Send + Sync {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64;

    /// An explicit map `phi` with `eval(x, y) = <phi(x), phi(y)>`, if one of
    /// manageable size exists for inputs of dimension `p`.
    fn feature_map(&self, _p: usize) -> Option<Box<dyn FeatureMap>> {
        None
    }

    fn spec(&self) -> KernelSpec;
}

pub trait FeatureMap: Send + Sync {
    fn dim(&self) -> usize;
    fn map_into(&self, x: &[f64], out: &mut [f64]);

    fn map(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.map_into(x, &mut out);
        out
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub struct LinearKernel;

struct IdentityMap(usize);

impl FeatureMap for IdentityMap {
    fn dim(&self) -> usize {
        self.0
    }

    fn map_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
}

impl Kernel for LinearKernel {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, y)
    }

    fn feature_map(&self, p: usize) -> Option<Box<dyn FeatureMap>> {
        (p <= MAX_FEATURE_DIM).then(|| Box::new(IdentityMap(p)) as Box<dyn FeatureMap>)
    }

    fn spec(&self) -> KernelSpec {
        KernelSpec::Linear
    }
}

/// `(offset + <x, y>)^degree`.
pub struct PolynomialKernel {
    degree: u32,
    offset: f64,
}

/// Monomial expansion of the polynomial kernel: one feature per exponent
/// vector `m` with `|m| <= degree`, scaled by the square root of its
/// multinomial coefficient times `offset^(degree - |m|)`.
struct MonomialMap {
    terms: Vec<(Vec<u32>, f64)>,
}

impl MonomialMap {
    fn new(p: usize, degree: u32, offset: f64) -> Self {
        let mut exps = Vec::new();
        let mut cur = vec![0u32; p];
        enumerate_exponents(0, degree, &mut cur, &mut exps);
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        let terms = exps
            .into_iter()
            .filter_map(|m| {
                let total: u32 = m.iter().sum();
                let rest = degree - total;
                let mut coef = fact(degree) / fact(rest);
                for &e in &m {
                    coef /= fact(e);
                }
                coef *= offset.powi(rest as i32);
                (coef > 0.0).then(|| (m, coef.sqrt()))
            })
            .collect();
        Self { terms }
    }
}

fn enumerate_exponents(pos: usize, budget: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos == cur.len() {
        out.push(cur.clone());
        return;
    }
    for e in 0..=budget {
        cur[pos] = e;
        enumerate_exponents(pos + 1, budget - e, cur, out);
    }
    cur[pos] = 0;
}

impl FeatureMap for MonomialMap {
    fn dim(&self) -> usize {
        self.terms.len()
    }

    fn map_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, (m, coef)) in out.iter_mut().zip(&self.terms) {
            let mut v = *coef;
            for (xi, &e) in x.iter().zip(m) {
                if e > 0 {
                    v *= xi.powi(e as i32);
                }
            }
            *o = v;
        }
    }
}

fn binomial(n: usize, k: usize) -> Option<usize> {
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

impl Kernel for PolynomialKernel {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        (self.offset + dot(x, y)).powi(self.degree as i32)
    }

    fn feature_map(&self, p: usize) -> Option<Box<dyn FeatureMap>> {
        let dim = binomial(p + self.degree as usize, self.degree as usize)?;
        (dim <= MAX_FEATURE_DIM)
            .then(|| Box::new(MonomialMap::new(p, self.degree, self.offset)) as Box<dyn FeatureMap>)
    }

    fn spec(&self) -> KernelSpec {
        KernelSpec::Polynomial {
            degree: self.degree,
            offset: self.offset,
        }
    }
}

/// `exp(-|x - y|^2 / (2 bandwidth^2))`.
pub struct GaussianKernel {
    bandwidth: f64,
    inv_two_sigma_sq: f64,
}

impl Kernel for GaussianKernel {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (-d2 * self.inv_two_sigma_sq).exp()
    }

    fn spec(&self) -> KernelSpec {
        KernelSpec::Gaussian {
            bandwidth: self.bandwidth,
        }
    }
}

/// Kernel as requested on the command line; the Gaussian bandwidth may
/// still be `auto`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelChoice {
    /// Primal linear learning on `(x, 1)`.
    Linear,
    Kernel(KernelSpec),
    /// Gaussian kernel with the median pairwise distance as bandwidth.
    GaussianAuto,
}

/// Function class of a decision model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FunctionClass {
    Linear,
    Kernel(KernelSpec),
}

impl KernelChoice {
    /// Parses `linear`, `poly:<degree>[:<offset>]` or
    /// `gauss:<bandwidth|auto>`.
    pub fn parse(token: &str) -> Result<Self> {
        Ok(*kernel_registry().build(token)?)
    }

    pub fn resolve(&self, x: &Covariates) -> Result<FunctionClass> {
        Ok(match *self {
            KernelChoice::Linear => FunctionClass::Linear,
            KernelChoice::Kernel(spec) => FunctionClass::Kernel(spec),
            KernelChoice::GaussianAuto => {
                FunctionClass::Kernel(KernelSpec::gaussian(median_pairwise_distance(x)?)?)
            }
        })
    }
}

impl fmt::Display for KernelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelChoice::Linear => write!(f, "linear"),
            KernelChoice::Kernel(spec) => write!(f, "{spec}"),
            KernelChoice::GaussianAuto => write!(f, "gauss:auto"),
        }
    }
}

impl fmt::Display for FunctionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionClass::Linear => write!(f, "linear"),
            FunctionClass::Kernel(spec) => write!(f, "{spec}"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::invalid_argument(format!("bad {what} '{s}'")))
}

/// Registry of kernel tokens. Polynomial defaults: degree 2, offset 1.
pub fn kernel_registry() -> &'static Registry<KernelChoice> {
    static REG: OnceLock<Registry<KernelChoice>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut reg: Registry<KernelChoice> = Registry::new("kernel");
        reg.register("linear", |_| Ok(Box::new(KernelChoice::Linear)));
        reg.register("kernel-linear", |_| Ok(Box::new(KernelChoice::Kernel(KernelSpec::Linear))));
        reg.register("poly", |arg| {
            let (degree, offset) = match arg {
                None => (2, 1.0),
                Some(a) => match a.split_once(':') {
                    Some((d, o)) => (parse_num(d, "degree")?, parse_num(o, "offset")?),
                    None => (parse_num(a, "degree")?, 1.0),
                },
            };
            Ok(Box::new(KernelChoice::Kernel(KernelSpec::polynomial(degree, offset)?)))
        });
        reg.register("gauss", |arg| match arg {
            None | Some("auto") => Ok(Box::new(KernelChoice::GaussianAuto)),
            Some(b) => Ok(Box::new(KernelChoice::Kernel(KernelSpec::gaussian(parse_num(b, "bandwidth")?)?))),
        });
        reg
    })
}

/// Evaluates `K(x, y)`.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid_argument(format!(
            "kernel inputs have dimensions {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(spec.build().eval(x, y))
}

/// Gram matrix with entry `(i, j) = K(x_i, z_j)`.
pub fn gram_matrix(spec: &KernelSpec, x: &Covariates, z: &Covariates) -> Result<DMatrix<f64>> {
    if x.ncols() != z.ncols() {
        return Err(Error::invalid_argument(format!(
            "gram inputs have {} and {} columns",
            x.ncols(),
            z.ncols()
        )));
    }
    let kernel = spec.build();
    Ok(gram_with(kernel.as_ref(), x, z))
}

pub(crate) fn gram_with(kernel: &dyn Kernel, x: &Covariates, z: &Covariates) -> DMatrix<f64> {
    let (n, m) = (x.nrows(), z.nrows());
    // build column-major: column j holds K(x_i, z_j) for all i
    let cols: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let zj = z.row(j);
            (0..n).map(|i| kernel.eval(x.row(i), zj)).collect()
        })
        .collect();
    DMatrix::from_iterator(n, m, cols.into_iter().flatten())
}

/// Symmetric gram `K(x_i, x_j)`; only the upper triangle is evaluated so
/// the result is exactly symmetric.
pub fn symmetric_gram(kernel: &dyn Kernel, x: &Covariates) -> DMatrix<f64> {
    let n = x.nrows();
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| (0..=j).map(|i| kernel.eval(x.row(i), x.row(j))).collect())
        .collect();
    let mut g = DMatrix::zeros(n, n);
    for (j, col) in cols.into_iter().enumerate() {
        for (i, v) in col.into_iter().enumerate() {
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Median of the pairwise Euclidean distances between rows. Large inputs
/// use an evenly spaced subset of rows.
pub fn median_pairwise_distance(x: &Covariates) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::invalid_argument("median heuristic needs at least two rows"));
    }
    let idx: Vec<usize> = if n <= MEDIAN_HEURISTIC_ROWS {
        (0..n).collect()
    } else {
        (0..MEDIAN_HEURISTIC_ROWS)
            .map(|t| t * n / MEDIAN_HEURISTIC_ROWS)
            .collect()
    };
    let mut d: Vec<f64> = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let d2: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(u, v)| (u - v) * (u - v))
                .sum();
            d.push(d2.sqrt());
        }
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let med = *m;
    if med > 0.0 {
        Ok(med)
    } else {
        Err(Error::invalid_argument(
            "median pairwise distance is zero; pass an explicit gaussian bandwidth",
        ))
    }
}
