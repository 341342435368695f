use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, TrialDataset};
use crate::error::{Error, Result};
use crate::kernel::{symmetric_gram, FunctionClass, KernelSpec};
use crate::recommendation::{optimal_aitr, Recommendation};

/// Floor applied to fitted means before they enter a ratio.
pub const MU_FLOOR: f64 = 1e-6;

/// Ridge fit for one treatment arm. The intercept is not penalised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum ArmFit {
    Linear { coefficients: Vec<f64>, intercept: f64 },
    Kernel { alpha: Vec<f64>, intercept: f64, training: Covariates },
}

/// Per-treatment conditional-mean estimates `mu_j(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub k: usize,
    pub p: usize,
    /// `None` for primal linear ridge.
    pub kernel: Option<KernelSpec>,
    pub ridge: f64,
    pub arms: Vec<ArmFit>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl RegressionModel {
    /// Unclamped fitted means.
    pub fn predict_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.p {
            return Err(Error::invalid_argument(format!(
                "covariate vector has {} entries, model expects {}",
                x.len(),
                self.p
            )));
        }
        Ok(self
            .arms
            .iter()
            .map(|arm| match arm {
                ArmFit::Linear { coefficients, intercept } => {
                    intercept + coefficients.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                }
                ArmFit::Kernel { alpha, intercept, training } => {
                    let kern = self.kernel.expect("kernel arms carry a kernel").build();
                    intercept
                        + training
                            .rows()
                            .zip(alpha)
                            .map(|(r, a)| a * kern.eval(r, x))
                            .sum::<f64>()
                }
            })
            .collect())
    }

    /// Fitted means floored at [`MU_FLOOR`].
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict_raw(x)?.into_iter().map(|m| m.max(MU_FLOOR)).collect())
    }
}

/// Ridge regression of `y` on `x` within each treatment arm, minimising
/// `(1/n_j) sum (y - f(x))^2 + ridge ||f||^2` with a free intercept.
pub fn fit_regression(ds: &TrialDataset, class: &FunctionClass, ridge: f64) -> Result<RegressionModel> {
    if !(ridge.is_finite() && ridge > 0.0) {
        return Err(Error::invalid_argument(format!("ridge must be positive, got {ridge}")));
    }
    let arms = (0..ds.k())
        .map(|j| {
            let idx: Vec<usize> = (0..ds.n()).filter(|&i| ds.treatment(i) == j).collect();
            if idx.is_empty() {
                return Err(Error::invalid_dataset(format!("treatment {} has no observations", j + 1)));
            }
            let x = ds.features().select(&idx);
            let y: Vec<f64> = idx.iter().map(|&i| ds.outcome(i)).collect();
            match class {
                FunctionClass::Linear => fit_linear_arm(&x, &y, ridge),
                FunctionClass::Kernel(spec) => fit_kernel_arm(spec, &x, &y, ridge),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegressionModel {
        k: ds.k(),
        p: ds.p(),
        kernel: match class {
            FunctionClass::Linear => None,
            FunctionClass::Kernel(spec) => Some(*spec),
        },
        ridge,
        arms,
        metadata: BTreeMap::new(),
    })
}

fn fit_linear_arm(x: &Covariates, y: &[f64], ridge: f64) -> Result<ArmFit> {
    let (n, p) = (x.nrows(), x.ncols());
    let nf = n as f64;
    let xbar: Vec<f64> = (0..p).map(|t| x.rows().map(|r| r[t]).sum::<f64>() / nf).collect();
    let ybar = y.iter().sum::<f64>() / nf;
    let xc = DMatrix::from_fn(n, p, |i, t| x.row(i)[t] - xbar[t]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ybar));
    let mut gram = xc.transpose() * &xc;
    for t in 0..p {
        gram[(t, t)] += nf * ridge;
    }
    let rhs = xc.transpose() * yc;
    let beta = gram
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Numerical("ridge normal equations are not positive definite".into()))?;
    let intercept = ybar - beta.iter().zip(&xbar).map(|(b, m)| b * m).sum::<f64>();
    Ok(ArmFit::Linear {
        coefficients: beta.iter().copied().collect(),
        intercept,
    })
}

fn fit_kernel_arm(spec: &KernelSpec, x: &Covariates, y: &[f64], ridge: f64) -> Result<ArmFit> {
    let n = x.nrows();
    let k = symmetric_gram(spec.build().as_ref(), x);
    let mut sys = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        for j in 0..n {
            sys[(i, j)] = k[(i, j)];
        }
        sys[(i, i)] += n as f64 * ridge;
        sys[(i, n)] = 1.0;
        sys[(n, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    for (i, v) in y.iter().enumerate() {
        rhs[i] = *v;
    }
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("kernel ridge system is singular".into()))?;
    Ok(ArmFit::Kernel {
        alpha: sol.rows(0, n).iter().copied().collect(),
        intercept: sol[n],
        training: x.clone(),
    })
}

/// Plug-in near-optimal set from the (floored) fitted means.
pub fn recommend_plugin(reg: &RegressionModel, x: &[f64], c: f64) -> Result<Recommendation> {
    optimal_aitr(&reg.predict(x)?, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trial(y: impl Fn(&[f64], usize) -> f64) -> TrialDataset {
        let n = 60;
        let x: Vec<f64> = (0..n * 2).map(|v| ((v * 37 % 101) as f64) / 50.0 - 1.0).collect();
        let cov = Covariates::new(n, 2, x).unwrap();
        let a: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let out: Vec<f64> = (0..n).map(|i| y(cov.row(i), a[i])).collect();
        TrialDataset::new(cov, a, out, vec![0.5; n], 2).unwrap()
    }

    #[test]
    fn constant_outcomes_give_constant_means() {
        let ds = trial(|_, _| 3.0);
        for class in [FunctionClass::Linear, FunctionClass::Kernel(KernelSpec::gaussian(1.0).unwrap())] {
            let reg = fit_regression(&ds, &class, 1e-6).unwrap();
            for x in [[0.0, 0.0], [0.7, -0.4]] {
                for m in reg.predict(&x).unwrap() {
                    assert!((m - 3.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn exact_linear_data_is_recovered() {
        let ds = trial(|x, a| 5.0 + (a as f64 + 1.0) * x[0] - 0.5 * x[1]);
        let reg = fit_regression(&ds, &FunctionClass::Linear, 1e-12).unwrap();
        for (a, arm) in reg.arms.iter().enumerate() {
            let ArmFit::Linear { coefficients, intercept } = arm else { panic!() };
            assert!((coefficients[0] - (a as f64 + 1.0)).abs() < 1e-6);
            assert!((coefficients[1] + 0.5).abs() < 1e-6);
            assert!((intercept - 5.0).abs() < 1e-6);
        }
    }

    #[test]
    fn negative_fits_are_floored() {
        let reg = RegressionModel {
            k: 2,
            p: 1,
            kernel: None,
            ridge: 1.0,
            arms: vec![
                ArmFit::Linear { coefficients: vec![0.0], intercept: -0.1 },
                ArmFit::Linear { coefficients: vec![0.0], intercept: 2.0 },
            ],
            metadata: BTreeMap::new(),
        };
        assert_eq!(reg.predict(&[1.0]).unwrap(), vec![MU_FLOOR, 2.0]);
        assert_eq!(recommend_plugin(&reg, &[1.0], 1.2).unwrap().labels(), vec![1]);
    }

    #[test]
    fn plugin_examples() {
        let reg = RegressionModel {
            k: 3,
            p: 0,
            kernel: None,
            ridge: 1.0,
            arms: [1.0, 1.1, 1.5]
                .iter()
                .map(|m| ArmFit::Linear { coefficients: vec![], intercept: *m })
                .collect(),
            metadata: BTreeMap::new(),
        };
        assert_eq!(recommend_plugin(&reg, &[], 1.2).unwrap().labels(), vec![1, 2]);
        assert_eq!(recommend_plugin(&reg, &[], 1.0).unwrap().labels(), vec![1]);
    }
}
