//! Fitted decision functions and their serialized form.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Covariates;
use crate::error::{Error, Result};
use crate::kernel::{symmetric_gram, FunctionClass, KernelSpec};
use crate::loss::LossSpec;
use crate::simplex::{make_simplex, SimplexCode};

const FORMAT_TAG: &str = "owlset-decision-model";
const FORMAT_VERSION: u32 = 1;

/// Parameterization of `f`.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelForm {
    /// `f_j(x) = (x, 1)^T beta_j`. Shape `(p + 1) x (k - 1)`, intercept in
    /// the last row.
    Linear { coefficients: DMatrix<f64> },
    /// `f_j(x) = sum_i alpha_ij K(x_i, x) + alpha_0j`.
    Kernel {
        kernel: KernelSpec,
        alpha: DMatrix<f64>,
        intercepts: DVector<f64>,
        training: Covariates,
    },
}

/// A fitted `f: X -> R^{k-1}` with everything needed to compute angle
/// margins.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionModel {
    k: usize,
    p: usize,
    loss: LossSpec,
    lambda: f64,
    form: ModelForm,
    simplex: SimplexCode,
    /// Free-form provenance (resolved configuration, solver summary).
    pub metadata: BTreeMap<String, String>,
}

impl DecisionModel {
    pub fn new(k: usize, p: usize, loss: LossSpec, lambda: f64, form: ModelForm) -> Result<Self> {
        let simplex = make_simplex(k)?;
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidModel(format!("lambda must be positive, got {lambda}")));
        }
        let m = k - 1;
        match &form {
            ModelForm::Linear { coefficients } => {
                if coefficients.shape() != (p + 1, m) {
                    return Err(Error::InvalidModel(format!(
                        "linear coefficients have shape {:?}, expected ({}, {m})",
                        coefficients.shape(),
                        p + 1
                    )));
                }
                check_finite(coefficients.iter())?;
            }
            ModelForm::Kernel { alpha, intercepts, training, .. } => {
                let n = training.nrows();
                if training.ncols() != p {
                    return Err(Error::InvalidModel(format!(
                        "training covariates have {} columns, expected {p}",
                        training.ncols()
                    )));
                }
                if alpha.shape() != (n, m) || intercepts.len() != m {
                    return Err(Error::InvalidModel(format!(
                        "kernel coefficients have shape {:?} and {} intercepts, expected ({n}, {m}) and {m}",
                        alpha.shape(),
                        intercepts.len()
                    )));
                }
                check_finite(alpha.iter().chain(intercepts.iter()))?;
            }
        }
        Ok(Self {
            k,
            p,
            loss,
            lambda,
            form,
            simplex,
            metadata: BTreeMap::new(),
        })
    }

    /// The zero function of the given class.
    pub fn zero(k: usize, training: &Covariates, class: &FunctionClass, loss: LossSpec, lambda: f64) -> Result<Self> {
        let p = training.ncols();
        let m = k.saturating_sub(1);
        let form = match class {
            FunctionClass::Linear => ModelForm::Linear {
                coefficients: DMatrix::zeros(p + 1, m),
            },
            FunctionClass::Kernel(spec) => ModelForm::Kernel {
                kernel: *spec,
                alpha: DMatrix::zeros(training.nrows(), m),
                intercepts: DVector::zeros(m),
                training: training.clone(),
            },
        };
        Self::new(k, p, loss, lambda, form)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn loss(&self) -> &LossSpec {
        &self.loss
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn form(&self) -> &ModelForm {
        &self.form
    }

    pub fn simplex(&self) -> &SimplexCode {
        &self.simplex
    }

    pub fn function_class(&self) -> FunctionClass {
        match &self.form {
            ModelForm::Linear { .. } => FunctionClass::Linear,
            ModelForm::Kernel { kernel, .. } => FunctionClass::Kernel(*kernel),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.p {
            return Err(Error::invalid_argument(format!(
                "covariate vector has {} entries, model expects {}",
                x.len(),
                self.p
            )));
        }
        Ok(())
    }

    /// `f(x)` in `R^{k-1}`.
    pub fn decision(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.decision_unchecked(x))
    }

    fn decision_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match &self.form {
            ModelForm::Linear { coefficients } => (0..self.k - 1)
                .map(|j| {
                    let col = coefficients.column(j);
                    x.iter().zip(col.iter()).map(|(a, b)| a * b).sum::<f64>() + col[self.p]
                })
                .collect(),
            ModelForm::Kernel { kernel, alpha, intercepts, training } => {
                let kern = kernel.build();
                let kv: Vec<f64> = training.rows().map(|r| kern.eval(r, x)).collect();
                (0..self.k - 1)
                    .map(|j| {
                        alpha.column(j).iter().zip(&kv).map(|(a, b)| a * b).sum::<f64>()
                            + intercepts[j]
                    })
                    .collect()
            }
        }
    }

    /// `f(x_i)` for every row, computed in parallel.
    pub fn decisions(&self, x: &Covariates) -> Result<Vec<Vec<f64>>> {
        if x.ncols() != self.p {
            return Err(Error::invalid_argument(format!(
                "covariates have {} columns, model expects {}",
                x.ncols(),
                self.p
            )));
        }
        Ok((0..x.nrows())
            .into_par_iter()
            .map(|i| self.decision_unchecked(x.row(i)))
            .collect())
    }

    /// Angle margins `<W_j, f(x)>`, one per treatment.
    pub fn margins(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.simplex.margins(&self.decision(x)?))
    }

    /// Margins for every row.
    pub fn margins_batch(&self, x: &Covariates) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .decisions(x)?
            .iter()
            .map(|f| self.simplex.margins(f))
            .collect())
    }

    /// `J(f)`: `sum_j ||beta_j||^2` or `sum_j alpha_j^T K alpha_j + alpha_0j^2`.
    pub fn penalty(&self) -> f64 {
        match &self.form {
            ModelForm::Linear { coefficients } => coefficients.iter().map(|v| v * v).sum(),
            ModelForm::Kernel { kernel, alpha, intercepts, training } => {
                let gram = symmetric_gram(kernel.build().as_ref(), training);
                let ka = &gram * alpha;
                alpha.iter().zip(ka.iter()).map(|(a, b)| a * b).sum::<f64>()
                    + intercepts.iter().map(|v| v * v).sum::<f64>()
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        Self::from_file(file)
    }

    pub fn to_file(&self) -> ModelFile {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            m.row_iter().map(|r| r.iter().copied().collect()).collect()
        };
        let (form, kernel, coefficients, intercepts, training) = match &self.form {
            ModelForm::Linear { coefficients } => ("linear", None, rows(coefficients), None, None),
            ModelForm::Kernel { kernel, alpha, intercepts, training } => (
                "kernel",
                Some(*kernel),
                rows(alpha),
                Some(intercepts.iter().copied().collect()),
                Some(training.rows().map(<[f64]>::to_vec).collect()),
            ),
        };
        ModelFile {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            form: form.to_string(),
            k: self.k,
            p: self.p,
            loss: self.loss.clone(),
            lambda: self.lambda,
            kernel,
            coefficients,
            intercepts,
            training_covariates: training,
            metadata: self.metadata.clone(),
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.format != FORMAT_TAG || file.version != FORMAT_VERSION {
            return Err(Error::InvalidModel(format!(
                "unsupported model format {} v{}",
                file.format, file.version
            )));
        }
        let loss = LossSpec::new(&file.loss.family, file.loss.c)
            .map_err(|e| Error::InvalidModel(e.to_string()))?;
        let m = file.k.saturating_sub(1);
        let matrix = |rows: &[Vec<f64>]| -> Result<DMatrix<f64>> {
            if rows.iter().any(|r| r.len() != m) {
                return Err(Error::InvalidModel(format!("coefficient rows must have {m} entries")));
            }
            Ok(DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]))
        };
        let form = match file.form.as_str() {
            "linear" => ModelForm::Linear {
                coefficients: matrix(&file.coefficients)?,
            },
            "kernel" => {
                let kernel = file
                    .kernel
                    .ok_or_else(|| Error::InvalidModel("kernel model without kernel spec".into()))?;
                let intercepts = file
                    .intercepts
                    .ok_or_else(|| Error::InvalidModel("kernel model without intercepts".into()))?;
                let training = file
                    .training_covariates
                    .ok_or_else(|| Error::InvalidModel("kernel model without training covariates".into()))?;
                let training = if training.is_empty() {
                    Covariates::new(0, file.p, Vec::new())?
                } else {
                    Covariates::from_rows(&training).map_err(|e| Error::InvalidModel(e.to_string()))?
                };
                ModelForm::Kernel {
                    kernel,
                    alpha: matrix(&file.coefficients)?,
                    intercepts: DVector::from_vec(intercepts),
                    training,
                }
            }
            other => return Err(Error::InvalidModel(format!("unknown model form '{other}'"))),
        };
        let mut model = Self::new(file.k, file.p, loss, file.lambda, form)?;
        model.metadata = file.metadata;
        Ok(model)
    }
}

fn check_finite<'a>(mut it: impl Iterator<Item = &'a f64>) -> Result<()> {
    if it.any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel("non-finite coefficient".into()));
    }
    Ok(())
}

/// On-disk layout of a [`DecisionModel`]. Matrices are stored row by row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub form: String,
    pub k: usize,
    pub p: usize,
    pub loss: LossSpec,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    pub coefficients: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercepts: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_covariates: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}
