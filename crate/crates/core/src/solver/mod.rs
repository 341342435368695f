//! Minimisers of the regularised outcome-weighted objective
//! `(1/n) sum_i w_i l(<W_{a_i}, f(x_i)>) + lambda J(f)`.

mod admm;
mod dual_cd;
mod engine;
mod model;
mod reference;

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::kernel::FunctionClass;
use crate::loss::LossSpec;
use crate::registry::Registry;

pub use admm::{fit_admm, AdmmOptions};
pub use dual_cd::{fit_dual_cd, fit_dual_cd_detailed, DualCdFit, DualCdOptions};
pub use model::{DecisionModel, ModelFile, ModelForm};
pub use reference::{fit_reference, fit_reference_with, ReferenceOptions, REFERENCE_MAX_N, REFERENCE_MAX_P};

use engine::{Design, Func};

/// Summary of a solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub solver: String,
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: Option<f64>,
    pub dual_residual: Option<f64>,
    pub kkt_violation: Option<f64>,
    pub converged: bool,
    /// Rows left out of the loss because their weight is zero.
    pub dropped_rows: usize,
    /// Objective after each ADMM outer iteration.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
}

/// Options for every registered solver.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverOptions {
    pub admm: AdmmOptions,
    pub dual_cd: DualCdOptions,
}

/// `(1/n) sum_i w_i l(<W_{a_i}, f(x_i)>) + lambda J(f)` on `ds`.
pub fn objective(ds: &TrialDataset, model: &DecisionModel) -> Result<f64> {
    if ds.p() != model.p() || ds.k() != model.k() {
        return Err(Error::invalid_argument(format!(
            "model has p = {}, k = {} but data has p = {}, k = {}",
            model.p(),
            model.k(),
            ds.p(),
            ds.k()
        )));
    }
    let loss = model.loss().build()?;
    let simplex = model.simplex();
    let decisions = model.decisions(ds.features())?;
    let sum: f64 = decisions
        .iter()
        .enumerate()
        .map(|(i, f)| ds.weight(i) * loss.value(simplex.margin(ds.treatment(i), f)))
        .sum();
    Ok(sum / ds.n() as f64 + model.lambda() * model.penalty())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid_argument(format!("lambda must be positive, got {lambda}")))
    }
}

fn dropped_rows(design: &Design) -> usize {
    let dropped = design.weights.iter().filter(|w| **w <= 0.0).count();
    if dropped > 0 {
        log::warn!("{dropped} rows with zero weight left out of the loss");
    }
    dropped
}

/// Objective of `f` computed from its training values, for monitoring.
fn objective_of(design: &Design, f: &Func, loss: &dyn crate::loss::SurrogateLoss, lambda: f64) -> f64 {
    let u = f.margins(design);
    let sum: f64 = u
        .iter()
        .zip(&design.weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(u, w)| w * loss.value(*u))
        .sum();
    sum / design.n as f64 + lambda * f.norm_sq(design)
}

fn to_model(
    ds: &TrialDataset,
    design: &Design,
    class: &FunctionClass,
    f: &Func,
    loss: LossSpec,
    lambda: f64,
) -> Result<DecisionModel> {
    let m = design.m;
    let form = match class {
        FunctionClass::Linear => ModelForm::Linear {
            coefficients: DMatrix::from_row_slice(ds.p() + 1, m, &f.beta),
        },
        FunctionClass::Kernel(spec) => {
            let alpha = DMatrix::from_row_slice(design.n, m, &f.coef);
            let intercepts = DVector::from_iterator(m, alpha.column_iter().map(|c| c.sum()));
            ModelForm::Kernel {
                kernel: *spec,
                alpha,
                intercepts,
                training: ds.features().clone(),
            }
        }
    };
    let model = DecisionModel::new(ds.k(), ds.p(), loss, lambda, form)?;
    Ok(model)
}

fn non_finite(report: &SolverReport) -> Result<()> {
    if report.objective.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{} produced a non-finite objective", report.solver)))
    }
}

/// A registered minimiser of the objective.
pub trait Solver: Send + Sync {
    fn name(&self) -> &'static str;

    fn fit(
        &self,
        ds: &TrialDataset,
        loss: &LossSpec,
        class: &FunctionClass,
        lambda: f64,
        opts: &SolverOptions,
    ) -> Result<(DecisionModel, SolverReport)>;
}

struct AdmmSolver;

impl Solver for AdmmSolver {
    fn name(&self) -> &'static str {
        "admm"
    }

    fn fit(
        &self,
        ds: &TrialDataset,
        loss: &LossSpec,
        class: &FunctionClass,
        lambda: f64,
        opts: &SolverOptions,
    ) -> Result<(DecisionModel, SolverReport)> {
        fit_admm(ds, loss, class, lambda, &opts.admm)
    }
}

struct DualCdSolver;

impl Solver for DualCdSolver {
    fn name(&self) -> &'static str {
        "dual-cd"
    }

    fn fit(
        &self,
        ds: &TrialDataset,
        loss: &LossSpec,
        class: &FunctionClass,
        lambda: f64,
        opts: &SolverOptions,
    ) -> Result<(DecisionModel, SolverReport)> {
        if loss.family != "bent-hinge" && loss.family != "hinge" {
            return Err(Error::invalid_argument(format!(
                "dual-cd handles the hinge and bent-hinge losses, not '{}'",
                loss.family
            )));
        }
        fit_dual_cd(ds, loss.c, class, lambda, &opts.dual_cd)
    }
}

/// Solvers selectable by name.
pub fn solver_registry() -> &'static Registry<dyn Solver> {
    static REG: OnceLock<Registry<dyn Solver>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut reg: Registry<dyn Solver> = Registry::new("solver");
        reg.register("admm", |_| Ok(Box::new(AdmmSolver)));
        reg.register("dual-cd", |_| Ok(Box::new(DualCdSolver)));
        reg
    })
}

/// Dual coordinate descent for hinge-type losses, ADMM otherwise.
pub fn default_solver(loss: &LossSpec) -> &'static str {
    match loss.family.as_str() {
        "hinge" | "bent-hinge" => "dual-cd",
        _ => "admm",
    }
}

/// Fits with the named solver, or the default one for the loss.
pub fn fit(
    ds: &TrialDataset,
    loss: &LossSpec,
    class: &FunctionClass,
    lambda: f64,
    solver: Option<&str>,
    opts: &SolverOptions,
) -> Result<(DecisionModel, SolverReport)> {
    let name = solver.unwrap_or_else(|| default_solver(loss));
    solver_registry().build(name)?.fit(ds, loss, class, lambda, opts)
}
