use serde::{Deserialize, Serialize};

use super::engine::{solve_block, Block, Design, Func};
use super::{check_lambda, dropped_rows, non_finite, objective_of, to_model, DecisionModel, SolverReport};
use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::kernel::FunctionClass;
use crate::loss::{BentHingeLoss, SurrogateLoss};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualCdOptions {
    /// Maximum number of passes over all coordinates.
    pub max_iter: usize,
    /// Stop once every projected dual gradient is below this.
    pub tol: f64,
    /// Record the dual value after every coordinate visit.
    pub record_trace: bool,
}

impl Default for DualCdOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            tol: 1e-8,
            record_trace: false,
        }
    }
}

/// Result of [`fit_dual_cd_detailed`]. Dual variables are on the scale
/// of the weights: `0 <= alpha_i, gamma_i <= w_i`.
#[derive(Debug, Clone)]
pub struct DualCdFit {
    pub model: DecisionModel,
    pub report: SolverReport,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Dual value after every coordinate visit, when requested.
    pub dual_trace: Vec<f64>,
    /// Dual objective at the returned point.
    pub dual_objective: f64,
}

/// Bent-hinge fit by cyclic coordinate ascent on the box-constrained dual
/// `max sum_i alpha_i - n lambda ||f||^2` with
/// `f = -(1 / (2 n lambda)) sum_i (alpha_i + (c - 1) gamma_i) K~(x_i, .) W_{a_i}`.
pub fn fit_dual_cd(
    ds: &TrialDataset,
    c: f64,
    class: &FunctionClass,
    lambda: f64,
    opts: &DualCdOptions,
) -> Result<(DecisionModel, SolverReport)> {
    let fit = fit_dual_cd_detailed(ds, c, class, lambda, opts)?;
    Ok((fit.model, fit.report))
}

pub fn fit_dual_cd_detailed(
    ds: &TrialDataset,
    c: f64,
    class: &FunctionClass,
    lambda: f64,
    opts: &DualCdOptions,
) -> Result<DualCdFit> {
    check_lambda(lambda)?;
    if !(opts.tol > 0.0) {
        return Err(Error::invalid_argument("dual-cd tolerance must be positive"));
    }
    let loss = BentHingeLoss::new(c)?;
    let pieces = loss.pieces();
    let design = Design::new(ds, class);
    let dropped = dropped_rows(&design);
    let n = design.n;
    let anchor = Func::zero(&design);
    let blk = Block {
        design: &design,
        pieces: &pieces,
        tau: 2.0 * n as f64 * lambda,
        anchor: &anchor,
    };
    let mut trace = Vec::new();
    let sol = solve_block(
        &blk,
        None,
        opts.tol,
        opts.max_iter,
        opts.record_trace.then_some(&mut trace),
    );
    log::debug!(
        "dual-cd: {} passes, primal {:.6e}, duality gap {:.3e}",
        sol.sweeps,
        sol.primal / n as f64,
        sol.gap / n as f64
    );
    let alpha: Vec<f64> = (0..n).map(|i| design.weights[i] * sol.duals[i]).collect();
    let gamma: Vec<f64> = if pieces.len() > 1 {
        (0..n).map(|i| design.weights[i] * sol.duals[n + i]).collect()
    } else {
        vec![0.0; n]
    };
    let report = SolverReport {
        solver: "dual-cd".into(),
        objective: objective_of(&design, &sol.f, &loss, lambda),
        iterations: sol.sweeps,
        primal_residual: None,
        dual_residual: None,
        kkt_violation: Some(sol.kkt),
        converged: sol.converged,
        dropped_rows: dropped,
        objective_trace: Vec::new(),
    };
    non_finite(&report)?;
    if !report.converged {
        log::info!("dual-cd stopped after {} passes with KKT violation {:.3e}", sol.sweeps, sol.kkt);
    }
    let model = to_model(ds, &design, class, &sol.f, loss.spec(), lambda)?;
    Ok(DualCdFit {
        model,
        report,
        alpha,
        gamma,
        dual_trace: trace,
        dual_objective: sol.dual / n as f64,
    })
}
