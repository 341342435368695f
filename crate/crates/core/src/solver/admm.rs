use serde::{Deserialize, Serialize};

use super::engine::{solve_block, Block, Design, Func};
use super::{check_lambda, dropped_rows, non_finite, objective_of, to_model, DecisionModel, SolverReport};
use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::kernel::FunctionClass;
use crate::loss::LossSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmOptions {
    /// Initial step size.
    pub rho: f64,
    /// Double or halve `rho` when the residuals differ by more than 10x.
    pub adaptive_rho: bool,
    pub max_iter: usize,
    /// Residual tolerance, scaled by the square root of the coefficient
    /// dimension.
    pub tol: f64,
    /// Largest projected dual gradient at which a block solve stops.
    pub inner_tol: f64,
    pub inner_max_sweeps: usize,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            adaptive_rho: true,
            max_iter: 5000,
            tol: 1e-5,
            inner_tol: 1e-9,
            inner_max_sweeps: 2000,
        }
    }
}

/// ADMM on the split `min sum_i w_i [l_1(u_i(B)) + l_2(u_i(G))] + n lambda J(B)`
/// subject to `B = G`. Each block is solved by dual coordinate ascent,
/// warm-started from the previous outer iteration. Without a bent part
/// the problem is solved directly.
pub fn fit_admm(
    ds: &TrialDataset,
    loss: &LossSpec,
    class: &FunctionClass,
    lambda: f64,
    opts: &AdmmOptions,
) -> Result<(DecisionModel, SolverReport)> {
    check_lambda(lambda)?;
    if !(opts.rho.is_finite() && opts.rho > 0.0) {
        return Err(Error::invalid_argument(format!("rho must be positive, got {}", opts.rho)));
    }
    if !(opts.tol > 0.0 && opts.inner_tol > 0.0) {
        return Err(Error::invalid_argument("admm tolerances must be positive"));
    }
    let surrogate = loss.build()?;
    let design = Design::new(ds, class);
    let dropped = dropped_rows(&design);
    let n = design.n as f64;
    let base = [surrogate.base_piece()];
    let inner = opts.inner_tol;

    let Some(bent) = surrogate.bent_piece() else {
        let zero = Func::zero(&design);
        let blk = Block {
            design: &design,
            pieces: &base,
            tau: 2.0 * n * lambda,
            anchor: &zero,
        };
        let sol = solve_block(&blk, None, inner, opts.inner_max_sweeps.max(opts.max_iter), None);
        let obj = objective_of(&design, &sol.f, surrogate.as_ref(), lambda);
        let report = SolverReport {
            solver: "admm".into(),
            objective: obj,
            iterations: sol.sweeps,
            primal_residual: Some(0.0),
            dual_residual: Some(0.0),
            kkt_violation: None,
            converged: sol.converged,
            dropped_rows: dropped,
            objective_trace: vec![obj],
        };
        non_finite(&report)?;
        let model = to_model(ds, &design, class, &sol.f, surrogate.spec(), lambda)?;
        return Ok((model, report));
    };
    let bent = [bent];

    let threshold = opts.tol * (design.coefficient_dim() as f64).sqrt();
    let mut rho = opts.rho;
    let mut b = Func::zero(&design);
    let mut g = Func::zero(&design);
    let mut z = Func::zero(&design);
    let mut duals_b: Option<Vec<f64>> = None;
    let mut duals_g: Option<Vec<f64>> = None;
    let mut trace = Vec::new();
    let (mut r, mut s) = (f64::INFINITY, f64::INFINITY);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let tau_b = 2.0 * n * lambda + rho;
        let anchor_b = g.combine(rho / tau_b, &z, -1.0 / tau_b);
        let sol_b = solve_block(
            &Block {
                design: &design,
                pieces: &base,
                tau: tau_b,
                anchor: &anchor_b,
            },
            duals_b.take(),
            inner,
            opts.inner_max_sweeps,
            None,
        );
        b = sol_b.f;
        duals_b = Some(sol_b.duals);

        let anchor_g = b.combine(1.0, &z, 1.0 / rho);
        let sol_g = solve_block(
            &Block {
                design: &design,
                pieces: &bent,
                tau: rho,
                anchor: &anchor_g,
            },
            duals_g.take(),
            inner,
            opts.inner_max_sweeps,
            None,
        );
        let g_prev = std::mem::replace(&mut g, sol_g.f);
        duals_g = Some(sol_g.duals);

        let diff = b.combine(1.0, &g, -1.0);
        z = z.combine(1.0, &diff, rho);
        r = diff.norm_sq(&design).sqrt();
        s = rho * g.combine(1.0, &g_prev, -1.0).norm_sq(&design).sqrt();
        trace.push(objective_of(&design, &b, surrogate.as_ref(), lambda));
        if r.max(s) < threshold {
            converged = true;
            break;
        }
        if opts.adaptive_rho {
            if r > 10.0 * s {
                rho *= 2.0;
            } else if s > 10.0 * r {
                rho /= 2.0;
            }
        }
    }
    let report = SolverReport {
        solver: "admm".into(),
        objective: objective_of(&design, &b, surrogate.as_ref(), lambda),
        iterations,
        primal_residual: Some(r),
        dual_residual: Some(s),
        kkt_violation: None,
        converged,
        dropped_rows: dropped,
        objective_trace: trace,
    };
    non_finite(&report)?;
    if !converged {
        log::info!("admm stopped after {iterations} iterations with residuals {r:.3e} / {s:.3e}");
    }
    let model = to_model(ds, &design, class, &b, surrogate.spec(), lambda)?;
    Ok((model, report))
}
