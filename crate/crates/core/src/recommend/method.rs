use std::sync::OnceLock;

use crate::data::{Covariates, TrialDataset};
use crate::error::{Error, Result};
use crate::kernel::KernelChoice;
use crate::loss::LossSpec;
use crate::recommendation::{argmax, argmin, optimal_aitr, Recommendation};
use crate::registry::Registry;
use crate::solver::{self, DecisionModel, SolverOptions, SolverReport};

use super::{fit_regression, one_step_from_margins, two_step_from_margins, RegressionModel};

/// Everything a method needs to produce a fitted rule.
#[derive(Debug, Clone)]
pub struct MethodConfig {
    pub c: f64,
    /// Loss family override; each method has its own default.
    pub loss: Option<String>,
    pub kernel: KernelChoice,
    /// Regularisation weight (ridge weight for the plug-in).
    pub lambda: f64,
    /// One-step threshold.
    pub delta: f64,
    pub solver: Option<String>,
    pub solver_options: SolverOptions,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            c: 1.2,
            loss: None,
            kernel: KernelChoice::Linear,
            lambda: 0.01,
            delta: 0.0,
            solver: None,
            solver_options: SolverOptions::default(),
        }
    }
}

/// A fitted recommendation rule.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedRule {
    TwoStep {
        model: DecisionModel,
        c: f64,
        report: SolverReport,
    },
    OneStep {
        model: DecisionModel,
        delta: f64,
        report: SolverReport,
    },
    Plugin {
        model: RegressionModel,
        c: f64,
    },
}

impl FittedRule {
    pub fn method(&self) -> &'static str {
        match self {
            FittedRule::TwoStep { .. } => "two-step",
            FittedRule::OneStep { .. } => "one-step",
            FittedRule::Plugin { .. } => "plugin",
        }
    }

    pub fn k(&self) -> usize {
        match self {
            FittedRule::TwoStep { model, .. } | FittedRule::OneStep { model, .. } => model.k(),
            FittedRule::Plugin { model, .. } => model.k,
        }
    }

    /// Prefix of the per-treatment score columns: angle margins `m` or
    /// fitted means `mu`.
    pub fn score_name(&self) -> &'static str {
        match self {
            FittedRule::Plugin { .. } => "mu",
            _ => "m",
        }
    }

    pub fn solver_report(&self) -> Option<&SolverReport> {
        match self {
            FittedRule::TwoStep { report, .. } | FittedRule::OneStep { report, .. } => Some(report),
            FittedRule::Plugin { .. } => None,
        }
    }

    /// Angle margins, or floored fitted means for the plug-in.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            FittedRule::TwoStep { model, .. } | FittedRule::OneStep { model, .. } => model.margins(x),
            FittedRule::Plugin { model, .. } => model.predict(x),
        }
    }

    pub fn scores_batch(&self, x: &Covariates) -> Result<Vec<Vec<f64>>> {
        match self {
            FittedRule::TwoStep { model, .. } | FittedRule::OneStep { model, .. } => model.margins_batch(x),
            FittedRule::Plugin { model, .. } => x.rows().map(|r| model.predict(r)).collect(),
        }
    }

    /// 0-based single recommendation from scores.
    pub fn itr_from_scores(&self, scores: &[f64]) -> usize {
        match self {
            FittedRule::Plugin { .. } => argmin(scores),
            _ => argmax(scores),
        }
    }

    pub fn recommend_from_scores(&self, scores: &[f64]) -> Result<Recommendation> {
        match self {
            FittedRule::TwoStep { model, c, .. } => {
                let loss = model.loss().build()?;
                Ok(two_step_from_margins(loss.as_ref(), scores, *c)?.0)
            }
            FittedRule::OneStep { delta, .. } => Ok(one_step_from_margins(scores, *delta)),
            FittedRule::Plugin { c, .. } => optimal_aitr(scores, *c),
        }
    }

    pub fn itr(&self, x: &[f64]) -> Result<usize> {
        Ok(self.itr_from_scores(&self.scores(x)?))
    }

    pub fn recommend(&self, x: &[f64]) -> Result<Recommendation> {
        self.recommend_from_scores(&self.scores(x)?)
    }

    /// Replaces the one-step threshold; other rules are returned as is.
    pub fn with_delta(self, delta: f64) -> Self {
        match self {
            FittedRule::OneStep { model, report, .. } => FittedRule::OneStep { model, delta, report },
            other => other,
        }
    }
}

/// A way of producing a fitted rule from trial data.
pub trait Method: Send + Sync {
    fn name(&self) -> &'static str;

    /// The loss the method trains with, if any.
    fn loss(&self, cfg: &MethodConfig) -> Result<Option<LossSpec>>;

    /// Whether the method has a threshold tuned after the regularisation.
    fn tunes_delta(&self) -> bool {
        false
    }

    fn fit(&self, ds: &TrialDataset, cfg: &MethodConfig) -> Result<FittedRule>;
}

fn fit_decision(ds: &TrialDataset, cfg: &MethodConfig, loss: &LossSpec) -> Result<(DecisionModel, SolverReport)> {
    let class = cfg.kernel.resolve(ds.features())?;
    solver::fit(ds, loss, &class, cfg.lambda, cfg.solver.as_deref(), &cfg.solver_options)
}

struct TwoStep;

impl Method for TwoStep {
    fn name(&self) -> &'static str {
        "two-step"
    }

    fn loss(&self, cfg: &MethodConfig) -> Result<Option<LossSpec>> {
        let family = cfg.loss.as_deref().unwrap_or("squared");
        let spec = LossSpec::new(family, 1.0)?;
        if !spec.build()?.is_differentiable() {
            return Err(Error::invalid_argument(format!(
                "two-step needs a differentiable loss, got '{family}'"
            )));
        }
        Ok(Some(spec))
    }

    fn fit(&self, ds: &TrialDataset, cfg: &MethodConfig) -> Result<FittedRule> {
        let loss = self.loss(cfg)?.expect("two-step has a loss");
        let (model, report) = fit_decision(ds, cfg, &loss)?;
        Ok(FittedRule::TwoStep { model, c: cfg.c, report })
    }
}

struct OneStep;

impl Method for OneStep {
    fn name(&self) -> &'static str {
        "one-step"
    }

    fn loss(&self, cfg: &MethodConfig) -> Result<Option<LossSpec>> {
        let family = cfg.loss.as_deref().unwrap_or("bent-hinge");
        if family != "bent-hinge" {
            return Err(Error::invalid_argument(format!(
                "one-step trains with the bent-hinge loss, got '{family}'"
            )));
        }
        Ok(Some(LossSpec::new(family, cfg.c)?))
    }

    fn tunes_delta(&self) -> bool {
        true
    }

    fn fit(&self, ds: &TrialDataset, cfg: &MethodConfig) -> Result<FittedRule> {
        let loss = self.loss(cfg)?.expect("one-step has a loss");
        let (model, report) = fit_decision(ds, cfg, &loss)?;
        Ok(FittedRule::OneStep {
            model,
            delta: cfg.delta,
            report,
        })
    }
}

struct Plugin;

impl Method for Plugin {
    fn name(&self) -> &'static str {
        "plugin"
    }

    fn loss(&self, _cfg: &MethodConfig) -> Result<Option<LossSpec>> {
        Ok(None)
    }

    fn fit(&self, ds: &TrialDataset, cfg: &MethodConfig) -> Result<FittedRule> {
        if !(cfg.c >= 1.0) {
            return Err(Error::invalid_argument(format!("c must be >= 1, got {}", cfg.c)));
        }
        let class = cfg.kernel.resolve(ds.features())?;
        Ok(FittedRule::Plugin {
            model: fit_regression(ds, &class, cfg.lambda)?,
            c: cfg.c,
        })
    }
}

/// Recommendation methods selectable by name.
pub fn method_registry() -> &'static Registry<dyn Method> {
    static REG: OnceLock<Registry<dyn Method>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut reg: Registry<dyn Method> = Registry::new("method");
        reg.register("two-step", |_| Ok(Box::new(TwoStep)));
        reg.register("one-step", |_| Ok(Box::new(OneStep)));
        reg.register("plugin", |_| Ok(Box::new(Plugin)));
        reg
    })
}
