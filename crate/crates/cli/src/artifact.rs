//! The model file written by `fit` and `tune` and read by `predict` and
//! `evaluate`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use owlset::recommend::{FittedRule, RegressionModel};
use owlset::solver::{DecisionModel, ModelFile, SolverReport};

use crate::config::Resolved;
use crate::CliError;

const FORMAT: &str = "owlset-artifact";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tuning {
    pub lambda: f64,
    pub delta: Option<f64>,
    pub mode: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Payload {
    Decision { model: ModelFile, report: SolverReport },
    Regression { model: RegressionModel },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact {
    pub format: String,
    pub version: u32,
    pub method: String,
    pub c: f64,
    pub delta: Option<f64>,
    pub config: Resolved,
    pub tuning: Option<Tuning>,
    pub payload: Payload,
}

impl Artifact {
    pub fn new(rule: &FittedRule, config: Resolved, tuning: Option<Tuning>) -> Self {
        let (c, delta, payload) = match rule {
            FittedRule::TwoStep { model, c, report } => (
                *c,
                None,
                Payload::Decision {
                    model: model.to_file(),
                    report: report.clone(),
                },
            ),
            FittedRule::OneStep { model, delta, report } => (
                config.c,
                Some(*delta),
                Payload::Decision {
                    model: model.to_file(),
                    report: report.clone(),
                },
            ),
            FittedRule::Plugin { model, c } => (*c, None, Payload::Regression { model: model.clone() }),
        };
        Self {
            format: FORMAT.into(),
            version: VERSION,
            method: rule.method().into(),
            c,
            delta,
            config,
            tuning,
            payload,
        }
    }

    pub fn rule(&self) -> Result<FittedRule, CliError> {
        Ok(match (&self.payload, self.method.as_str()) {
            (Payload::Decision { model, report }, "two-step") => FittedRule::TwoStep {
                model: DecisionModel::from_file(model.clone()).map_err(CliError::from)?,
                c: self.c,
                report: report.clone(),
            },
            (Payload::Decision { model, report }, "one-step") => FittedRule::OneStep {
                model: DecisionModel::from_file(model.clone()).map_err(CliError::from)?,
                delta: self.delta.unwrap_or(0.0),
                report: report.clone(),
            },
            (Payload::Regression { model }, "plugin") => FittedRule::Plugin {
                model: model.clone(),
                c: self.c,
            },
            (_, m) => return Err(CliError::data(format!("model file holds an inconsistent method '{m}'"))),
        })
    }

    /// Number of covariates the model expects.
    pub fn p(&self) -> usize {
        match &self.payload {
            Payload::Decision { model, .. } => model.p,
            Payload::Regression { model } => model.p,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::numerical(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read model {}: {e}", path.display())))?;
        let art: Artifact = serde_json::from_str(&text)
            .map_err(|e| CliError::data(format!("model {}: {e}", path.display())))?;
        if art.format != FORMAT || art.version != VERSION {
            return Err(CliError::data(format!(
                "model {}: unsupported format {} v{}",
                path.display(),
                art.format,
                art.version
            )));
        }
        Ok(art)
    }
}
