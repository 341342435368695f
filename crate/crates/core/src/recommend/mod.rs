//! Single- and set-valued recommendations from fitted models.

mod method;
mod output;
mod propensity;
mod regression;

pub use method::{method_registry, FittedRule, Method, MethodConfig};
pub use output::write_predictions;
pub use propensity::{fit_propensity, transform_outcome, PropensityModel, PROPENSITY_FLOOR};
pub use regression::{fit_regression, recommend_plugin, ArmFit, RegressionModel, MU_FLOOR};

use crate::error::{Error, Result};
use crate::loss::{floored_derivative, SurrogateLoss};
use crate::recommendation::{argmax, Recommendation};
use crate::solver::DecisionModel;

/// `<W_j, f(x)>` for every treatment.
pub fn angle_margins(model: &DecisionModel, x: &[f64]) -> Result<Vec<f64>> {
    model.margins(x)
}

/// 1-based treatment with the largest angle margin.
pub fn predict_itr(model: &DecisionModel, x: &[f64]) -> Result<usize> {
    Ok(argmax(&model.margins(x)?) + 1)
}

/// Two-step set from margins: `{j : l'(m_(1)) / l'(m_j) <= c}`. The flag
/// reports whether any derivative hit the floor.
pub fn two_step_from_margins(
    loss: &dyn SurrogateLoss,
    margins: &[f64],
    c: f64,
) -> Result<(Recommendation, bool)> {
    if !loss.is_differentiable() {
        return Err(Error::InvalidModel(format!(
            "the two-step rule needs a differentiable loss, model uses '{}'",
            loss.token()
        )));
    }
    if !(c >= 1.0) {
        return Err(Error::invalid_argument(format!("c must be >= 1, got {c}")));
    }
    let top = argmax(margins);
    let (d_top, mut floored) = floored_derivative(loss, margins[top]);
    let mut members = Vec::new();
    for (j, &m) in margins.iter().enumerate() {
        let (d, f) = floored_derivative(loss, m);
        floored |= f;
        if j == top || d_top / d <= c {
            members.push(j);
        }
    }
    Ok((Recommendation::new(members, margins.len())?, floored))
}

/// The two-step estimator of the near-optimal set.
pub fn recommend_two_step(model: &DecisionModel, x: &[f64], c: f64) -> Result<Recommendation> {
    let loss = model.loss().build()?;
    Ok(two_step_from_margins(loss.as_ref(), &model.margins(x)?, c)?.0)
}

/// One-step set from margins: `{j : m_j >= delta |min_i m_i|}`, or the
/// largest-margin treatment when that set is empty.
pub fn one_step_from_margins(margins: &[f64], delta: f64) -> Recommendation {
    let scale = margins.iter().copied().fold(f64::INFINITY, f64::min).abs();
    let threshold = delta * scale;
    let members: Vec<usize> = (0..margins.len()).filter(|&j| margins[j] >= threshold).collect();
    if members.is_empty() {
        Recommendation::singleton(argmax(margins))
    } else {
        Recommendation::new(members, margins.len()).expect("indices are in range")
    }
}

/// The one-step estimator with normalised threshold `delta`.
pub fn recommend_one_step(model: &DecisionModel, x: &[f64], delta: f64) -> Result<Recommendation> {
    Ok(one_step_from_margins(&model.margins(x)?, delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{build_loss, LossSpec};
    use crate::solver::ModelForm;
    use nalgebra::DMatrix;

    fn linear_model(k: usize, coefficients: DMatrix<f64>, family: &str) -> DecisionModel {
        let p = coefficients.nrows() - 1;
        DecisionModel::new(k, p, LossSpec::new(family, 1.2).unwrap(), 0.1, ModelForm::Linear { coefficients }).unwrap()
    }

    #[test]
    fn margins_of_simple_models() {
        let zero = linear_model(3, DMatrix::zeros(2, 2), "squared");
        assert_eq!(angle_margins(&zero, &[0.3]).unwrap(), vec![0.0; 3]);
        assert_eq!(predict_itr(&zero, &[0.3]).unwrap(), 1);
        let half = linear_model(2, DMatrix::from_element(2, 1, 0.25), "squared");
        let m = angle_margins(&half, &[1.0]).unwrap();
        assert!((m[0] - 0.5).abs() < 1e-12 && (m[1] + 0.5).abs() < 1e-12);
        assert!(angle_margins(&half, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn two_step_examples() {
        let sq = build_loss("squared", 1.0).unwrap();
        let (r, floored) = two_step_from_margins(sq.as_ref(), &[0.2, 0.1, -1.0], 1.2).unwrap();
        assert_eq!(r.labels(), vec![1, 2]);
        assert!(floored);
        let exp = build_loss("exp", 1.0).unwrap();
        let m = [0.3, 0.1, -0.2];
        for c in [1.0, 1.1, 1.3, 2.0] {
            let (r, _) = two_step_from_margins(exp.as_ref(), &m, c).unwrap();
            let expect: Vec<usize> = (0..3).filter(|&j| m[0] - m[j] <= c.ln() + 1e-12).map(|j| j + 1).collect();
            assert_eq!(r.labels(), expect);
        }
        let (r, _) = two_step_from_margins(exp.as_ref(), &m, 1.0).unwrap();
        assert_eq!(r.labels(), vec![1]);
        let bent = build_loss("bent-hinge", 1.2).unwrap();
        assert!(matches!(two_step_from_margins(bent.as_ref(), &m, 1.2), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn one_step_examples() {
        assert_eq!(one_step_from_margins(&[0.4, 0.0, -0.4], 0.0).labels(), vec![1, 2]);
        assert_eq!(one_step_from_margins(&[0.4, 0.0, -0.4], 0.05).labels(), vec![1]);
        assert_eq!(one_step_from_margins(&[0.0; 4], 0.1).labels(), vec![1, 2, 3, 4]);
        // every margin below the threshold falls back to the top margin
        assert_eq!(one_step_from_margins(&[0.01, 0.02, -1.0], 0.5).labels(), vec![2]);
    }
}
