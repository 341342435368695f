use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Covariates;
use crate::error::{Error, Result};

/// Floor for estimated propensities used as weight denominators.
pub const PROPENSITY_FLOOR: f64 = 1e-3;

const RIDGE: f64 = 1e-6;
const SATURATION: f64 = 1e-8;

/// Multinomial logistic model with treatment 1 as reference:
/// `log p_j / p_1 = theta_j^T (x, 1)` for `j = 2..k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub k: usize,
    pub p: usize,
    /// `(k - 1)` rows of `p + 1` coefficients, intercept last.
    pub coefficients: Vec<Vec<f64>>,
}

impl PropensityModel {
    /// Class probabilities at `x`; they sum to 1.
    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.p {
            return Err(Error::invalid_argument(format!(
                "covariate vector has {} entries, propensity model expects {}",
                x.len(),
                self.p
            )));
        }
        Ok(softmax(&self.coefficients, x))
    }

    /// `max(p(a | x), PROPENSITY_FLOOR)` for 0-based `a`.
    pub fn weight_denominator(&self, x: &[f64], a: usize) -> Result<f64> {
        Ok(self.probabilities(x)?[a].max(PROPENSITY_FLOOR))
    }
}

fn softmax(theta: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(theta.len() + 1);
    z.push(0.0);
    for row in theta {
        let (w, b) = row.split_at(x.len());
        z.push(b[0] + w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>());
    }
    let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - top).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Penalised maximum likelihood by Newton's method with backtracking on
/// `-(1/n) log L + 1e-6 ||theta||^2`. `labels` are 0-based.
pub fn fit_propensity(x: &Covariates, labels: &[usize], k: usize) -> Result<PropensityModel> {
    let (n, p) = (x.nrows(), x.ncols());
    if labels.len() != n {
        return Err(Error::invalid_dataset(format!("{} labels for {n} rows", labels.len())));
    }
    if k < 2 {
        return Err(Error::invalid_argument("propensity model needs k >= 2"));
    }
    let mut counts = vec![0usize; k];
    for &a in labels {
        if a >= k {
            return Err(Error::invalid_dataset(format!("treatment {} outside 1..{k}", a + 1)));
        }
        counts[a] += 1;
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid_dataset(format!("treatment {} never appears", j + 1)));
    }
    let d = p + 1;
    let dim = (k - 1) * d;
    let nf = n as f64;
    let unpack = |v: &DVector<f64>| -> Vec<Vec<f64>> {
        (0..k - 1).map(|j| v.rows(j * d, d).iter().copied().collect()).collect()
    };
    let objective = |v: &DVector<f64>| -> f64 {
        let theta = unpack(v);
        let nll: f64 = (0..n).map(|i| -softmax(&theta, x.row(i))[labels[i]].ln()).sum();
        nll / nf + RIDGE * v.norm_squared()
    };
    let mut v = DVector::zeros(dim);
    let mut f = objective(&v);
    for _ in 0..100 {
        let theta = unpack(&v);
        let mut grad = 2.0 * RIDGE * &v;
        let mut hess = DMatrix::identity(dim, dim) * (2.0 * RIDGE);
        for i in 0..n {
            let xi = x.row(i);
            let xt: Vec<f64> = xi.iter().copied().chain(std::iter::once(1.0)).collect();
            let pr = softmax(&theta, xi);
            for a in 0..k - 1 {
                let r = pr[a + 1] - f64::from(labels[i] == a + 1);
                for s in 0..d {
                    grad[a * d + s] += r * xt[s] / nf;
                }
                for b in 0..k - 1 {
                    let h = pr[a + 1] * (f64::from(a == b) - pr[b + 1]) / nf;
                    for s in 0..d {
                        for t in 0..d {
                            hess[(a * d + s, b * d + t)] += h * xt[s] * xt[t];
                        }
                    }
                }
            }
        }
        if grad.amax() < 1e-10 {
            break;
        }
        let step = hess
            .cholesky()
            .map(|c| c.solve(&grad))
            .ok_or_else(|| Error::Numerical("logistic Hessian is not positive definite".into()))?;
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let cand = &v - t * &step;
            let fc = objective(&cand);
            if fc <= f - 1e-4 * t * slope {
                v = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || t * step.amax() < 1e-12 {
            break;
        }
    }
    let model = PropensityModel {
        k,
        p,
        coefficients: unpack(&v),
    };
    let saturated = (0..n).any(|i| {
        softmax(&model.coefficients, x.row(i))
            .iter()
            .any(|q| *q < SATURATION || *q > 1.0 - SATURATION)
    });
    if saturated {
        log::warn!("propensity model is close to separating the treatments; probabilities saturate");
    }
    Ok(model)
}

/// `exp((raw - m(x)) / 5)` where `m` is the least-squares fit of `raw` on
/// `(x, 1)`. A rank-deficient design falls back to ridge `1e-8`.
pub fn transform_outcome(raw: &[f64], x: &Covariates) -> Result<Vec<f64>> {
    let (n, p) = (x.nrows(), x.ncols());
    if raw.len() != n {
        return Err(Error::invalid_dataset(format!("{} outcomes for {n} rows", raw.len())));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid_dataset("raw outcomes must be finite"));
    }
    let design = DMatrix::from_fn(n, p + 1, |i, t| if t < p { x.row(i)[t] } else { 1.0 });
    let y = DVector::from_column_slice(raw);
    let gram = design.transpose() * &design;
    let rhs = design.transpose() * &y;
    let svd = gram.clone().svd(false, false);
    let top = svd.singular_values.max();
    let low = svd.singular_values.min();
    let coef = if top > 0.0 && low > 1e-12 * top {
        gram.clone().cholesky().map(|c| c.solve(&rhs))
    } else {
        None
    };
    let coef = match coef {
        Some(c) => c,
        None => {
            log::warn!("outcome regression design is rank deficient; using ridge 1e-8");
            let mut g = gram;
            for t in 0..=p {
                g[(t, t)] += 1e-8 * n as f64;
            }
            g.lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Numerical("outcome regression failed".into()))?
        }
    };
    let fitted = design * coef;
    Ok(raw
        .iter()
        .zip(fitted.iter())
        .map(|(r, m)| ((r - m) / 5.0).exp().max(f64::MIN_POSITIVE))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn independent_labels_give_uniform_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 2000;
        let x = Covariates::new(n, 2, (0..2 * n).map(|_| rng.random::<f64>()).collect()).unwrap();
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let model = fit_propensity(&x, &a, 3).unwrap();
        for i in (0..n).step_by(97) {
            for q in model.probabilities(x.row(i)).unwrap() {
                assert!((q - 1.0 / 3.0).abs() < 0.05, "{q}");
            }
        }
    }

    #[test]
    fn conflicting_duplicates_stay_inside_unit_interval() {
        let x = Covariates::from_rows(&[vec![0.5], vec![0.5]]).unwrap();
        let model = fit_propensity(&x, &[0, 1], 2).unwrap();
        let q = model.probabilities(&[0.5]).unwrap();
        assert!(q.iter().all(|v| *v > 0.0 && *v < 1.0));
        assert!((q[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let model = PropensityModel {
            k: 4,
            p: 2,
            coefficients: vec![vec![3.0, -1.0, 0.2], vec![-2.0, 0.5, 1.0], vec![10.0, 4.0, -3.0]],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let s: f64 = model.probabilities(&x).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn transform_examples() {
        let x = Covariates::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let raw: Vec<f64> = (0..4).map(|i| 2.0 + 0.5 * i as f64).collect();
        for v in transform_outcome(&raw, &x).unwrap() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        // residuals of +5 and -5 around a flat fit
        let raw = [5.0, -5.0, 5.0, -5.0];
        let x = Covariates::from_rows(&[vec![1.0], vec![1.0], vec![2.0], vec![2.0]]).unwrap();
        let out = transform_outcome(&raw, &x).unwrap();
        assert!((out[0] - std::f64::consts::E).abs() < 1e-9);
        assert!((out[1] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn transform_is_positive_and_survives_rank_deficiency() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let v = rng.random_range(-1.0..1.0);
                vec![v, 2.0 * v]
            })
            .collect();
        let x = Covariates::from_rows(&rows).unwrap();
        let raw: Vec<f64> = (0..30).map(|_| rng.random_range(-40.0..40.0)).collect();
        let out = transform_outcome(&raw, &x).unwrap();
        assert!(out.iter().all(|v| *v > 0.0));
    }
}
