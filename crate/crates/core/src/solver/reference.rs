use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_lambda, DecisionModel, ModelForm};
use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::simplex::make_simplex;

pub const REFERENCE_MAX_N: usize = 30;
pub const REFERENCE_MAX_P: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceOptions {
    pub starts: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self {
            starts: 4,
            iterations: 400_000,
            seed: 0x5eed,
        }
    }
}

/// Best iterate of each start, with its objective.
pub fn fit_reference(ds: &TrialDataset, loss: &LossSpec, lambda: f64) -> Result<DecisionModel> {
    Ok(fit_reference_with(ds, loss, lambda, &ReferenceOptions::default())?.0)
}

/// Subgradient descent with steps `1 / (2 lambda (t + 1))` from several
/// random starts; returns the best model over all starts and the best
/// objective reached by each start. Linear form, tiny problems only.
pub fn fit_reference_with(
    ds: &TrialDataset,
    loss: &LossSpec,
    lambda: f64,
    opts: &ReferenceOptions,
) -> Result<(DecisionModel, Vec<f64>)> {
    check_lambda(lambda)?;
    if ds.n() > REFERENCE_MAX_N || ds.p() > REFERENCE_MAX_P {
        return Err(Error::Refused(format!(
            "reference solver is limited to n <= {REFERENCE_MAX_N}, p <= {REFERENCE_MAX_P} (got n = {}, p = {})",
            ds.n(),
            ds.p()
        )));
    }
    if opts.starts == 0 {
        return Err(Error::invalid_argument("reference solver needs at least one start"));
    }
    let surrogate = loss.build()?;
    let simplex = make_simplex(ds.k())?;
    let (n, d, m) = (ds.n(), ds.p() + 1, ds.k() - 1);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| ds.x(i).iter().copied().chain(std::iter::once(1.0)).collect())
        .collect();
    let verts: Vec<Vec<f64>> = (0..ds.k()).map(|a| simplex.vertex(a).iter().copied().collect()).collect();
    let w: Vec<f64> = ds.weights();
    let nf = n as f64;

    // b is d x m, row-major
    let margin = |b: &[f64], i: usize| -> f64 {
        let v = &verts[ds.treatment(i)];
        let mut s = 0.0;
        for t in 0..d {
            for j in 0..m {
                s += rows[i][t] * b[t * m + j] * v[j];
            }
        }
        s
    };
    let objective = |b: &[f64]| -> f64 {
        let data: f64 = (0..n).map(|i| w[i] * surrogate.value(margin(b, i))).sum();
        data / nf + lambda * b.iter().map(|v| v * v).sum::<f64>()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut per_start = Vec::with_capacity(opts.starts);
    let mut best_overall: Option<(f64, Vec<f64>)> = None;
    let mu = 2.0 * lambda;
    for _ in 0..opts.starts {
        let mut b: Vec<f64> = (0..d * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut best = (objective(&b), b.clone());
        let mut grad = vec![0.0; d * m];
        for t in 0..opts.iterations {
            for (g, v) in grad.iter_mut().zip(&b) {
                *g = 2.0 * lambda * v;
            }
            for i in 0..n {
                let slope = surrogate.evaluate(margin(&b, i)).right_derivative;
                if slope == 0.0 {
                    continue;
                }
                let c = w[i] * slope / nf;
                let v = &verts[ds.treatment(i)];
                for tt in 0..d {
                    for j in 0..m {
                        grad[tt * m + j] += c * rows[i][tt] * v[j];
                    }
                }
            }
            let eta = 1.0 / (mu * (t as f64 + 2.0));
            for (v, g) in b.iter_mut().zip(&grad) {
                *v -= eta * g;
            }
            let obj = objective(&b);
            if obj < best.0 {
                best = (obj, b.clone());
            }
        }
        per_start.push(best.0);
        if best_overall.as_ref().is_none_or(|(o, _)| best.0 < *o) {
            best_overall = Some(best);
        }
    }
    let (_, b) = best_overall.expect("at least one start");
    let model = DecisionModel::new(
        ds.k(),
        ds.p(),
        surrogate.spec(),
        lambda,
        ModelForm::Linear {
            coefficients: DMatrix::from_row_slice(d, m, &b),
        },
    )?;
    Ok((model, per_start))
}
