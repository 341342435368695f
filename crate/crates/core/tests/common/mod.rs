#![allow(dead_code)]

use owlset::data::{Covariates, TrialDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random trial with every treatment present, uniform propensities and
/// outcomes in `[0.5, 3]`.
pub fn random_trial(n: usize, p: usize, k: usize, seed: u64) -> TrialDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
    let prop = vec![1.0 / k as f64; n];
    TrialDataset::new(Covariates::new(n, p, x).unwrap(), a, y, prop, k).unwrap()
}
