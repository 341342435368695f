use owlset::error::Error;
use owlset::evaluate::FoldMode;
use owlset::recommendation::argmin;
use owlset::simulate::*;

#[test]
fn conditional_means_at_the_origin() {
    assert_eq!(bayes_mu(1, &[0.0; 5]).unwrap(), vec![1.0, 3.0, 3.0]);
    // sign(A - 2.5) is negative for treatments 1 and 2
    assert_eq!(bayes_mu(2, &[0.0; 5]).unwrap(), vec![1.0, 1.0, 3.0, 3.0]);
    assert_eq!(bayes_mu(3, &[0.0; 5]).unwrap(), vec![2.5, 4.0, 3.0]);
}

#[test]
fn example_two_alternates_the_covariate_sign() {
    let x = [0.3, 0.6];
    let c = |v: f64| (0.5 * std::f64::consts::PI * v).cos();
    let mu = bayes_mu(2, &x).unwrap();
    let expected = [2.0 - c(0.3 - 0.6), 2.0 - c(0.9), 2.0 + c(0.3 - 0.6), 2.0 + c(0.9)];
    for (a, b) in mu.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn unknown_examples_and_short_inputs_are_rejected() {
    assert!(matches!(bayes_mu(4, &[0.0; 5]), Err(Error::InvalidArgument(_))));
    assert!(bayes_mu(3, &[0.0; 3]).is_err());
    assert!(ScenarioSpec::new(3, 3).validate().is_err());
    assert!(ScenarioSpec::new(0, 5).validate().is_err());
}

fn noise_moments(noise: NoiseConvention) -> (f64, f64, Vec<f64>) {
    let mut spec = ScenarioSpec::new(1, 5);
    spec.noise = noise;
    let n = 100_000;
    let sim = generate(&spec, n, 77).unwrap();
    let ds = &sim.data;
    let eps: Vec<f64> = (0..n)
        .map(|i| ds.outcome(i) - bayes_mu(1, ds.x(i)).unwrap()[ds.treatment(i)])
        .collect();
    let mean = eps.iter().sum::<f64>() / n as f64;
    let var = eps.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let freq = ds.treatment_counts().iter().map(|&c| c as f64 / n as f64).collect();
    (mean, var, freq)
}

#[test]
fn generated_noise_and_treatments_have_the_stated_law() {
    let (mean, var, freq) = noise_moments(NoiseConvention::Variance);
    assert!(mean.abs() < 0.01, "mean {mean}");
    assert!((var - 0.5).abs() < 0.02, "variance {var}");
    for f in freq {
        assert!((f - 1.0 / 3.0).abs() < 0.01);
    }
    let (_, var, _) = noise_moments(NoiseConvention::Sd);
    assert!((var - 0.25).abs() < 0.02, "variance {var}");
}

#[test]
fn generated_data_is_seeded_and_bounded() {
    let spec = ScenarioSpec::new(2, 5);
    let a = generate(&spec, 500, 3).unwrap();
    let b = generate(&spec, 500, 3).unwrap();
    assert_eq!(a.data, b.data);
    assert_ne!(a.data, generate(&spec, 500, 4).unwrap().data);
    assert!(a.data.outcomes().iter().all(|y| *y > 0.0));
    assert!(a.data.features().as_slice().iter().all(|v| (0.0..1.0).contains(v)));
    assert!(a.data.propensities().iter().all(|p| *p == 0.25));
}

#[test]
fn example_two_bayes_rule_avoids_dominated_treatments() {
    let x = uniform_points(10_000, 5, 1);
    for r in x.rows() {
        let j = argmin(&bayes_mu(2, r).unwrap());
        assert!(j != 1 && j != 3);
    }
}

#[test]
fn derived_seeds_differ() {
    let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|s| derive_seed(42, s)).collect();
    assert_eq!(seeds.len(), 1000);
    assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
}

fn small_spec(example: u8) -> ScenarioSpec {
    let mut spec = ScenarioSpec::new(example, 5);
    spec.n_train = 150;
    spec.n_test = 200;
    spec.replications = 2;
    spec.seed = 5;
    spec.folds = FoldMode::CrossValidation(3);
    spec.lambdas = Some(vec![0.04, 0.2, 1.0]);
    spec.deltas = vec![-0.1, 0.0, 0.1];
    spec.max_sweeps = 200;
    spec
}

fn csv(report: &StudyReport) -> String {
    let mut buf = Vec::new();
    write_study_csv(report, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn small_study_is_reproducible_and_complete() {
    let spec = small_spec(1);
    let a = run_study(&spec, &STUDY_METHODS).unwrap();
    let b = run_study(&spec, &STUDY_METHODS).unwrap();
    assert_eq!(csv(&a), csv(&b));
    assert_eq!(a.failures(), 0);
    assert_eq!(a.summary.len(), 8);
    let text = csv(&a);
    assert!(text.contains("# seed: 5"));
    assert!(text.contains("# tuning: 3-fold cross-validation"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 9);
    for rep in &a.replications {
        for o in &rep.outcomes {
            for r in 0..3 {
                if let (Some(v), Some((lo, hi))) = (o.itr_regions[r], o.aitr_regions[r]) {
                    assert!(lo <= v && v <= hi);
                }
            }
        }
        let bayes = rep.outcome("bayes").unwrap();
        if let Some((lo, hi)) = bayes.aitr_regions[0] {
            assert_eq!(lo, hi);
        }
    }
}

#[test]
fn studies_reject_unknown_methods() {
    assert!(run_study(&small_spec(1), &["bogus"]).is_err());
    assert!(run_study(&small_spec(1), &[]).is_err());
}

#[test]
fn bayes_only_study_is_cheap() {
    let mut spec = small_spec(2);
    spec.n_test = 2000;
    let r = run_study(&spec, &["bayes"]).unwrap();
    let row = r.row("bayes", "ITR").unwrap();
    let (lo, hi) = row.regions[0];
    assert_eq!(lo, hi);
    assert!(r.row("one-step", "ITR").is_none());
}
