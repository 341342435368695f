mod common;

use common::random_trial;
use nalgebra::DMatrix;
use owlset::data::Covariates;
use owlset::kernel::KernelChoice;
use owlset::loss::{build_loss, LossSpec};
use owlset::recommend::*;
use owlset::recommendation::{argmax, optimal_aitr};
use owlset::simplex::make_simplex;
use owlset::solver::{DecisionModel, ModelForm};
use proptest::prelude::*;

fn random_linear(k: usize, p: usize, coefs: &[f64], family: &str) -> DecisionModel {
    let m = DMatrix::from_fn(p + 1, k - 1, |i, j| coefs[(i * (k - 1) + j) % coefs.len()]);
    DecisionModel::new(k, p, LossSpec::new(family, 1.3).unwrap(), 0.1, ModelForm::Linear { coefficients: m }).unwrap()
}

proptest! {
    #[test]
    fn margins_sum_to_zero(coefs in prop::collection::vec(-3.0f64..3.0, 9), x in prop::collection::vec(-2.0f64..2.0, 2)) {
        let model = random_linear(4, 2, &coefs, "squared");
        let s: f64 = angle_margins(&model, &x).unwrap().iter().sum();
        prop_assert!(s.abs() < 1e-10);
    }

    #[test]
    fn itr_belongs_to_two_step_set_and_sets_grow_with_c(
        coefs in prop::collection::vec(-3.0f64..3.0, 6),
        x in prop::collection::vec(-2.0f64..2.0, 2),
        c1 in 1.0f64..3.0,
        dc in 0.0f64..2.0,
    ) {
        for family in ["squared", "exp"] {
            let model = random_linear(3, 2, &coefs, family);
            let itr = predict_itr(&model, &x).unwrap() - 1;
            let small = recommend_two_step(&model, &x, c1).unwrap();
            let large = recommend_two_step(&model, &x, c1 + dc).unwrap();
            prop_assert!(small.contains(itr));
            prop_assert!(small.is_subset(&large));
        }
    }

    #[test]
    fn one_step_contains_itr(
        coefs in prop::collection::vec(-3.0f64..3.0, 6),
        x in prop::collection::vec(-2.0f64..2.0, 2),
        delta in -0.5f64..0.5,
    ) {
        let model = random_linear(3, 2, &coefs, "bent-hinge");
        let itr = predict_itr(&model, &x).unwrap() - 1;
        let set = recommend_one_step(&model, &x, delta).unwrap();
        prop_assert!(!set.is_empty());
        prop_assert!(set.contains(itr));
    }

    #[test]
    fn plugin_with_true_means_is_the_optimal_set(mu in prop::collection::vec(0.1f64..5.0, 4), c in 1.0f64..2.0) {
        let reg = RegressionModel {
            k: 4,
            p: 0,
            kernel: None,
            ridge: 1.0,
            arms: mu.iter().map(|m| ArmFit::Linear { coefficients: vec![], intercept: *m }).collect(),
            metadata: Default::default(),
        };
        prop_assert_eq!(recommend_plugin(&reg, &[], c).unwrap(), optimal_aitr(&mu, c).unwrap());
    }
}

/// `f` with margins `m` (which must sum to zero): `f = ((k-1)/k) sum_j m_j W_j`.
fn f_from_margins(m: &[f64]) -> Vec<f64> {
    let k = m.len();
    let s = make_simplex(k).unwrap();
    (0..k - 1)
        .map(|t| (k - 1) as f64 / k as f64 * (0..k).map(|j| m[j] * s.vertex(j)[t]).sum::<f64>())
        .collect()
}

#[test]
fn oracle_margins_reproduce_the_bayes_rule_on_a_grid() {
    // Example-1 means; margins -mu_j + mean(mu) give argmax = argmin mu
    let mu = |x1: f64, x2: f64| {
        vec![
            1.0 + 3.0 * x1 * x1 + 3.0 * x2 * x2,
            3.0 - 0.5 * x1 * x1 + 0.5 * x2 * x2,
            3.0 + x1 + x2,
        ]
    };
    for a in 0..=20 {
        for b in 0..=20 {
            let (x1, x2) = (a as f64 / 20.0, b as f64 / 20.0);
            let m = mu(x1, x2);
            let mean = m.iter().sum::<f64>() / 3.0;
            let margins: Vec<f64> = m.iter().map(|v| mean - v).collect();
            let f = f_from_margins(&margins);
            // intercept-only linear model carrying f
            let coef = DMatrix::from_fn(1, 2, |_, j| f[j]);
            let model =
                DecisionModel::new(3, 0, LossSpec::new("squared", 1.0).unwrap(), 1.0, ModelForm::Linear { coefficients: coef }).unwrap();
            let bayes = owlset::recommendation::argmin(&m) + 1;
            assert_eq!(predict_itr(&model, &[]).unwrap(), bayes);
        }
    }
}

#[test]
fn two_step_rejects_bent_models_and_reports_floor() {
    let model = random_linear(3, 1, &[0.5, -0.2, 0.1, 0.3], "bent-hinge");
    assert!(matches!(recommend_two_step(&model, &[0.2], 1.2), Err(owlset::Error::InvalidModel(_))));
    let sq = build_loss("squared", 1.0).unwrap();
    let (_, floored) = two_step_from_margins(sq.as_ref(), &[0.5, 0.2, -0.7], 1.5).unwrap();
    assert!(!floored);
}

#[test]
fn methods_fit_and_predict_through_the_registry() {
    let ds = random_trial(60, 2, 3, 40);
    assert_eq!(method_registry().names(), vec!["one-step", "plugin", "two-step"]);
    for name in ["plugin", "two-step", "one-step"] {
        let cfg = MethodConfig {
            kernel: KernelChoice::parse("poly").unwrap(),
            lambda: 0.05,
            ..Default::default()
        };
        let rule = method_registry().build(name).unwrap().fit(&ds, &cfg).unwrap();
        assert_eq!(rule.method(), name);
        let x = ds.x(0);
        let set = rule.recommend(x).unwrap();
        assert!(set.contains(rule.itr(x).unwrap()));
        let mut buf = Vec::new();
        let test = Covariates::from_rows(&[vec![0.1, 0.2], vec![-0.3, 0.4]]).unwrap();
        write_predictions(&mut buf, &rule, &test, &["method=".to_string() + name]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], format!("# method={name}"));
        let prefix = if name == "plugin" { "mu" } else { "m" };
        assert_eq!(lines[1], format!("id,set,itr,{prefix}1,{prefix}2,{prefix}3"));
        assert_eq!(lines.len(), 4);
        let scores = rule.scores(&[0.1, 0.2]).unwrap();
        let itr = rule.itr_from_scores(&scores);
        if name != "plugin" {
            assert_eq!(itr, argmax(&scores));
        }
        assert!(lines[2].starts_with(&format!("1,{},{}", rule.recommend_from_scores(&scores).unwrap(), itr + 1)));
    }
    let bad = MethodConfig {
        loss: Some("bent-hinge".into()),
        ..Default::default()
    };
    assert!(method_registry().build("two-step").unwrap().fit(&ds, &bad).is_err());
}
