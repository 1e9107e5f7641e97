//! Statistical and property checks for the metrics suite.

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

use claimboost::metrics::{self, Deviance, VuongOutcome};
use claimboost::seeding::child_seed;
use claimboost::tweedie::{sample_aggregate_claim, TweedieParams, ZitwParams};

#[test]
fn gini_a_near_zero_under_permutation_null() {
    let n = 10_000;
    let mut rng = StdRng::seed_from_u64(2026);
    let y: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < 0.6 {
                0.0
            } else {
                (rng.random::<f64>() * 3.0).exp()
            }
        })
        .collect();
    let y_hat: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.1).collect();
    let g = metrics::gini_a(&y, &y_hat).unwrap();
    assert!(g.abs() < 0.1, "independent predictions scored {g}");
}

#[test]
fn true_parameters_beat_perturbed_parameters_in_deviance() {
    // Mean deviance at the generating (mu, q) should not lose to mu scaled
    // by 1.5, across several seeds.
    for seed in [1u64, 2, 3, 4, 5] {
        let n = 20_000;
        let mut y = Vec::with_capacity(n);
        let mut mu = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        for i in 0..n {
            let m = 0.4 + 3.0 * ((i % 23) as f64) / 22.0;
            let qi = 1.0 / (1.0 + m.powf(1.5));
            let params = ZitwParams::new(TweedieParams::new(m, 1.0, 1.5).unwrap(), qi).unwrap();
            y.push(sample_aggregate_claim(&params, 1.0, child_seed(seed, i as u64)));
            mu.push(m);
            q.push(qi);
        }
        let truth = match metrics::mean_deviance(&y, &mu, &q, 1.0, 1.5).unwrap() {
            Deviance::Value(v) => v,
            Deviance::Infinite => panic!("finite expected"),
        };
        let scaled: Vec<f64> = mu.iter().map(|m| 1.5 * m).collect();
        let perturbed = match metrics::mean_deviance(&y, &scaled, &q, 1.0, 1.5).unwrap() {
            Deviance::Value(v) => v,
            Deviance::Infinite => panic!("finite expected"),
        };
        assert!(
            truth <= perturbed,
            "seed {seed}: true {truth} vs perturbed {perturbed}"
        );
    }
}

#[test]
fn constant_models_with_known_ordering_get_signed_vuong() {
    // Three constant-prediction models; the one predicting closest to the
    // data-generating parameters must dominate in the Vuong sign pattern.
    use claimboost::loss::full_nll;
    let n = 5_000;
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let params = ZitwParams::new(TweedieParams::new(2.0, 1.0, 1.5).unwrap(), 0.3).unwrap();
        y.push(sample_aggregate_claim(&params, 1.0, child_seed(50, i as u64)));
    }
    let loglik = |mu: f64, q: f64| -> Vec<f64> {
        y.iter().map(|&yi| -full_nll(yi, mu, 1.0, 1.5, q).unwrap()).collect()
    };
    let good = loglik(2.0, 0.3);
    let medium = loglik(2.6, 0.3);
    let bad = loglik(6.0, 0.05);
    let v = |a: &Vec<f64>, b: &Vec<f64>| match metrics::vuong_test(a, b).unwrap() {
        VuongOutcome::Defined { statistic, .. } => statistic,
        VuongOutcome::Undefined => panic!("defined expected"),
    };
    assert!(v(&good, &medium) > 0.0);
    assert!(v(&good, &bad) > 0.0);
    assert!(v(&medium, &bad) > 0.0);
    assert!(v(&bad, &good) < 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gini_a_invariant_under_increasing_transforms(
        values in prop::collection::vec((0.0f64..5.0, 0.01f64..4.0), 5..40),
        scale in 0.1f64..4.0,
    ) {
        let y: Vec<f64> = values.iter().map(|(a, _)| (a * 4.0).round() / 4.0).collect();
        let y_hat: Vec<f64> = values.iter().map(|(_, b)| *b).collect();
        prop_assume!(y.iter().sum::<f64>() > 0.0);
        prop_assume!(y.iter().any(|&v| v != y[0]));
        let transformed: Vec<f64> = y_hat.iter().map(|v| (scale * v).exp()).collect();
        let a = metrics::gini_a(&y, &y_hat).unwrap();
        let b = metrics::gini_a(&y, &transformed).unwrap();
        prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }

    #[test]
    fn gini_b_zero_for_power_of_two_proportional_predictions(
        rows in prop::collection::vec((0.0f64..5.0, 0.05f64..4.0), 3..30),
        pow in -2i32..3,
    ) {
        let y: Vec<f64> = rows.iter().map(|(a, _)| *a).collect();
        let base: Vec<f64> = rows.iter().map(|(_, b)| *b).collect();
        prop_assume!(y.iter().sum::<f64>() > 0.0);
        // power-of-two scaling keeps the ratio exactly constant in floats
        let c = (2.0f64).powi(pow);
        let competing: Vec<f64> = base.iter().map(|b| c * b).collect();
        let g = metrics::gini_b(&y, &base, &competing).unwrap();
        prop_assert!(g.abs() < 1e-12, "gini {g}");
    }

    #[test]
    fn vuong_is_exactly_antisymmetric(
        pairs in prop::collection::vec((-5.0f64..0.0, -5.0f64..0.0), 2..50),
    ) {
        let a: Vec<f64> = pairs.iter().map(|(x, _)| *x).collect();
        let b: Vec<f64> = pairs.iter().map(|(_, x)| *x).collect();
        match (metrics::vuong_test(&a, &b).unwrap(), metrics::vuong_test(&b, &a).unwrap()) {
            (
                VuongOutcome::Defined { statistic: va, .. },
                VuongOutcome::Defined { statistic: vb, .. },
            ) => prop_assert_eq!(va.to_bits(), (-vb).to_bits()),
            (VuongOutcome::Undefined, VuongOutcome::Undefined) => {}
            other => prop_assert!(false, "asymmetric outcomes {:?}", other),
        }
    }

    #[test]
    fn unit_deviance_zero_exactly_at_saturation(
        y in 0.01f64..50.0,
        phi in 0.1f64..5.0,
        p in 1.05f64..1.95,
    ) {
        let d = metrics::unit_deviance(y, y, phi, p, 0.0).unwrap().value().unwrap();
        prop_assert!(d.abs() < 1e-12, "deviance {d}");
    }
}
