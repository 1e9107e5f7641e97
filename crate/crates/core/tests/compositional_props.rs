//! Property tests for the log-ratio transforms.

use proptest::prelude::*;

use claimboost::compositional::{
    alr, alr_inverse, build_helmert_contrast, clr, ilr, zero_replace,
};

fn composition(j: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.02f64..1.0, j).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn clr_outputs_sum_to_zero(parts in composition(2..9)) {
        let out = clr(&parts).unwrap();
        prop_assert!(out.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn transforms_scale_invariant(parts in composition(2..9), c in 0.01f64..100.0) {
        let scaled: Vec<f64> = parts.iter().map(|v| c * v).collect();
        let a = clr(&parts).unwrap();
        let b = clr(&scaled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let contrast = build_helmert_contrast(parts.len()).unwrap();
        let ia = ilr(&parts, &contrast).unwrap();
        let ib = ilr(&scaled, &contrast).unwrap();
        for (x, y) in ia.iter().zip(&ib) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn ilr_is_isometric_on_clr_space(a in composition(3..8), b in composition(3..8)) {
        prop_assume!(a.len() == b.len());
        let contrast = build_helmert_contrast(a.len()).unwrap();
        let d_clr: f64 = clr(&a)
            .unwrap()
            .iter()
            .zip(clr(&b).unwrap())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let d_ilr: f64 = ilr(&a, &contrast)
            .unwrap()
            .iter()
            .zip(ilr(&b, &contrast).unwrap())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        prop_assert!((d_clr.sqrt() - d_ilr.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn alr_round_trips_through_inverse(parts in composition(2..9), d_raw in 0usize..8) {
        let d = d_raw % parts.len();
        let coords = alr(&parts, d).unwrap();
        let back = alr_inverse(&coords, d, 1.0);
        for (x, y) in parts.iter().zip(&back) {
            prop_assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn helmert_rows_orthonormal_zero_sum(j in 2usize..12) {
        let c = build_helmert_contrast(j).unwrap();
        for (i, row) in c.rows().iter().enumerate() {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-12);
            for (k, other) in c.rows().iter().enumerate() {
                let dot: f64 = row.iter().zip(other).map(|(a, b)| a * b).sum();
                let expect = if i == k { 1.0 } else { 0.0 };
                prop_assert!((dot - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_replacement_closes_rows(
        raw in prop::collection::vec(0.0f64..1.0, 2..9),
        eps in 1e-9f64..1e-3,
    ) {
        prop_assume!(raw.iter().any(|&v| v > 0.0));
        let zeroed: Vec<f64> = raw
            .iter()
            .enumerate()
            .map(|(i, &v)| if i % 3 == 0 { 0.0 } else { v })
            .collect();
        prop_assume!(zeroed.iter().any(|&v| v > 0.0));
        let total: f64 = zeroed.iter().sum();
        let closed: Vec<f64> = zeroed.iter().map(|v| v / total).collect();
        let out = zero_replace(&closed, eps, 1.0).unwrap();
        prop_assert!(out.iter().all(|&v| v > 0.0));
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
