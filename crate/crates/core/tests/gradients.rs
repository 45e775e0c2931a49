use std::collections::BTreeMap;

use proptest::prelude::*;
use semcontrast_core::autodiff::{relative_error, Tape, Tensor};
use semcontrast_core::diagnostics::{
    full_loss_check, key_bias_gradient, primitive_checks, primitive_names, GRAD_CHECK_TOLERANCE,
};
use semcontrast_core::rng;

#[test]
fn every_primitive_on_ten_seeds() {
    let outcomes = primitive_checks(0..10).unwrap();
    let mut seeds: BTreeMap<&str, usize> = BTreeMap::new();
    for o in &outcomes {
        assert!(
            o.passed(),
            "{} seed {}: relative error {:e} (analytic {}, numeric {})",
            o.name,
            o.seed,
            o.report.max_rel_error,
            o.report.worst_values.0,
            o.report.worst_values.1
        );
        assert!(o.report.coordinates > 0);
        *seeds.entry(o.name.as_str()).or_default() += 1;
    }
    for name in primitive_names() {
        assert_eq!(seeds.get(name), Some(&10), "{name}");
    }
}

#[test]
fn combined_loss_through_the_tiny_encoder() {
    for seed in 0..4 {
        let o = full_loss_check(seed).unwrap();
        assert!(
            o.report.max_rel_error < GRAD_CHECK_TOLERANCE,
            "seed {seed}: {:e} at input {:?}",
            o.report.max_rel_error,
            o.report.worst
        );
        assert!(
            o.report.coordinates > 1000,
            "the whole parameter set is probed"
        );
    }
}

#[test]
fn key_biases_receive_no_gradient() {
    for seed in 0..4 {
        assert!(key_bias_gradient(seed).unwrap() < 1e-12);
    }
}

#[test]
fn relative_error_definition() {
    assert_eq!(relative_error(1.0, 1.0), 0.0);
    assert!((relative_error(1.0, 0.5) - 1.0 / 3.0).abs() < 1e-15);
    assert!(
        (relative_error(0.0, 1e-12) - 1e-4).abs() < 1e-16,
        "floored denominator"
    );
}

fn matrix(rows: usize, cols: usize, scale: f64, seed: u64) -> Tensor {
    let mut r = rng::derive(seed, &[]);
    Tensor::randn(vec![rows, cols], scale, &mut r)
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..9, scale in 0.01f64..30.0, seed in any::<u64>()) {
        let mut t = Tape::new();
        let x = t.constant(matrix(rows, cols, scale, seed));
        let y = t.softmax_rows(x).unwrap();
        for row in t.value(y).rows() {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12, "{}", s);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn layer_norm_standardizes_rows(rows in 1usize..5, cols in 2usize..12, scale in 0.1f64..10.0, shift in -5.0f64..5.0, seed in any::<u64>()) {
        let mut t = Tape::new();
        let x = t.constant(matrix(rows, cols, scale, seed).map(|v| v + shift));
        let g = t.constant(Tensor::ones(vec![cols]));
        let b = t.constant(Tensor::zeros(vec![cols]));
        let y = t.layer_norm(x, g, b, 1e-12).unwrap();
        for row in t.value(y).rows() {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9, "mean {}", mean);
            prop_assert!((var - 1.0).abs() < 1e-6, "variance {}", var);
        }
    }

    #[test]
    fn dropout_identities(n in 1usize..40, seed in any::<u64>(), p in 0.0f64..0.9) {
        let x = matrix(1, n, 1.0, seed);
        let mut t = Tape::new();
        let v = t.constant(x.clone());
        let mut r = rng::derive(seed, &[1]);
        let off = t.dropout(v, p, &mut r, false).unwrap();
        prop_assert_eq!(t.value(off), &x);
        let zero = t.dropout(v, 0.0, &mut r, true).unwrap();
        prop_assert_eq!(t.value(zero), &x);
    }

    #[test]
    fn dropout_keeps_the_expectation(seed in any::<u64>()) {
        let n = 20_000;
        let mut t = Tape::new();
        let v = t.constant(Tensor::ones(vec![n]));
        let y = t.dropout(v, 0.25, &mut rng::derive(seed, &[]), true).unwrap();
        let out = t.value(y).data();
        let mean = out.iter().sum::<f64>() / n as f64;
        // binomial std of the mean is sqrt(0.25 * 0.75 / n) / 0.75 ≈ 0.0041
        prop_assert!((mean - 1.0).abs() < 0.02, "{}", mean);
        prop_assert!(out.iter().all(|&o| o == 0.0 || (o - 1.0 / 0.75).abs() < 1e-12));
    }
}
