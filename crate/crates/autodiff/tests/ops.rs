use std::collections::HashMap;

use cac_autodiff::{grad_check, op_suite, Graph, GraphError, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

#[test]
fn relu_of_negative_is_zero() {
    let mut g = Graph::<f32>::new();
    let x = g.input("x", Tensor::new(vec![1], vec![-1.0]).unwrap(), false);
    let y = g.relu(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.0]);
}

#[test]
fn uniform_logits_cross_entropy_is_ln_k() {
    for k in [2usize, 5, 11] {
        let mut g = Graph::<f32>::new();
        let x = g.input("x", Tensor::full(&[1, k], 0.3), false);
        let l = g.cross_entropy(x, vec![k - 1], None).unwrap();
        assert!((g.value(l).item() as f64 - (k as f64).ln()).abs() < 1e-6);
    }
}

#[test]
fn conv_of_ones_is_nine() {
    let mut g = Graph::<f32>::new();
    let x = g.input("x", Tensor::full(&[1, 3, 3], 1.0), false);
    let w = g.param("w", Tensor::full(&[1, 1, 3, 3], 1.0), false);
    let b = g.param("b", Tensor::zeros(&[1]), false);
    let y = g.conv2d(x, w, b, 1, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 1]);
    assert_eq!(g.value(y).data(), &[9.0]);
}

#[test]
fn product_rule() {
    let mut g = Graph::<f32>::new();
    let x = g.input("x", Tensor::scalar(2.0), true);
    let y = g.input("y", Tensor::scalar(3.0), true);
    let p = g.mul(x, y).unwrap();
    let grads = g.backward(p).unwrap();
    assert_eq!(grads.get(x).item(), 3.0);
    assert_eq!(grads.get(y).item(), 2.0);
}

#[test]
fn disconnected_leaf_gets_zero_gradient() {
    let mut g = Graph::<f32>::new();
    let x = g.input("x", Tensor::full(&[4], 2.0), true);
    let z = g.input("z", Tensor::full(&[2, 3], 5.0), true);
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    let gz = grads.get(z);
    assert_eq!(gz.shape(), &[2, 3]);
    assert!(gz.data().iter().all(|&v| v == 0.0));
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let logits = [0.5f64, -1.25, 2.0, 0.1];
    let label = 2;
    let mut g = Graph::<f64>::new();
    let x = g.input("x", Tensor::new(vec![1, 4], logits.to_vec()).unwrap(), true);
    let l = g.cross_entropy(x, vec![label], None).unwrap();
    let grad = g.backward(l).unwrap().get(x);

    // closed form
    let m = logits.iter().cloned().fold(f64::MIN, f64::max);
    let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
    for (i, &v) in logits.iter().enumerate() {
        let p = (v - m).exp() / z;
        let expected = p - if i == label { 1.0 } else { 0.0 };
        assert!((grad.data()[i] - expected).abs() < 1e-12);
    }

    // central differences on the closed-form loss
    let ce = |xs: &[f64]| {
        let m = xs.iter().cloned().fold(f64::MIN, f64::max);
        m + xs.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - xs[label]
    };
    for i in 0..4 {
        let h = 1e-5;
        let (mut up, mut dn) = (logits, logits);
        up[i] += h;
        dn[i] -= h;
        let fd = (ce(&up) - ce(&dn)) / (2.0 * h);
        assert!((grad.data()[i] - fd).abs() < 1e-8);
    }
}

#[test]
fn quadratic_loss_passes_tight_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::<f32>::new();
    let x = g.input("x", rand_tensor(&mut rng, &[20], -2.0, 2.0), true);
    let sq = g.mul(x, x).unwrap();
    let l = g.sum(sq).unwrap();
    let r = grad_check(&g, x, l, 20, 1e-3).unwrap();
    assert!(r.passed(1e-5), "{r:?}");
}

#[test]
fn argmax_on_path_is_flagged() {
    let mut g = Graph::<f32>::new();
    let x = g.input("x", Tensor::new(vec![2, 3], vec![0.1, 0.5, 0.2, 0.9, 0.3, 0.4]).unwrap(), true);
    let a = g.argmax_rows(x).unwrap();
    let l = g.sum(a).unwrap();
    let r = grad_check(&g, x, l, 6, 1e-3).unwrap();
    assert!(r.skipped.is_some());
    assert!(!r.passed(1.0));
}

#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..3 {
        for c in op_suite(seed).unwrap() {
            assert!(c.report.passed(1e-4), "op {} leaf {}: {:?}", c.op, c.leaf, c.report);
        }
    }
}

#[test]
fn clip_gradient_passes_inside_and_blocks_outside() {
    let mut g = Graph::<f32>::new();
    let x = g.input("x", Tensor::new(vec![4], vec![-0.5, 0.2, 0.8, 1.5]).unwrap(), true);
    let c = g.clip(x, 0.0, 1.0).unwrap();
    let s = g.sum(c).unwrap();
    let gr = g.backward(s).unwrap().get(x);
    assert_eq!(gr.data(), &[0.0, 1.0, 1.0, 0.0]);
}

#[test]
fn shape_mismatch_names_the_node() {
    let mut g = Graph::<f32>::new();
    let a = g.input("a", Tensor::zeros(&[2, 3]), false);
    let b = g.input("b", Tensor::zeros(&[3, 2]), false);
    match g.add(a, b) {
        Err(GraphError::ShapeMismatch { node, op, .. }) => {
            assert_eq!(node, 2);
            assert_eq!(op, "add");
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::<f32>::new();
    let a = g.input("a", Tensor::zeros(&[2]), true);
    let r = g.relu(a).unwrap();
    assert!(matches!(g.backward(r), Err(GraphError::NotScalar { .. })));
}

#[test]
fn evaluate_rebinds_inputs_and_requires_all() {
    let mut g = Graph::<f32>::new();
    let x = g.input("x", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap(), false);
    let w = g.param("w", Tensor::new(vec![2], vec![3.0, 4.0]).unwrap(), false);
    let p = g.mul(x, w).unwrap();
    let s = g.sum(p).unwrap();
    g.name_output("loss", s);

    let out = g
        .evaluate(&HashMap::from([("x".to_string(), Tensor::new(vec![2], vec![2.0, 1.0]).unwrap())]))
        .unwrap();
    assert_eq!(out["loss"].item(), 10.0);
    assert_eq!(g.evaluate(&HashMap::new()), Err(GraphError::UnboundInput("x".into())));
}

#[test]
fn repeated_runs_are_bit_identical() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = Graph::<f32>::new();
        let x = g.input("x", rand_tensor(&mut rng, &[3, 16, 16], 0.0, 1.0), true);
        let w = g.param("w", rand_tensor(&mut rng, &[4, 3, 3, 3], -0.5, 0.5), true);
        let b = g.param("b", Tensor::zeros(&[4]), true);
        let c = g.conv2d(x, w, b, 1, 1).unwrap();
        let r = g.relu(c).unwrap();
        let p = g.max_pool2d(r, 2, 2).unwrap();
        let m = g.mean(p).unwrap();
        let grads = g.backward(m).unwrap();
        (g.value(m).clone(), grads.get(x), grads.get(w))
    };
    let (a, b) = (build(), build());
    assert_eq!(a.0.item().to_bits(), b.0.item().to_bits());
    assert!(a.1.data().iter().zip(b.1.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    assert!(a.2.data().iter().zip(b.2.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn replay_reproduces_eager_values(vals in proptest::collection::vec(-3.0f32..3.0, 12)) {
            let mut g = Graph::<f32>::new();
            let x = g.input("x", Tensor::new(vec![3, 4], vals).unwrap(), true);
            let w = g.param("w", Tensor::from_fn(&[4, 2], |i| i as f32 * 0.1 - 0.3), true);
            let b = g.param("b", Tensor::new(vec![2], vec![0.1, -0.2]).unwrap(), true);
            let a = g.affine(x, w, b).unwrap();
            let s = g.softmax(a).unwrap();
            let l = g.mean(s).unwrap();
            let again = g.replay::<f32>(&HashMap::new()).unwrap();
            prop_assert_eq!(again.value(l).item().to_bits(), g.value(l).item().to_bits());
        }

        #[test]
        fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-20.0f32..20.0, 15)) {
            let mut g = Graph::<f32>::new();
            let x = g.input("x", Tensor::new(vec![3, 5], vals).unwrap(), false);
            let s = g.softmax(x).unwrap();
            for row in g.value(s).data().chunks(5) {
                let total: f64 = row.iter().map(|&v| v as f64).sum();
                prop_assert!((total - 1.0).abs() < 1e-6);
            }
        }
    }
}
