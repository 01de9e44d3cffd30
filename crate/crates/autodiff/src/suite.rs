//! Finite-difference checks for every graph op on small random inputs.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::check::{grad_check, GradCheckReport};
use crate::error::GraphError;
use crate::graph::{Graph, NodeId};
use crate::sample::{Layout, SamplePlan, SamplePoint};
use crate::tensor::Tensor;

/// Outcome of checking one leaf of one op.
#[derive(Clone, Debug)]
pub struct OpCheck {
    pub op: &'static str,
    /// Position of the leaf among the op's checked inputs.
    pub leaf: usize,
    pub report: GradCheckReport,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Magnitude in [0.1, 1] with random sign, so relu/clip kinks are far from every entry.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1f32..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

type Builder<'a> = dyn Fn(&mut Graph, &mut ChaCha8Rng) -> Result<(Vec<NodeId>, NodeId), GraphError> + 'a;

fn run(out: &mut Vec<OpCheck>, seed: u64, build: &Builder) -> Result<(), GraphError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::<f32>::new();
    let (leaves, y) = build(&mut g, &mut rng)?;
    let op = g.op(y).name();
    // non-scalar outputs are reduced with fixed random weights so every entry matters
    let loss = if g.value(y).is_scalar() {
        y
    } else {
        let shape = g.value(y).shape().to_vec();
        let r = g.constant(rand_tensor(&mut rng, &shape, -1.0, 1.0));
        let prod = g.mul(y, r)?;
        g.sum(prod)?
    };
    for (i, leaf) in leaves.into_iter().enumerate() {
        let report = grad_check(&g, leaf, loss, 64, 1e-3)?;
        out.push(OpCheck { op, leaf: i, report });
    }
    Ok(())
}

/// Checks conv2d, relu, max_pool2d, matmul, affine, softmax, cross_entropy,
/// smooth_l1, bilinear_sample, add, mul, clip, mean and reshape/transpose.
pub fn op_suite(seed: u64) -> Result<Vec<OpCheck>, GraphError> {
    let mut out = Vec::new();

    run(&mut out, seed, &|g, rng| {
            let x = g.input("x", rand_tensor(rng, &[2, 6, 5], -1.0, 1.0), true);
            let w = g.param("w", rand_tensor(rng, &[3, 2, 3, 3], -1.0, 1.0), true);
            let b = g.param("b", rand_tensor(rng, &[3], -1.0, 1.0), true);
            let y = g.conv2d(x, w, b, 2, 1)?;
            Ok((vec![x, w, b], y))
        })?;
    run(&mut out, seed, &|g, rng| {
            let x = g.input("x", away_from_zero(rng, &[3, 4, 4]), true);
            Ok((vec![x], g.relu(x)?))
        })?;
    run(&mut out, seed, &|g, rng| {
            // distinct values spaced well beyond the step so window maxima never swap
            let mut vals: Vec<f32> = (0..48).map(|i| i as f32 * 0.01).collect();
            for i in (1..vals.len()).rev() {
                let j = rng.random_range(0..=i);
                vals.swap(i, j);
            }
            let x = g.input("x", Tensor::new(vec![3, 4, 4], vals)?, true);
            Ok((vec![x], g.max_pool2d(x, 2, 2)?))
        })?;
    run(&mut out, seed, &|g, rng| {
            let a = g.input("a", rand_tensor(rng, &[3, 4], -1.0, 1.0), true);
            let b = g.input("b", rand_tensor(rng, &[4, 5], -1.0, 1.0), true);
            Ok((vec![a, b], g.matmul(a, b)?))
        })?;
    run(&mut out, seed, &|g, rng| {
            let x = g.input("x", rand_tensor(rng, &[3, 4], -1.0, 1.0), true);
            let w = g.param("w", rand_tensor(rng, &[4, 2], -1.0, 1.0), true);
            let b = g.param("b", rand_tensor(rng, &[2], -1.0, 1.0), true);
            Ok((vec![x, w, b], g.affine(x, w, b)?))
        })?;
    run(&mut out, seed, &|g, rng| {
            let x = g.input("x", rand_tensor(rng, &[3, 5], -2.0, 2.0), true);
            Ok((vec![x], g.softmax(x)?))
        })?;
    run(&mut out, seed, &|g, rng| {
            let x = g.input("x", rand_tensor(rng, &[4, 5], -2.0, 2.0), true);
            let weights = vec![1.0, 0.0, 2.0, 0.5];
            Ok((vec![x], g.cross_entropy(x, vec![0, 4, 2, 1], Some(weights))?))
        })?;
    run(&mut out, seed, &|g, rng| {
            let x = g.input("x", rand_tensor(rng, &[3, 4], -2.0, 2.0), true);
            // targets offset from predictions by at least 0.05 so |d| never sits at 0 or beta
            let targets: Vec<f32> = g
                .value(x)
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| v + [0.3, -0.6, 1.7, -2.2][i % 4])
                .collect();
            Ok((vec![x], g.smooth_l1(x, targets, vec![1.0, 1.0, 0.0], 1.0)?))
        })?;
    run(&mut out, seed, &|g, rng| {
            let src = g.input("src", rand_tensor(rng, &[5, 6, 2], 0.0, 1.0), true);
            let points: Vec<SamplePoint> = (0..7)
                .map(|_| SamplePoint {
                    y: rng.random_range(-0.5f32..4.5),
                    x: rng.random_range(-0.5f32..5.5),
                    weight: rng.random_range(0.2f32..1.0),
                })
                .collect();
            let plan = SamplePlan::new(&points, 5, 6, 2, Layout::Hwc, Layout::Chw);
            Ok((vec![src], g.bilinear_sample(src, Arc::new(plan))?))
        })?;
    run(&mut out, seed, &|g, rng| {
            let a = g.input("a", rand_tensor(rng, &[2, 3], -1.0, 1.0), true);
            let b = g.input("b", rand_tensor(rng, &[2, 3], -1.0, 1.0), true);
            let s = g.add(a, b)?;
            Ok((vec![a, b], s))
        })?;
    run(&mut out, seed, &|g, rng| {
            let a = g.input("a", rand_tensor(rng, &[2, 3], -1.0, 1.0), true);
            let b = g.input("b", rand_tensor(rng, &[2, 3], -1.0, 1.0), true);
            Ok((vec![a, b], g.mul(a, b)?))
        })?;
    run(&mut out, seed, &|g, rng| {
            let x = g.input("x", away_from_zero(rng, &[10]), true);
            Ok((vec![x], g.clip(x, -0.5, 0.5)?))
        })?;
    run(&mut out, seed, &|g, rng| {
            let x = g.input("x", rand_tensor(rng, &[2, 3], -1.0, 1.0), true);
            let m = g.mean(x)?;
            Ok((vec![x], m))
        })?;
    run(&mut out, seed, &|g, rng| {
            let x = g.input("x", rand_tensor(rng, &[2, 6], -1.0, 1.0), true);
            let r = g.reshape(x, &[3, 4])?;
            Ok((vec![x], g.transpose(r)?))
        })?;
    Ok(out)
}
