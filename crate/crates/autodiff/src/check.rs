//! Central finite-difference gradient checks.

use std::collections::HashMap;

use crate::error::GraphError;
use crate::graph::{Graph, NodeId, Op};
use crate::tensor::{Real, Tensor};

/// Floor of the relative-error denominator.
pub const REL_EPS: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, eps)`.
    pub max_rel_error: f64,
    /// Leaf entry at which `max_rel_error` occurred.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Set when the leaf reaches the loss through a piecewise-constant op.
    pub skipped: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.skipped.is_none() && self.max_rel_error <= tolerance
    }
}

/// Checks up to `sample_count` evenly spaced entries of `leaf`.
pub fn grad_check<T: Real>(graph: &Graph<T>, leaf: NodeId, loss: NodeId, sample_count: usize, step: f64) -> Result<GradCheckReport, GraphError> {
    let n = graph.value(leaf).len();
    let count = sample_count.max(1).min(n);
    let indices: Vec<usize> = (0..count).map(|i| i * n / count).collect();
    grad_check_at(graph, leaf, loss, &indices, step)
}

/// Checks the listed entries of `leaf`.
///
/// Both the analytic gradient and the loss evaluations are computed by
/// replaying the graph in `f64`.
pub fn grad_check_at<T: Real>(graph: &Graph<T>, leaf: NodeId, loss: NodeId, indices: &[usize], step: f64) -> Result<GradCheckReport, GraphError> {
    assert!(step > 0.0, "finite-difference step must be positive");
    if let Some(op) = nondifferentiable_on_path(graph, leaf, loss) {
        return Ok(GradCheckReport {
            max_rel_error: 0.0,
            worst_index: None,
            checked: 0,
            skipped: Some(format!("path from node {} to loss crosses `{op}`", leaf.index())),
        });
    }
    let base: Tensor<f64> = graph.value(leaf).cast();
    let precise = graph.replay::<f64>(&HashMap::new())?;
    let analytic = precise.backward(loss)?.get(leaf);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped: None,
    };
    let eval = |delta: f64, idx: usize| -> Result<f64, GraphError> {
        let mut v = base.clone();
        v.data_mut()[idx] += delta;
        let g = graph.replay::<f64>(&HashMap::from([(leaf, v)]))?;
        Ok(g.value(loss).item())
    };
    for &idx in indices {
        let numeric = (eval(step, idx)? - eval(-step, idx)?) / (2.0 * step);
        let a = analytic.data()[idx];
        let denom = a.abs().max(numeric.abs()).max(REL_EPS);
        let rel = (a - numeric).abs() / denom;
        report.checked += 1;
        if rel > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst_index = Some(idx);
        }
    }
    Ok(report)
}

/// Name of the first piecewise-constant op lying on a path `leaf -> loss`.
fn nondifferentiable_on_path<T: Real>(graph: &Graph<T>, leaf: NodeId, loss: NodeId) -> Option<&'static str> {
    let n = loss.index() + 1;
    let mut from_leaf = vec![false; n];
    if leaf.index() >= n {
        return None;
    }
    from_leaf[leaf.index()] = true;
    for i in leaf.index() + 1..n {
        from_leaf[i] = graph.inputs_of(NodeId(i)).iter().any(|j| from_leaf[j.index()]);
    }
    let mut to_loss = vec![false; n];
    to_loss[loss.index()] = true;
    for i in (0..n).rev() {
        if to_loss[i] {
            for j in graph.inputs_of(NodeId(i)) {
                to_loss[j.index()] = true;
            }
        }
    }
    (0..n)
        .filter(|&i| from_leaf[i] && to_loss[i])
        .map(|i| graph.op(NodeId(i)))
        .find(|op| !op.is_differentiable())
        .map(Op::name)
}
