//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Graphs are built eagerly: each op computes its output as it is recorded.
//! [`Graph::backward`] sweeps the record in reverse; [`Graph::replay`]
//! re-executes it with different leaf values or at a different precision,
//! which is what [`grad_check`] uses to form `f64` central differences.

mod check;
mod error;
mod graph;
mod kernels;
mod sample;
mod suite;
mod tensor;

pub use check::{grad_check, grad_check_at, GradCheckReport, REL_EPS};
pub use error::GraphError;
pub use graph::{Gradients, Graph, NodeId, Op};
pub use sample::{Layout, SamplePlan, SamplePoint};
pub use suite::{op_suite, OpCheck};
pub use tensor::{Real, Tensor};
