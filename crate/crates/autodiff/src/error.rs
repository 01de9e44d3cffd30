use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("tensor shape {shape:?} does not match {len} values")]
    BadTensor { shape: Vec<usize>, len: usize },

    #[error("node {node} ({op}): {detail}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        detail: String,
    },

    #[error("loss node {node} is not scalar (shape {shape:?})")]
    NotScalar { node: usize, shape: Vec<usize> },

    #[error("input `{0}` is not bound")]
    UnboundInput(String),

    #[error("unknown node id {0}")]
    UnknownNode(usize),
}
