//! Dense tensors, reverse-mode gradients, Adam, and a finite-difference
//! gradient oracle.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod graph;
pub mod layers;
mod tensor;

pub use adam::{decayed_lr, Adam, AdamConfig};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use graph::{sigmoid, Axis, Gradients, Graph, NodeId, ParamId, ParamStore};
pub use layers::{Activation, Dense, Mlp};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("non-finite value produced at node {node} ({op})")]
    NonFiniteValue { node: usize, op: &'static str },
    #[error("input {0:?} declared twice")]
    DuplicateInput(String),
    #[error("loss must be a [1, 1] scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient for parameter {0:?}; step aborted")]
    NonFiniteGradient(String),
    #[error("gradient set does not match parameter set")]
    GradientMismatch,
    #[error("missing parameter {0:?}")]
    MissingParam(String),
    #[error("parameter {name:?}: expected shape {expected:?}, found {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("epsilon {0} outside [1e-6, 1e-3]")]
    Epsilon(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
