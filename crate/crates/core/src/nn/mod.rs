//! Small dense-network engine: layers, manual backpropagation and Adam.

mod adam;
mod checkpoint;
mod dense;
mod gradcheck;
mod scalar;

pub use adam::{adam_step, zero_grads, AdamConfig, AdamState, Optimizer};
pub use checkpoint::{read_networks, write_networks, NetworkHeader};
pub use dense::{backward, Activation, DenseNet, LayerShape, Trace};
pub use gradcheck::{grad_check, relative_error};
pub use scalar::{gemm, Real};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer {layer}: expected input width {expected}, got {actual}")]
    DimMismatch {
        layer: usize,
        expected: usize,
        actual: usize,
    },
    #[error("layer {layer} produces {outputs} values but layer {} takes {next_inputs}", layer + 1)]
    Compose {
        layer: usize,
        outputs: usize,
        next_inputs: usize,
    },
    #[error("network has no layers")]
    EmptyNetwork,
    #[error("expected {expected} parameters, got {actual}")]
    ParamCount { expected: usize, actual: usize },
    #[error("upstream gradient has length {actual}, expected {expected}")]
    GradientShape { expected: usize, actual: usize },
    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
