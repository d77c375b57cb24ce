//! Minimal dense/convolutional network core with hand-derived reverse-mode
//! gradients.
//!
//! Layout conventions: activations are batch-major NHWC (`[n, h, w, c]`),
//! convolution kernels are `[kh, kw, c_in, c_out]` and dense weights are
//! `[in, out]`. Every layer is evaluated on a whole batch at once, and each
//! batch row is computed with a fixed summation order so that results do not
//! depend on the batch it was computed in or on the thread count.

mod checkpoint;
mod gradcheck;
mod layer;
mod network;
mod optim;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use layer::{conv_output_size, LayerSpec};
pub use network::{
    backward, forward, output_shape, shape_flow, ForwardCache, NetworkWeights,
};
pub(crate) use network::backward_params;
pub use optim::{OptimizerKind, OptimizerState};
pub use tensor::{Scalar, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid tensor shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("layer {layer} ({kind}): expected input {expected}, got {got:?}")]
    ShapeMismatch {
        layer: usize,
        kind: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    #[error("invalid layer spec at {layer}: {reason}")]
    InvalidSpec { layer: usize, reason: String },
    #[error("forward cache does not match this network: {0}")]
    StaleCache(String),
    #[error("parameter shapes disagree: {0}")]
    ParamMismatch(String),
    #[error("non-finite gradient in layer {layer}, parameter {param}")]
    NonFiniteGradient { layer: usize, param: usize },
}
