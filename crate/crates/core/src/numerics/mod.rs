//! Dense tensors, reverse-mode differentiation, AdamW and the warmup schedule.

pub mod gradcheck;
mod graph;
pub mod kernels;
mod optim;
mod params;
mod tensor;

use thiserror::Error;

pub use graph::{scatter_square, Graph, Var};
pub use optim::{lr_at_step, AdamW, AdamWConfig, DECODER_PRESET_LR, ENCODER_PRESET_LR};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("softmax row {row} has every entry masked")]
    DegenerateRow { row: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("invalid scatter positions: {0}")]
    InvalidPositions(String),
    #[error("parameter `{0}` registered twice")]
    DuplicateParam(String),
}

/// Row-wise softmax on a plain matrix, outside any graph.
pub fn softmax_rows<F: crate::Scalar>(m: &Tensor<F>, allowed: Option<&[bool]>) -> Result<Tensor<F>, NumericsError> {
    let (r, c) = (m.rows(), m.cols());
    if let Some(mask) = allowed {
        if mask.len() != r * c {
            return Err(NumericsError::ShapeMismatch {
                expected: vec![r, c],
                got: vec![mask.len()],
            });
        }
    }
    let out = kernels::softmax_rows(m.data(), r, c, allowed)?;
    Ok(Tensor::new(m.shape().to_vec(), out))
}
