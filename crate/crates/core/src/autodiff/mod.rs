//! Dense matrices and a reverse-mode tape with the handful of primitives the
//! networks need: affine layers (dense and sparse input), ReLU, sigmoid,
//! clamped exponential, elementwise arithmetic, a fused diagonal-Gaussian KL
//! and a fused Bernoulli log-likelihood on logits.

mod check;
mod matrix;
mod params;
mod tape;

pub use check::{finite_diff_check, FiniteDiffOptions, FiniteDiffReport};
pub use matrix::{Matrix, SparseMatrix};
pub use params::{LayerParams, ParamId, ParamStore};
pub use tape::{
    affine, exp, relu, sigmoid, sigmoid_scalar, softplus, sparse_affine, Gradients, OpTag, Tape,
    Var, EXP_CLAMP,
};

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("contract violated: {0}")]
    Contract(String),
}
