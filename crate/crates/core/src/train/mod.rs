//! Optimizer, configuration and the training loop.

mod adam;
mod config;
mod fit;

pub use adam::{clip_grad_norm, Adam};
pub use config::TrainConfig;
pub use fit::{
    fit, init_model, write_history, CaseValidator, EpochRecord, FitOutcome, StopReason, Validator,
    HISTORY_HEADER,
};

use crate::eval::EvalError;
use crate::model::{Checkpoint, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged at epoch {epoch}, step {step} (value {value})")]
    Diverged {
        epoch: usize,
        step: usize,
        value: f64,
        last_good: Box<Checkpoint>,
        history: Vec<EpochRecord>,
    },
}

impl From<crate::autodiff::AutodiffError> for TrainError {
    fn from(e: crate::autodiff::AutodiffError) -> Self {
        TrainError::Model(e.into())
    }
}
