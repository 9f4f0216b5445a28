//! The generative model: side-information priors, inference networks,
//! Bernoulli decoders for interaction rows and columns, the interaction
//! network, and the evidence lower bound that ties them together.

mod checkpoint;
mod gaussian;
mod nets;
mod objective;

use std::io;
use std::path::PathBuf;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gaussian::{bernoulli_loglik, bernoulli_loglik_logits, kl_diag, reparameterize, DiagGaussian, PROB_EPS};
pub use nets::{
    collab_of, feature_batch, features_of, inference_batch, push_inference_row, Dims, GaussianHeads,
    InferenceNet, Mlp, Model, ModelConfig, PriorNet, Role, Tower, Widths, LOG_VAR_BIAS_INIT,
};
pub use objective::{
    batch_loss_value, elbo_pair, expectation_term, minibatch_loss, Batch, BatchLoss, LossParts, Noise,
};

use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("empty minibatch")]
    EmptyBatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}
