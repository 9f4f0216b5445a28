//! Neural variational hybrid collaborative filtering.
//!
//! Users and items each get a latent Gaussian factor whose prior is produced
//! from side information by a prior network and whose approximate posterior
//! is produced from side information plus the interaction row/column by an
//! inference network. Interaction rows, columns and single entries are
//! decoded as Bernoulli variables. Training maximises a minibatch ELBO with
//! negative sampling; prediction averages the interaction network's output
//! over posterior (or, for cold users/items, prior) samples.

pub mod autodiff;
pub mod data;
pub mod model;
pub mod predict;
pub mod eval;
pub mod train;
pub mod cli;
