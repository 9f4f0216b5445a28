//! Monte Carlo preference scores.
//!
//! A score is `(1/S) sum_s sigmoid(MLP(concat(u_s, v_s)))`, with user and
//! item samples paired by index. Warm ids sample from their posterior given
//! side information and training interactions; cold ids sample from their
//! side-information prior. One bank of user noise and one of item noise is
//! drawn per predictor and reused for every id, so repeated calls return
//! identical scores and score differences between candidates carry less
//! Monte Carlo noise.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{relu, sigmoid, Matrix, SparseMatrix};
use crate::data::{InteractionMatrix, SideInfo};
use crate::model::{inference_batch, DiagGaussian, Model, ModelError, Role};

/// Default number of Monte Carlo samples per score.
pub const DEFAULT_SAMPLES: usize = 128;

/// Latent Gaussians stored row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianRows {
    pub mean: Matrix,
    pub log_var: Matrix,
}

impl GaussianRows {
    pub fn len(&self) -> usize {
        self.mean.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, r: usize) -> DiagGaussian {
        DiagGaussian {
            mean: self.mean.row(r).to_vec(),
            log_var: self.log_var.row(r).to_vec(),
        }
    }
}

/// Scores (user, item) pairs for a trained model.
pub struct Predictor<'m> {
    model: &'m Model,
    samples: usize,
    eps_user: Matrix,
    eps_item: Matrix,
    users: GaussianRows,
    items: GaussianRows,
    /// Transposed user and item halves of the interaction first layer.
    w_user: Matrix,
    w_item: Matrix,
}

fn split_halves(w: &Matrix, d: usize) -> (Matrix, Matrix) {
    let mut a = Matrix::zeros(w.rows(), d);
    let mut b = Matrix::zeros(w.rows(), d);
    for r in 0..w.rows() {
        a.row_mut(r).copy_from_slice(&w.row(r)[..d]);
        b.row_mut(r).copy_from_slice(&w.row(r)[d..]);
    }
    (a, b)
}

/// `mean + exp(lv / 2) * eps` for every row of `eps`.
fn draw(g: &DiagGaussian, eps: &Matrix, out: &mut [f64]) {
    let d = g.dim();
    let sd: Vec<f64> = g.std_dev();
    for s in 0..eps.rows() {
        let e = eps.row(s);
        let o = &mut out[s * d..(s + 1) * d];
        for k in 0..d {
            o[k] = g.mean[k] + sd[k] * e[k];
        }
    }
}

impl<'m> Predictor<'m> {
    /// Posterior parameters for every user and item of `r`, which must be
    /// the matrix the model was fit on.
    pub fn new(
        model: &'m Model,
        r: &InteractionMatrix,
        side: &SideInfo,
        samples: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if samples == 0 {
            return Err(ModelError::Dim("need at least one Monte Carlo sample".into()));
        }
        let d = model.latent_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bank = || {
            let data = (0..samples * d).map(|_| StandardNormal.sample(&mut rng)).collect();
            Matrix::from_vec(samples, d, data).expect("sized buffer")
        };
        let eps_user = bank();
        let eps_item = bank();
        let posterior = |role: Role, n: usize| -> Result<GaussianRows, ModelError> {
            let ids: Vec<usize> = (0..n).collect();
            let (mean, log_var) = model.infer_batch(role, &inference_batch(side, r, role, &ids))?;
            Ok(GaussianRows { mean, log_var })
        };
        let users = posterior(Role::User, r.n_users())?;
        let items = posterior(Role::Item, r.n_items())?;
        let (w_user, w_item) = split_halves(model.store.get(model.interaction.layers[0].weight), d);
        let (w_user, w_item) = (w_user.transpose(), w_item.transpose());
        Ok(Self {
            model,
            samples,
            eps_user,
            eps_item,
            users,
            items,
            w_user,
            w_item,
        })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn user_posterior(&self, u: usize) -> DiagGaussian {
        self.users.get(u)
    }

    pub fn item_posterior(&self, i: usize) -> DiagGaussian {
        self.items.get(i)
    }

    /// Prior of an unseen user or item from its side information.
    pub fn cold_prior(&self, role: Role, features: (&[usize], &[f64])) -> Result<DiagGaussian, ModelError> {
        self.model.prior(role, features)
    }

    /// Priors for a batch of feature rows.
    pub fn cold_priors(&self, role: Role, features: &SparseMatrix) -> Result<GaussianRows, ModelError> {
        let (mean, log_var) = self.model.prior_batch(role, features)?;
        Ok(GaussianRows { mean, log_var })
    }

    /// Scores one user distribution against several item distributions.
    pub fn score_gaussians(&self, user: &DiagGaussian, items: &[&DiagGaussian]) -> Result<Vec<f64>, ModelError> {
        let (s, d) = (self.samples, self.model.latent_dim());
        if user.dim() != d || items.iter().any(|g| g.dim() != d) {
            return Err(ModelError::Dim(format!("latent Gaussians must have dimension {d}")));
        }
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let store = &self.model.store;
        let layers = &self.model.interaction.layers;
        let bias = store.get(layers[0].bias);

        let mut us = Matrix::zeros(s, d);
        draw(user, &self.eps_user, us.as_mut_slice());
        let mut a = us.matmul(&self.w_user)?;
        for r in 0..s {
            for (x, b) in a.row_mut(r).iter_mut().zip(bias.as_slice()) {
                *x += b;
            }
        }

        let mut vs = Matrix::zeros(items.len() * s, d);
        for (k, g) in items.iter().enumerate() {
            draw(g, &self.eps_item, &mut vs.as_mut_slice()[k * s * d..(k + 1) * s * d]);
        }
        let mut h = vs.matmul(&self.w_item)?;
        for row in 0..h.rows() {
            for (x, y) in h.row_mut(row).iter_mut().zip(a.row(row % s)) {
                *x += y;
            }
        }
        let mut h = relu(&h);
        for (k, l) in layers.iter().enumerate().skip(1) {
            h = crate::autodiff::affine(&h, store.get(l.weight), store.get(l.bias))?;
            if k + 1 < layers.len() {
                h = relu(&h);
            }
        }
        let p = sigmoid(&h);
        Ok((0..items.len())
            .map(|k| p.as_slice()[k * s..(k + 1) * s].iter().sum::<f64>() / s as f64)
            .collect())
    }

    /// Scores for a warm user against warm items.
    pub fn score_warm(&self, user: usize, items: &[usize]) -> Result<Vec<f64>, ModelError> {
        self.check_ids(Role::User, &[user])?;
        self.check_ids(Role::Item, items)?;
        let gs: Vec<DiagGaussian> = items.iter().map(|&i| self.items.get(i)).collect();
        self.score_gaussians(&self.users.get(user), &gs.iter().collect::<Vec<_>>())
    }

    /// Scores for an unseen user with features `f_new` against warm items.
    pub fn score_cold_user(&self, f_new: (&[usize], &[f64]), items: &[usize]) -> Result<Vec<f64>, ModelError> {
        self.check_ids(Role::Item, items)?;
        let u = self.cold_prior(Role::User, f_new)?;
        let gs: Vec<DiagGaussian> = items.iter().map(|&i| self.items.get(i)).collect();
        self.score_gaussians(&u, &gs.iter().collect::<Vec<_>>())
    }

    /// Score of a warm user for one unseen item with features `g_new`.
    pub fn score_cold_item(&self, user: usize, g_new: (&[usize], &[f64])) -> Result<f64, ModelError> {
        self.check_ids(Role::User, &[user])?;
        let v = self.cold_prior(Role::Item, g_new)?;
        Ok(self.score_gaussians(&self.users.get(user), &[&v])?[0])
    }

    fn check_ids(&self, role: Role, ids: &[usize]) -> Result<(), ModelError> {
        let n = match role {
            Role::User => self.n_users(),
            Role::Item => self.n_items(),
        };
        match ids.iter().find(|&&i| i >= n) {
            Some(i) => Err(ModelError::Dim(format!("{role:?} id {i} out of range (have {n})"))),
            None => Ok(()),
        }
    }
}

/// Positions of `ids` ordered by descending score; equal scores put the
/// smaller id first.
pub fn rank(scores: &[f64], ids: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
    order
}

/// Writes `user,item,score,rank` rows for one user's candidates.
pub fn write_predictions<W: Write>(
    out: &mut W,
    user: usize,
    items: &[usize],
    scores: &[f64],
) -> std::io::Result<()> {
    for (pos, k) in rank(scores, items).into_iter().enumerate() {
        writeln!(out, "{user},{},{:.8},{}", items[k], scores[k], pos + 1)?;
    }
    Ok(())
}

pub const PREDICTION_HEADER: &str = "user,item,score,rank";
