//! The per-pair evidence lower bound and its minibatch average.
//!
//! For a pair `(i, j)` with `K` reparameterised samples the loss is
//! `-(1/K) sum_k [log p(R_i. | u_k) + log p(R_.j | v_k) + log p(R_ij | u_k, v_k)]
//!  + KL(q(u_i) || p(u_i)) + KL(q(v_j) || p(v_j))`,
//! and a minibatch loss is the mean over its pairs.

use rand::Rng;
use rand_distr::StandardNormal;

use super::nets::{collab_of, feature_batch, features_of, inference_batch};
use super::{bernoulli_loglik, kl_diag, reparameterize, DiagGaussian, Model, ModelError, Role};
use crate::autodiff::{Matrix, Tape, Var};
use crate::data::{InteractionMatrix, SideInfo, TrainingPair};

/// Training pairs with their distinct users and items resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pairs: Vec<TrainingPair>,
    users: Vec<usize>,
    items: Vec<usize>,
    user_slot: Vec<usize>,
    item_slot: Vec<usize>,
}

fn distinct(ids: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = ids.collect();
    v.sort_unstable();
    v.dedup();
    v
}

impl Batch {
    pub fn new(pairs: Vec<TrainingPair>) -> Result<Self, ModelError> {
        if pairs.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let users = distinct(pairs.iter().map(|p| p.user));
        let items = distinct(pairs.iter().map(|p| p.item));
        let slot = |ids: &[usize], id| ids.binary_search(&id).expect("id collected above");
        let user_slot = pairs.iter().map(|p| slot(&users, p.user)).collect();
        let item_slot = pairs.iter().map(|p| slot(&items, p.item)).collect();
        Ok(Self {
            pairs,
            users,
            items,
            user_slot,
            item_slot,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[TrainingPair] {
        &self.pairs
    }

    fn ids(&self, role: Role) -> (&[usize], &[usize]) {
        match role {
            Role::User => (&self.users, &self.user_slot),
            Role::Item => (&self.items, &self.item_slot),
        }
    }
}

/// Standard-normal draws for every pair and sample: row `p * K + k` feeds
/// sample `k` of pair `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise {
    pub samples: usize,
    pub user: Matrix,
    pub item: Matrix,
}

impl Noise {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, pairs: usize, samples: usize, dim: usize) -> Self {
        let mut draw = |n: usize| {
            let data = (0..n * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            Matrix::from_vec(n, dim, data).expect("sized buffer")
        };
        let user = draw(pairs * samples);
        let item = draw(pairs * samples);
        Self { samples, user, item }
    }

    pub fn zeros(pairs: usize, samples: usize, dim: usize) -> Self {
        Self {
            samples,
            user: Matrix::zeros(pairs * samples, dim),
            item: Matrix::zeros(pairs * samples, dim),
        }
    }

    fn of(&self, role: Role) -> &Matrix {
        match role {
            Role::User => &self.user,
            Role::Item => &self.item,
        }
    }
}

/// Per-pair averages of the loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub loss: f64,
    pub recon_user: f64,
    pub recon_item: f64,
    pub interaction: f64,
    pub kl_user: f64,
    pub kl_item: f64,
}

/// Handle to the scalar loss on a tape plus its decomposition.
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    pub loss: Var,
    pub parts: LossParts,
}

struct SideTerms {
    latent: Var,
    loglik: Var,
    kl: Var,
}

fn side_terms(
    model: &Model,
    tape: &mut Tape,
    r: &InteractionMatrix,
    side: &SideInfo,
    batch: &Batch,
    noise: &Noise,
    role: Role,
) -> Result<SideTerms, ModelError> {
    let tower = model.tower(role);
    let (ids, slots) = batch.ids(role);
    let k = noise.samples;

    let (qm, qlv) = tower.inference.forward_tape(tape, inference_batch(side, r, role, ids))?;
    let (pm, plv) = if model.config.uses_prior(role) {
        tower.prior.forward_tape(tape, feature_batch(side, role, ids))?
    } else {
        let z = Matrix::zeros(ids.len(), model.latent_dim());
        (tape.constant(z.clone()), tape.constant(z))
    };
    let kl_ids = tape.kl_diag(qm, qlv, pm, plv)?;
    let kl_pairs = tape.gather_rows(kl_ids, slots.to_vec())?;
    let kl = tape.sum(kl_pairs);

    let rows: Vec<usize> = slots.iter().flat_map(|&s| std::iter::repeat(s).take(k)).collect();
    let mean = tape.gather_rows(qm, rows.clone())?;
    let lv = tape.gather_rows(qlv, rows.clone())?;
    let half = tape.scale(lv, 0.5);
    let sd = tape.exp(half);
    let eps = tape.constant(noise.of(role).clone());
    let spread = tape.mul(sd, eps)?;
    let latent = tape.add(mean, spread)?;

    let logits = tower.decoder.forward_tape(tape, latent)?;
    let width = model.dims.collab(role);
    let mut targets = Matrix::zeros(rows.len(), width);
    for (row, &s) in rows.iter().enumerate() {
        let dst = targets.row_mut(row);
        for &c in collab_of(r, role, ids[s]) {
            dst[c as usize] = 1.0;
        }
    }
    let ll = tape.bernoulli_logits(logits, targets)?;
    let loglik = tape.sum(ll);
    Ok(SideTerms { latent, loglik, kl })
}

/// Builds the minibatch loss on `tape`.
///
/// `r` supplies the collaborative vectors and must be the training matrix;
/// `noise` must hold `batch.len() * noise.samples` rows of width `D`.
pub fn minibatch_loss(
    model: &Model,
    tape: &mut Tape,
    r: &InteractionMatrix,
    side: &SideInfo,
    batch: &Batch,
    noise: &Noise,
) -> Result<BatchLoss, ModelError> {
    let (e, k, d) = (batch.len(), noise.samples, model.latent_dim());
    if k == 0 {
        return Err(ModelError::Dim("need at least one sample per pair".into()));
    }
    for m in [&noise.user, &noise.item] {
        if m.shape() != (e * k, d) {
            return Err(ModelError::Dim(format!(
                "noise is {:?}, batch needs ({}, {d})",
                m.shape(),
                e * k
            )));
        }
    }
    if r.n_users() != model.dims.n_users || r.n_items() != model.dims.n_items {
        return Err(ModelError::Dim(format!(
            "matrix is {}x{}, model was built for {}x{}",
            r.n_users(),
            r.n_items(),
            model.dims.n_users,
            model.dims.n_items
        )));
    }

    let u = side_terms(model, tape, r, side, batch, noise, Role::User)?;
    let v = side_terms(model, tape, r, side, batch, noise, Role::Item)?;

    let x = tape.concat_cols(u.latent, v.latent)?;
    let logit = model.interaction.forward_tape(tape, x)?;
    let labels: Vec<f64> = batch
        .pairs
        .iter()
        .flat_map(|p| std::iter::repeat(f64::from(p.label)).take(k))
        .collect();
    let ll_pair = tape.bernoulli_logits(logit, Matrix::from_vec(e * k, 1, labels)?)?;
    let ll_pair = tape.sum(ll_pair);

    let ll = tape.add(u.loglik, v.loglik)?;
    let ll = tape.add(ll, ll_pair)?;
    let neg_ll = tape.scale(ll, -1.0 / k as f64);
    let kl = tape.add(u.kl, v.kl)?;
    let total = tape.add(kl, neg_ll)?;
    let loss = tape.scale(total, 1.0 / e as f64);

    let per_sample = 1.0 / (e * k) as f64;
    let val = |tape: &Tape, v: Var| tape.value(v).item();
    let parts = LossParts {
        loss: val(tape, loss),
        recon_user: val(tape, u.loglik) * per_sample,
        recon_item: val(tape, v.loglik) * per_sample,
        interaction: val(tape, ll_pair) * per_sample,
        kl_user: val(tape, u.kl) / e as f64,
        kl_item: val(tape, v.kl) / e as f64,
    };
    Ok(BatchLoss { loss, parts })
}

/// Loss value of a batch without recording gradients.
pub fn batch_loss_value(
    model: &Model,
    r: &InteractionMatrix,
    side: &SideInfo,
    batch: &Batch,
    noise: &Noise,
) -> Result<LossParts, ModelError> {
    let mut tape = Tape::new(&model.store);
    Ok(minibatch_loss(model, &mut tape, r, side, batch, noise)?.parts)
}

/// `(1/K) sum_k log p(R_ij | u_k, v_k)` over paired sample rows.
pub fn expectation_term(model: &Model, u: &Matrix, v: &Matrix, r_ij: f64) -> Result<f64, ModelError> {
    let p = model.interaction_prob(u, v)?;
    let targets = vec![r_ij; p.rows()];
    Ok(bernoulli_loglik(&targets, p.as_slice())? / p.rows() as f64)
}

/// Loss contribution of one pair, computed row by row without the tape.
///
/// `eps_u` and `eps_v` hold one row per sample.
pub fn elbo_pair(
    model: &Model,
    r: &InteractionMatrix,
    side: &SideInfo,
    pair: TrainingPair,
    eps_u: &Matrix,
    eps_v: &Matrix,
) -> Result<f64, ModelError> {
    if eps_u.rows() == 0 || eps_u.shape() != eps_v.shape() {
        return Err(ModelError::Dim(format!(
            "noise shapes {:?} and {:?}",
            eps_u.shape(),
            eps_v.shape()
        )));
    }
    let gaussians = |role: Role, id: usize| -> Result<(DiagGaussian, DiagGaussian), ModelError> {
        let f = features_of(side, role, id);
        Ok((model.infer(role, f, collab_of(r, role, id))?, model.prior(role, f)?))
    };
    let (qu, pu) = gaussians(Role::User, pair.user)?;
    let (qv, pv) = gaussians(Role::Item, pair.item)?;
    let row_u = r.row_dense(pair.user);
    let col_v = r.col_dense(pair.item);

    let k = eps_u.rows();
    let mut us = Matrix::zeros(k, model.latent_dim());
    let mut vs = Matrix::zeros(k, model.latent_dim());
    for s in 0..k {
        us.row_mut(s).copy_from_slice(&reparameterize(&qu, eps_u.row(s))?);
        vs.row_mut(s).copy_from_slice(&reparameterize(&qv, eps_v.row(s))?);
    }
    let dec_u = model.decode(Role::User, &us)?;
    let dec_v = model.decode(Role::Item, &vs)?;
    let mut recon = 0.0;
    for s in 0..k {
        recon += bernoulli_loglik(&row_u, dec_u.row(s))? + bernoulli_loglik(&col_v, dec_v.row(s))?;
    }
    let expect = expectation_term(model, &us, &vs, f64::from(pair.label))?;
    Ok(-(recon / k as f64 + expect - kl_diag(&qu, &pu)? - kl_diag(&qv, &pv)?))
}
