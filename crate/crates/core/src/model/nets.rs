use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DiagGaussian, ModelError};
use crate::autodiff::{
    affine, relu, sigmoid, sparse_affine, AutodiffError, LayerParams, Matrix, ParamStore,
    SparseMatrix, Tape, Var, EXP_CLAMP,
};
use crate::data::{InteractionMatrix, SideInfo};

/// Initial bias of every log-variance head.
pub const LOG_VAR_BIAS_INIT: f64 = -1.0;

/// Which side of the interaction matrix a network serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    User,
    Item,
}

/// Hidden-layer widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Widths {
    pub prior_hidden: usize,
    pub inference_hidden: [usize; 2],
    pub decoder_hidden: [usize; 2],
}

impl Default for Widths {
    fn default() -> Self {
        Self {
            prior_hidden: 200,
            inference_hidden: [600, 200],
            decoder_hidden: [200, 600],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub widths: Widths,
    pub use_user_prior: bool,
    pub use_item_prior: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 128,
            widths: Widths::default(),
            use_user_prior: true,
            use_item_prior: true,
        }
    }
}

impl ModelConfig {
    pub fn uses_prior(&self, role: Role) -> bool {
        match role {
            Role::User => self.use_user_prior,
            Role::Item => self.use_item_prior,
        }
    }
}

/// Sizes fixed by the data: `M`, `N`, `P`, `Q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_users: usize,
    pub n_items: usize,
    pub user_features: usize,
    pub item_features: usize,
}

impl Dims {
    pub fn of(r: &InteractionMatrix, side: &SideInfo) -> Self {
        Self {
            n_users: r.n_users(),
            n_items: r.n_items(),
            user_features: side.user_dim(),
            item_features: side.item_dim(),
        }
    }

    /// Side-information width.
    pub fn features(&self, role: Role) -> usize {
        match role {
            Role::User => self.user_features,
            Role::Item => self.item_features,
        }
    }

    /// Length of a collaborative vector (`R_i.` for users, `R_.j` for items).
    pub fn collab(&self, role: Role) -> usize {
        match role {
            Role::User => self.n_items,
            Role::Item => self.n_users,
        }
    }

    pub fn ids(&self, role: Role) -> usize {
        match role {
            Role::User => self.n_users,
            Role::Item => self.n_items,
        }
    }
}

/// Mean and log-variance output layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaussianHeads {
    pub mean: LayerParams,
    pub log_var: LayerParams,
}

impl GaussianHeads {
    fn init<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, d: usize, rng: &mut R) -> Self {
        Self {
            mean: LayerParams::init(store, &format!("{name}.mean"), input, d, 0.0, rng),
            log_var: LayerParams::init(store, &format!("{name}.log_var"), input, d, LOG_VAR_BIAS_INIT, rng),
        }
    }

    fn forward(&self, store: &ParamStore, h: &Matrix) -> Result<(Matrix, Matrix), AutodiffError> {
        let mean = affine(h, store.get(self.mean.weight), store.get(self.mean.bias))?;
        let lv = affine(h, store.get(self.log_var.weight), store.get(self.log_var.bias))?
            .map(|v| v.clamp(EXP_CLAMP.0, EXP_CLAMP.1));
        Ok((mean, lv))
    }

    fn forward_tape(&self, tape: &mut Tape, h: Var) -> Result<(Var, Var), AutodiffError> {
        let mean = tape.affine(h, &self.mean)?;
        let lv = tape.affine(h, &self.log_var)?;
        Ok((mean, tape.clamp(lv, EXP_CLAMP.0, EXP_CLAMP.1)))
    }
}

/// Side information to prior Gaussian: one hidden layer, two heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorNet {
    pub hidden: LayerParams,
    pub heads: GaussianHeads,
}

impl PriorNet {
    pub fn forward(&self, store: &ParamStore, x: &SparseMatrix) -> Result<(Matrix, Matrix), AutodiffError> {
        let h = relu(&sparse_affine(x, store.get(self.hidden.weight), store.get(self.hidden.bias))?);
        self.heads.forward(store, &h)
    }

    pub fn forward_tape(&self, tape: &mut Tape, x: SparseMatrix) -> Result<(Var, Var), AutodiffError> {
        let h = tape.sparse_affine(x, &self.hidden)?;
        let h = tape.relu(h);
        self.heads.forward_tape(tape, h)
    }
}

/// Side information and collaborative vector to posterior Gaussian: two
/// hidden layers, two heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceNet {
    pub first: LayerParams,
    pub second: LayerParams,
    pub heads: GaussianHeads,
}

impl InferenceNet {
    pub fn forward(&self, store: &ParamStore, x: &SparseMatrix) -> Result<(Matrix, Matrix), AutodiffError> {
        let h = relu(&sparse_affine(x, store.get(self.first.weight), store.get(self.first.bias))?);
        let h = relu(&affine(&h, store.get(self.second.weight), store.get(self.second.bias))?);
        self.heads.forward(store, &h)
    }

    pub fn forward_tape(&self, tape: &mut Tape, x: SparseMatrix) -> Result<(Var, Var), AutodiffError> {
        let h = tape.sparse_affine(x, &self.first)?;
        let h = tape.relu(h);
        let h = tape.affine(h, &self.second)?;
        let h = tape.relu(h);
        self.heads.forward_tape(tape, h)
    }
}

/// Affine layers with ReLU between them and none after the last.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<LayerParams>,
}

impl Mlp {
    fn init<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, sizes: &[usize], rng: &mut R) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| LayerParams::init(store, &format!("{name}.{k}"), w[0], w[1], 0.0, rng))
            .collect();
        Self { layers }
    }

    /// Output logits.
    pub fn forward(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix, AutodiffError> {
        let mut h = x.clone();
        for (k, l) in self.layers.iter().enumerate() {
            h = affine(&h, store.get(l.weight), store.get(l.bias))?;
            if k + 1 < self.layers.len() {
                h = relu(&h);
            }
        }
        Ok(h)
    }

    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        let mut h = x;
        for (k, l) in self.layers.iter().enumerate() {
            h = tape.affine(h, l)?;
            if k + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

/// Prior, inference network and decoder for one role.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tower {
    pub prior: PriorNet,
    pub inference: InferenceNet,
    /// Latent factor to logits of the collaborative vector.
    pub decoder: Mlp,
}

/// Every parameter of the model plus the layout that interprets them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub dims: Dims,
    pub store: ParamStore,
    pub user: Tower,
    pub item: Tower,
    /// `concat(u, v)` to the logit of `R_ij`.
    pub interaction: Mlp,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(dims: Dims, config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        let d = config.latent_dim;
        let w = config.widths;
        let all = [
            d,
            w.prior_hidden,
            w.inference_hidden[0],
            w.inference_hidden[1],
            w.decoder_hidden[0],
            w.decoder_hidden[1],
            dims.n_users,
            dims.n_items,
            dims.user_features,
            dims.item_features,
        ];
        if all.contains(&0) {
            return Err(ModelError::Dim(format!("zero-sized dimension in {dims:?} / {config:?}")));
        }
        let mut store = ParamStore::new();
        let mut tower = |store: &mut ParamStore, role: Role, name: &str| {
            let (f, c) = (dims.features(role), dims.collab(role));
            Tower {
                prior: PriorNet {
                    hidden: LayerParams::init(store, &format!("{name}.prior.hidden"), f, w.prior_hidden, 0.0, rng),
                    heads: GaussianHeads::init(store, &format!("{name}.prior"), w.prior_hidden, d, rng),
                },
                inference: InferenceNet {
                    first: LayerParams::init(store, &format!("{name}.inference.0"), f + c, w.inference_hidden[0], 0.0, rng),
                    second: LayerParams::init(
                        store,
                        &format!("{name}.inference.1"),
                        w.inference_hidden[0],
                        w.inference_hidden[1],
                        0.0,
                        rng,
                    ),
                    heads: GaussianHeads::init(store, &format!("{name}.inference"), w.inference_hidden[1], d, rng),
                },
                decoder: Mlp::init(
                    store,
                    &format!("{name}.decoder"),
                    &[d, w.decoder_hidden[0], w.decoder_hidden[1], c],
                    rng,
                ),
            }
        };
        let user = tower(&mut store, Role::User, "user");
        let item = tower(&mut store, Role::Item, "item");
        let interaction = Mlp::init(&mut store, "interaction", &[2 * d, d, (d / 2).max(1), 1], rng);
        Ok(Self {
            config,
            dims,
            store,
            user,
            item,
            interaction,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn tower(&self, role: Role) -> &Tower {
        match role {
            Role::User => &self.user,
            Role::Item => &self.item,
        }
    }

    /// Prior parameters for a batch of feature rows; standard normal when
    /// the role's prior is disabled.
    pub fn prior_batch(&self, role: Role, features: &SparseMatrix) -> Result<(Matrix, Matrix), ModelError> {
        self.check_width(role, features.cols(), self.dims.features(role), "features")?;
        if !self.config.uses_prior(role) {
            let z = Matrix::zeros(features.rows(), self.latent_dim());
            return Ok((z.clone(), z));
        }
        Ok(self.tower(role).prior.forward(&self.store, features)?)
    }

    /// Posterior parameters for a batch of `[features | collab]` rows.
    pub fn infer_batch(&self, role: Role, input: &SparseMatrix) -> Result<(Matrix, Matrix), ModelError> {
        let want = self.dims.features(role) + self.dims.collab(role);
        self.check_width(role, input.cols(), want, "inference input")?;
        Ok(self.tower(role).inference.forward(&self.store, input)?)
    }

    /// Prior of one user or item from its feature vector.
    pub fn prior(&self, role: Role, features: (&[usize], &[f64])) -> Result<DiagGaussian, ModelError> {
        let mut x = SparseMatrix::new(self.dims.features(role));
        check_indices(features.0, x.cols())?;
        x.push_row(features.0.iter().copied().zip(features.1.iter().copied()));
        let (m, lv) = self.prior_batch(role, &x)?;
        DiagGaussian::new(m.into_vec(), lv.into_vec())
    }

    /// Posterior of one user or item from features and collaborative row.
    pub fn infer(
        &self,
        role: Role,
        features: (&[usize], &[f64]),
        collab: &[u32],
    ) -> Result<DiagGaussian, ModelError> {
        let (p, c) = (self.dims.features(role), self.dims.collab(role));
        check_indices(features.0, p)?;
        if collab.iter().any(|&k| k as usize >= c) {
            return Err(ModelError::Dim(format!("collaborative index out of range for width {c}")));
        }
        let mut x = SparseMatrix::new(p + c);
        push_inference_row(&mut x, p, features, collab);
        let (m, lv) = self.infer_batch(role, &x)?;
        DiagGaussian::new(m.into_vec(), lv.into_vec())
    }

    /// Decoder probabilities for latent rows.
    pub fn decode(&self, role: Role, latent: &Matrix) -> Result<Matrix, ModelError> {
        Ok(sigmoid(&self.tower(role).decoder.forward(&self.store, latent)?))
    }

    /// Interaction probabilities for paired latent rows.
    pub fn interaction_prob(&self, u: &Matrix, v: &Matrix) -> Result<Matrix, ModelError> {
        let d = self.latent_dim();
        if u.shape() != v.shape() || u.cols() != d {
            return Err(ModelError::Dim(format!(
                "interaction inputs {:?} and {:?} for D = {d}",
                u.shape(),
                v.shape()
            )));
        }
        let mut x = Matrix::zeros(u.rows(), 2 * d);
        for r in 0..u.rows() {
            x.row_mut(r)[..d].copy_from_slice(u.row(r));
            x.row_mut(r)[d..].copy_from_slice(v.row(r));
        }
        Ok(sigmoid(&self.interaction.forward(&self.store, &x)?))
    }

    fn check_width(&self, role: Role, got: usize, want: usize, what: &str) -> Result<(), ModelError> {
        if got == want {
            Ok(())
        } else {
            Err(ModelError::Dim(format!("{role:?} {what}: width {got}, model expects {want}")))
        }
    }
}

fn check_indices(idx: &[usize], width: usize) -> Result<(), ModelError> {
    match idx.iter().find(|&&k| k >= width) {
        Some(k) => Err(ModelError::Dim(format!("feature index {k} out of range for width {width}"))),
        None => Ok(()),
    }
}

/// Appends `[features | one-hot collab]` to a sparse batch of width `p + c`.
pub fn push_inference_row(x: &mut SparseMatrix, p: usize, features: (&[usize], &[f64]), collab: &[u32]) {
    let f = features.0.iter().copied().zip(features.1.iter().copied());
    let c = collab.iter().map(|&k| (p + k as usize, 1.0));
    x.push_row(f.chain(c));
}

/// Feature rows of the given ids.
pub fn feature_batch(side: &SideInfo, role: Role, ids: &[usize]) -> SparseMatrix {
    let mut x = SparseMatrix::new(match role {
        Role::User => side.user_dim(),
        Role::Item => side.item_dim(),
    });
    for &id in ids {
        let (idx, val) = features_of(side, role, id);
        x.push_row(idx.iter().copied().zip(val.iter().copied()));
    }
    x
}

/// Inference inputs of the given ids against training matrix `r`.
pub fn inference_batch(side: &SideInfo, r: &InteractionMatrix, role: Role, ids: &[usize]) -> SparseMatrix {
    let p = match role {
        Role::User => side.user_dim(),
        Role::Item => side.item_dim(),
    };
    let c = match role {
        Role::User => r.n_items(),
        Role::Item => r.n_users(),
    };
    let mut x = SparseMatrix::new(p + c);
    for &id in ids {
        push_inference_row(&mut x, p, features_of(side, role, id), collab_of(r, role, id));
    }
    x
}

pub fn features_of(side: &SideInfo, role: Role, id: usize) -> (&[usize], &[f64]) {
    match role {
        Role::User => side.user_row(id),
        Role::Item => side.item_row(id),
    }
}

pub fn collab_of(r: &InteractionMatrix, role: Role, id: usize) -> &[u32] {
    match role {
        Role::User => r.user_row(id),
        Role::Item => r.item_col(id),
    }
}
