//! Dynamic reverse-mode tape over [`Matrix`] values.
//!
//! Every operation appends a node holding its forward value and the indices
//! of its parents. Parents always precede children, so a single reverse
//! sweep over the node list visits the graph in topological order.

use super::matrix::gemm;
use super::{AutodiffError, LayerParams, Matrix, ParamId, ParamStore, SparseMatrix};

/// Bounds applied to the argument of every exponential on the tape.
pub const EXP_CLAMP: (f64, f64) = (-15.0, 15.0);

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpTag {
    Constant,
    Param,
    Affine,
    SparseAffine,
    Relu,
    Sigmoid,
    Exp,
    Clamp,
    Add,
    Sub,
    Mul,
    Scale,
    ConcatCols,
    GatherRows,
    Sum,
    KlDiag,
    BernoulliLogits,
}

enum Op {
    Constant,
    Param(ParamId),
    Affine { x: Var, w: Var, b: Var },
    SparseAffine { x: usize, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ConcatCols(Var, Var),
    GatherRows { x: Var, idx: Vec<usize> },
    Sum(Var),
    KlDiag { qm: Var, qlv: Var, pm: Var, plv: Var },
    BernoulliLogits { logits: Var, targets: Matrix },
}

impl Op {
    fn tag(&self) -> OpTag {
        match self {
            Op::Constant => OpTag::Constant,
            Op::Param(_) => OpTag::Param,
            Op::Affine { .. } => OpTag::Affine,
            Op::SparseAffine { .. } => OpTag::SparseAffine,
            Op::Relu(_) => OpTag::Relu,
            Op::Sigmoid(_) => OpTag::Sigmoid,
            Op::Exp(_) => OpTag::Exp,
            Op::Clamp { .. } => OpTag::Clamp,
            Op::Add(..) => OpTag::Add,
            Op::Sub(..) => OpTag::Sub,
            Op::Mul(..) => OpTag::Mul,
            Op::Scale(..) => OpTag::Scale,
            Op::ConcatCols(..) => OpTag::ConcatCols,
            Op::GatherRows { .. } => OpTag::GatherRows,
            Op::Sum(_) => OpTag::Sum,
            Op::KlDiag { .. } => OpTag::KlDiag,
            Op::BernoulliLogits { .. } => OpTag::BernoulliLogits,
        }
    }
}

struct Node {
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Matrix>,
    shape: (usize, usize),
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward/backward pass.
///
/// A tape borrows the parameter store immutably; parameter updates happen
/// after [`Tape::backward`] once the tape is dropped.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    sparse: Vec<SparseMatrix>,
    param_vars: Vec<Option<Var>>,
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    params: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a node, if it was reached.
    /// Parameter nodes report through [`Gradients::param`] instead.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].as_ref()
    }

    /// Gradient with respect to a parameter, if the loss depends on it.
    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Per-parameter gradients indexed by [`ParamId`].
    pub fn into_params(self) -> Vec<Option<Matrix>> {
        self.params
    }
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> AutodiffError {
    AutodiffError::Shape(format!(
        "{what}: {}x{} vs {}x{}",
        a.0, a.1, b.0, b.1
    ))
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `x · weightᵀ + bias`, one output row per input row.
pub fn affine(x: &Matrix, weight: &Matrix, bias: &Matrix) -> Result<Matrix, AutodiffError> {
    if x.cols() != weight.cols() {
        return Err(shape_err("affine input vs weight", x.shape(), weight.shape()));
    }
    if bias.shape() != (1, weight.rows()) {
        return Err(shape_err("affine bias vs weight", bias.shape(), weight.shape()));
    }
    let mut out = Matrix::zeros(x.rows(), weight.rows());
    for r in 0..out.rows() {
        out.row_mut(r).copy_from_slice(bias.as_slice());
    }
    gemm(1.0, x, false, weight, true, 1.0, &mut out);
    Ok(out)
}

/// [`affine`] for a sparse input.
pub fn sparse_affine(
    x: &SparseMatrix,
    weight: &Matrix,
    bias: &Matrix,
) -> Result<Matrix, AutodiffError> {
    if x.cols() != weight.cols() {
        return Err(shape_err(
            "affine input vs weight",
            (x.rows(), x.cols()),
            weight.shape(),
        ));
    }
    if bias.shape() != (1, weight.rows()) {
        return Err(shape_err("affine bias vs weight", bias.shape(), weight.shape()));
    }
    let out_dim = weight.rows();
    let mut out = Matrix::zeros(x.rows(), out_dim);
    let bias = bias.as_slice();
    let buf = out.as_mut_slice();
    for o in 0..out_dim {
        let w = weight.row(o);
        for r in 0..x.rows() {
            let (idx, vals) = x.row(r);
            let mut acc = bias[o];
            for (&c, &v) in idx.iter().zip(vals) {
                acc += v * w[c];
            }
            buf[r * out_dim + o] = acc;
        }
    }
    Ok(out)
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &Matrix) -> Matrix {
    x.map(sigmoid_scalar)
}

/// Elementwise exponential of the input clamped to [`EXP_CLAMP`].
pub fn exp(x: &Matrix) -> Matrix {
    x.map(|v| v.clamp(EXP_CLAMP.0, EXP_CLAMP.1).exp())
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            sparse: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.store.get(*id),
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn op_tag(&self, v: Var) -> OpTag {
        self.nodes[v.0].op.tag()
    }

    /// Direct parents of a node, in operand order.
    pub fn parents(&self, v: Var) -> Vec<Var> {
        match &self.nodes[v.0].op {
            Op::Constant | Op::Param(_) => vec![],
            Op::Affine { x, w, b } => vec![*x, *w, *b],
            Op::SparseAffine { w, b, .. } => vec![*w, *b],
            Op::Relu(x) | Op::Sigmoid(x) | Op::Exp(x) | Op::Sum(x) | Op::Scale(x, _) => vec![*x],
            Op::Clamp { x, .. } | Op::GatherRows { x, .. } => vec![*x],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::KlDiag { qm, qlv, pm, plv } => vec![*qm, *qlv, *pm, *plv],
            Op::BernoulliLogits { logits, .. } => vec![*logits],
        }
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape: value.shape(),
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].shape
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A leaf whose gradient is tracked, holding an owned value.
    pub fn variable(&mut self, value: Matrix) -> Var {
        // Owned leaves reuse the constant op; only the flag differs.
        self.push(value, Op::Constant, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            shape: self.store.get(id).shape(),
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn affine(&mut self, x: Var, layer: &LayerParams) -> Result<Var, AutodiffError> {
        let w = self.param(layer.weight);
        let b = self.param(layer.bias);
        let value = affine(self.value(x), self.value(w), self.value(b))?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(value, Op::Affine { x, w, b }, rg))
    }

    /// Affine layer over a constant sparse input.
    pub fn sparse_affine(
        &mut self,
        x: SparseMatrix,
        layer: &LayerParams,
    ) -> Result<Var, AutodiffError> {
        let w = self.param(layer.weight);
        let b = self.param(layer.bias);
        let value = sparse_affine(&x, self.value(w), self.value(b))?;
        self.sparse.push(x);
        let x = self.sparse.len() - 1;
        Ok(self.push(value, Op::SparseAffine { x, w, b }, true))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = relu(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = sigmoid(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = exp(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::Exp(x), rg)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.rg(x);
        self.push(value, Op::Clamp { x, lo, hi }, rg)
    }

    fn zip_with(
        &mut self,
        what: &str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(what, va.shape(), vb.shape()));
        }
        let data = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Matrix::from_vec(va.rows(), va.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = self.zip_with("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = self.zip_with("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = self.zip_with("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, factor), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(shape_err("concat_cols", va.shape(), vb.shape()));
        }
        let cols = va.cols() + vb.cols();
        let mut data = Vec::with_capacity(va.rows() * cols);
        for r in 0..va.rows() {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let value = Matrix::from_vec(va.rows(), cols, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::ConcatCols(a, b), rg))
    }

    /// Output row `r` is input row `idx[r]`.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var, AutodiffError> {
        let vx = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= vx.rows()) {
            return Err(AutodiffError::Shape(format!(
                "gather_rows index {bad} out of range for {} rows",
                vx.rows()
            )));
        }
        let value = vx.select_rows(&idx);
        let rg = self.rg(x);
        Ok(self.push(value, Op::GatherRows { x, idx }, rg))
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg)
    }

    /// Row-wise `KL(N(qm, e^qlv) || N(pm, e^plv))`, summed over columns.
    /// Returns a rows×1 node.
    pub fn kl_diag(&mut self, qm: Var, qlv: Var, pm: Var, plv: Var) -> Result<Var, AutodiffError> {
        let shape = self.shape(qm);
        for v in [qlv, pm, plv] {
            if self.shape(v) != shape {
                return Err(shape_err("kl_diag", shape, self.shape(v)));
            }
        }
        let (a, b, c, d) = (self.value(qm), self.value(qlv), self.value(pm), self.value(plv));
        let mut out = Matrix::zeros(shape.0, 1);
        for r in 0..shape.0 {
            let mut acc = 0.0;
            for k in 0..shape.1 {
                let (mq, lq, mp, lp) = (a.get(r, k), b.get(r, k), c.get(r, k), d.get(r, k));
                let diff = mq - mp;
                acc += 0.5 * ((lp - lq) + ((lq - lp).exp() + diff * diff * (-lp).exp()) - 1.0);
            }
            out.set(r, 0, acc);
        }
        let rg = [qm, qlv, pm, plv].iter().any(|&v| self.rg(v));
        Ok(self.push(out, Op::KlDiag { qm, qlv, pm, plv }, rg))
    }

    /// Row-wise Bernoulli log-likelihood of binary `targets` under
    /// probabilities `sigmoid(logits)`, summed over columns. Returns rows×1.
    pub fn bernoulli_logits(&mut self, logits: Var, targets: Matrix) -> Result<Var, AutodiffError> {
        let z = self.value(logits);
        if z.shape() != targets.shape() {
            return Err(shape_err("bernoulli targets", z.shape(), targets.shape()));
        }
        let mut out = Matrix::zeros(z.rows(), 1);
        for r in 0..z.rows() {
            let acc: f64 = z
                .row(r)
                .iter()
                .zip(targets.row(r))
                .map(|(&zi, &t)| t * zi - softplus(zi))
                .sum();
            out.set(r, 0, acc);
        }
        let rg = self.rg(logits);
        Ok(self.push(out, Op::BernoulliLogits { logits, targets }, rg))
    }

    /// Reverse sweep from a 1x1 node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.shape(loss) != (1, 1) {
            let (r, c) = self.shape(loss);
            return Err(AutodiffError::Contract(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..n).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            let Some(dy) = upper[0].as_ref() else {
                continue;
            };
            self.propagate(i, dy, lower);
        }

        let mut params: Vec<Option<Matrix>> = (0..self.store.len()).map(|_| None).collect();
        for (i, node) in self.nodes.iter().enumerate().take(n) {
            if let Op::Param(id) = node.op {
                if let Some(g) = grads[i].take() {
                    match &mut params[id.0] {
                        Some(acc) => acc.add_scaled(&g, 1.0),
                        slot => *slot = Some(g),
                    }
                }
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn propagate(&self, i: usize, dy: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let y = node.value.as_ref();
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::Affine { x, w, b } => {
                if self.rg(*x) {
                    let g = slot(grads, *x, self.shape(*x));
                    gemm(1.0, dy, false, self.value(*w), false, 1.0, g);
                }
                if self.rg(*w) {
                    let g = slot(grads, *w, self.shape(*w));
                    gemm(1.0, dy, true, self.value(*x), false, 1.0, g);
                }
                if self.rg(*b) {
                    add_col_sums(slot(grads, *b, self.shape(*b)), dy);
                }
            }
            Op::SparseAffine { x, w, b } => {
                let xs = &self.sparse[*x];
                if self.rg(*w) {
                    let g = slot(grads, *w, self.shape(*w));
                    let out_dim = dy.cols();
                    for o in 0..out_dim {
                        let grow = g.row_mut(o);
                        for r in 0..xs.rows() {
                            let d = dy.as_slice()[r * out_dim + o];
                            if d == 0.0 {
                                continue;
                            }
                            let (idx, vals) = xs.row(r);
                            for (&c, &v) in idx.iter().zip(vals) {
                                grow[c] += d * v;
                            }
                        }
                    }
                }
                if self.rg(*b) {
                    add_col_sums(slot(grads, *b, self.shape(*b)), dy);
                }
            }
            Op::Relu(x) => {
                let y = y.unwrap();
                let g = slot(grads, *x, self.shape(*x));
                for ((g, &d), &out) in g.as_mut_slice().iter_mut().zip(dy.as_slice()).zip(y.as_slice()) {
                    if out > 0.0 {
                        *g += d;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = y.unwrap();
                let g = slot(grads, *x, self.shape(*x));
                for ((g, &d), &s) in g.as_mut_slice().iter_mut().zip(dy.as_slice()).zip(y.as_slice()) {
                    *g += d * s * (1.0 - s);
                }
            }
            Op::Exp(x) => {
                let y = y.unwrap();
                let input = self.value(*x).as_slice();
                let g = slot(grads, *x, self.shape(*x));
                for (k, gk) in g.as_mut_slice().iter_mut().enumerate() {
                    let v = input[k];
                    if (EXP_CLAMP.0..=EXP_CLAMP.1).contains(&v) {
                        *gk += dy.as_slice()[k] * y.as_slice()[k];
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                let input = self.value(*x).as_slice();
                let g = slot(grads, *x, self.shape(*x));
                for (k, gk) in g.as_mut_slice().iter_mut().enumerate() {
                    if (*lo..=*hi).contains(&input[k]) {
                        *gk += dy.as_slice()[k];
                    }
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    slot(grads, *a, self.shape(*a)).add_scaled(dy, 1.0);
                }
                if self.rg(*b) {
                    slot(grads, *b, self.shape(*b)).add_scaled(dy, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    slot(grads, *a, self.shape(*a)).add_scaled(dy, 1.0);
                }
                if self.rg(*b) {
                    slot(grads, *b, self.shape(*b)).add_scaled(dy, -1.0);
                }
            }
            Op::Mul(a, b) => {
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if self.rg(this) {
                        let ov = self.value(other).as_slice();
                        let g = slot(grads, this, self.shape(this));
                        for (k, gk) in g.as_mut_slice().iter_mut().enumerate() {
                            *gk += dy.as_slice()[k] * ov[k];
                        }
                    }
                }
            }
            Op::Scale(x, f) => {
                slot(grads, *x, self.shape(*x)).add_scaled(dy, *f);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.shape(*a).1;
                if self.rg(*a) {
                    let g = slot(grads, *a, self.shape(*a));
                    for r in 0..dy.rows() {
                        for (gk, &d) in g.row_mut(r).iter_mut().zip(&dy.row(r)[..ca]) {
                            *gk += d;
                        }
                    }
                }
                if self.rg(*b) {
                    let g = slot(grads, *b, self.shape(*b));
                    for r in 0..dy.rows() {
                        for (gk, &d) in g.row_mut(r).iter_mut().zip(&dy.row(r)[ca..]) {
                            *gk += d;
                        }
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let g = slot(grads, *x, self.shape(*x));
                for (r, &src) in idx.iter().enumerate() {
                    for (gk, &d) in g.row_mut(src).iter_mut().zip(dy.row(r)) {
                        *gk += d;
                    }
                }
            }
            Op::Sum(x) => {
                let d = dy.item();
                slot(grads, *x, self.shape(*x))
                    .as_mut_slice()
                    .iter_mut()
                    .for_each(|g| *g += d);
            }
            Op::KlDiag { qm, qlv, pm, plv } => {
                let (rows, cols) = self.shape(*qm);
                let (a, b, c, d) = (
                    self.value(*qm),
                    self.value(*qlv),
                    self.value(*pm),
                    self.value(*plv),
                );
                let mut gqm = Matrix::zeros(rows, cols);
                let mut gqlv = Matrix::zeros(rows, cols);
                let mut gpm = Matrix::zeros(rows, cols);
                let mut gplv = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let up = dy.get(r, 0);
                    for k in 0..cols {
                        let (mq, lq, mp, lp) = (a.get(r, k), b.get(r, k), c.get(r, k), d.get(r, k));
                        let inv_vp = (-lp).exp();
                        let diff = mq - mp;
                        let ratio = (lq - lp).exp();
                        gqm.set(r, k, up * diff * inv_vp);
                        gpm.set(r, k, -up * diff * inv_vp);
                        gqlv.set(r, k, up * 0.5 * (ratio - 1.0));
                        gplv.set(r, k, up * 0.5 * (1.0 - ratio - diff * diff * inv_vp));
                    }
                }
                for (v, g) in [(*qm, gqm), (*qlv, gqlv), (*pm, gpm), (*plv, gplv)] {
                    if self.rg(v) {
                        slot(grads, v, (rows, cols)).add_scaled(&g, 1.0);
                    }
                }
            }
            Op::BernoulliLogits { logits, targets } => {
                let z = self.value(*logits);
                let g = slot(grads, *logits, z.shape());
                let cols = z.cols();
                for r in 0..z.rows() {
                    let up = dy.get(r, 0);
                    let zr = z.row(r);
                    let tr = targets.row(r);
                    let gr = &mut g.as_mut_slice()[r * cols..(r + 1) * cols];
                    for k in 0..cols {
                        gr[k] += up * (tr[k] - sigmoid_scalar(zr[k]));
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn add_col_sums(g: &mut Matrix, dy: &Matrix) {
    let gs = g.as_mut_slice();
    for r in 0..dy.rows() {
        for (gk, &d) in gs.iter_mut().zip(dy.row(r)) {
            *gk += d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity_and_forced_zero() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]);
        let out = affine(&x, &Matrix::identity(2), &Matrix::zeros(1, 2)).unwrap();
        assert_eq!(out, x);

        let x = Matrix::from_rows(&[[1.0, 1.0]]);
        let w = Matrix::from_rows(&[[1.0, 1.0]]);
        let out = affine(&x, &w, &Matrix::scalar(-2.0)).unwrap();
        assert_eq!(out, Matrix::scalar(0.0));
    }

    #[test]
    fn affine_names_both_shapes() {
        let err = affine(&Matrix::zeros(2, 3), &Matrix::zeros(4, 5), &Matrix::zeros(1, 4))
            .unwrap_err()
            .to_string();
        assert!(err.contains("2x3") && err.contains("4x5"), "{err}");
    }

    #[test]
    fn activations_pointwise() {
        let x = Matrix::from_rows(&[[-1.0, 2.0, 0.0]]);
        assert_eq!(relu(&x).as_slice(), &[0.0, 2.0, 0.0]);
        assert_eq!(sigmoid(&x).get(0, 2), 0.5);
        assert!(exp(&Matrix::scalar(1e6)).item().is_finite());
        assert_eq!(exp(&Matrix::scalar(100.0)).item(), 15f64.exp());
    }

    #[test]
    fn sum_gives_ones() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.variable(Matrix::from_rows(&[[1.0, -2.0], [3.0, 0.5], [7.0, 8.0]]));
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &Matrix::filled(3, 2, 1.0));
    }

    #[test]
    fn sigmoid_slope_at_origin() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Matrix::scalar(0.0));
        let b = store.insert("b", Matrix::scalar(0.0));
        let layer = LayerParams {
            weight: w,
            bias: b,
            in_dim: 1,
            out_dim: 1,
        };
        let mut tape = Tape::new(&store);
        let x = tape.constant(Matrix::scalar(1.0));
        let h = tape.affine(x, &layer).unwrap();
        let s = tape.sigmoid(h);
        let g = tape.backward(s).unwrap();
        assert!((g.param(w).unwrap().item() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.variable(Matrix::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(AutodiffError::Contract(_))));
    }

    #[test]
    fn reused_node_accumulates() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.variable(Matrix::from_rows(&[[3.0]]));
        let y = tape.mul(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        let g = tape.backward(z).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 7.0);
    }

    #[test]
    fn bernoulli_logits_matches_closed_form() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let z = tape.variable(Matrix::from_rows(&[[0.0, 2.0]]));
        let ll = tape
            .bernoulli_logits(z, Matrix::from_rows(&[[1.0, 0.0]]))
            .unwrap();
        let expected = 0.5f64.ln() + (1.0 - sigmoid_scalar(2.0)).ln();
        assert!((tape.value(ll).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn kl_zero_for_identical() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let m = tape.variable(Matrix::from_rows(&[[0.3, -1.0]]));
        let lv = tape.variable(Matrix::from_rows(&[[0.1, -2.0]]));
        let kl = tape.kl_diag(m, lv, m, lv).unwrap();
        assert_eq!(tape.value(kl).item(), 0.0);
    }
}
