use crate::autodiff::{Matrix, ParamStore};

use super::TrainError;

/// Bias-corrected adaptive-moment optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || store.values().iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Missing gradients count as zero.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Matrix>]) -> Result<(), TrainError> {
        if grads.len() != self.m.len() || store.len() != self.m.len() {
            return Err(TrainError::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let step_size = self.lr / (1.0 - self.beta1.powi(t));
        let inv_c2 = 1.0 / (1.0 - self.beta2.powi(t));
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (k, (p, g)) in store.values_mut().iter_mut().zip(grads).enumerate() {
            let (m, v) = (self.m[k].as_mut_slice(), self.v[k].as_mut_slice());
            match g {
                Some(g) => {
                    if g.shape() != p.shape() {
                        return Err(TrainError::Shape(format!(
                            "gradient {:?} for parameter {:?}",
                            g.shape(),
                            p.shape()
                        )));
                    }
                    for (((x, &gi), mi), vi) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                        *mi = b1 * *mi + (1.0 - b1) * gi;
                        *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                        *x -= step_size * *mi / ((*vi * inv_c2).sqrt() + eps);
                    }
                }
                None => {
                    for ((x, mi), vi) in p.as_mut_slice().iter_mut().zip(m).zip(v) {
                        *mi *= b1;
                        *vi *= b2;
                        *x -= step_size * *mi / ((*vi * inv_c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rescales gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Option<Matrix>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(Matrix::squared_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| g.scale_in_place(s));
    }
    norm
}
