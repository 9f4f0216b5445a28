use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::autodiff::{sigmoid_scalar, EXP_CLAMP};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// Diagonal Gaussian stored as mean and log-variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DiagGaussian {
    /// Clamps `log_var` into [`EXP_CLAMP`].
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self, ModelError> {
        if mean.len() != log_var.len() {
            return Err(ModelError::Dim(format!(
                "mean has {} entries, log_var {}",
                mean.len(),
                log_var.len()
            )));
        }
        let log_var = log_var
            .into_iter()
            .map(|v| v.clamp(EXP_CLAMP.0, EXP_CLAMP.1))
            .collect();
        Ok(Self { mean, log_var })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|v| v.exp()).collect()
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.log_var.iter().map(|v| (0.5 * v).exp()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(&self.log_var).all(|v| v.is_finite())
    }
}

/// `mean + exp(log_var / 2) * eps`.
pub fn reparameterize(g: &DiagGaussian, eps: &[f64]) -> Result<Vec<f64>, ModelError> {
    if eps.len() != g.dim() {
        return Err(ModelError::Dim(format!(
            "noise has {} entries for a {}-dimensional Gaussian",
            eps.len(),
            g.dim()
        )));
    }
    Ok(g.mean
        .iter()
        .zip(&g.log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// `KL(q || p)` in closed form.
pub fn kl_diag(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64, ModelError> {
    if q.dim() != p.dim() {
        return Err(ModelError::Dim(format!(
            "KL between dimensions {} and {}",
            q.dim(),
            p.dim()
        )));
    }
    let mut acc = 0.0;
    for d in 0..q.dim() {
        let (mq, lq, mp, lp) = (q.mean[d], q.log_var[d], p.mean[d], p.log_var[d]);
        let diff = mq - mp;
        acc += 0.5 * ((lp - lq) + (lq.exp() + diff * diff) / lp.exp() - 1.0);
    }
    Ok(acc.max(0.0))
}

/// `sum t log p + (1 - t) log(1 - p)` with clamped probabilities.
pub fn bernoulli_loglik(targets: &[f64], probs: &[f64]) -> Result<f64, ModelError> {
    if targets.len() != probs.len() {
        return Err(ModelError::Dim(format!(
            "{} targets for {} probabilities",
            targets.len(),
            probs.len()
        )));
    }
    Ok(targets
        .iter()
        .zip(probs)
        .map(|(&t, &p)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum())
}

/// [`bernoulli_loglik`] on logits.
pub fn bernoulli_loglik_logits(targets: &[f64], logits: &[f64]) -> Result<f64, ModelError> {
    let probs: Vec<f64> = logits.iter().map(|&z| sigmoid_scalar(z)).collect();
    bernoulli_loglik(targets, &probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn reparameterize_edge_cases() {
        let g = DiagGaussian::new(vec![1.0, -2.0], vec![0.3, -1.0]).unwrap();
        assert_eq!(reparameterize(&g, &[0.0, 0.0]).unwrap(), g.mean);
        let s = DiagGaussian::standard(3);
        assert_eq!(reparameterize(&s, &[0.5, -1.0, 2.0]).unwrap(), vec![0.5, -1.0, 2.0]);
        assert!(reparameterize(&s, &[0.0]).is_err());
    }

    #[test]
    fn reparameterized_moments() {
        let g = DiagGaussian::new(vec![0.7, -1.3], vec![0.5, -0.8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let eps: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            let x = reparameterize(&g, &eps).unwrap();
            for d in 0..2 {
                sum[d] += x[d];
                sq[d] += x[d] * x[d];
            }
        }
        let var = g.variance();
        for d in 0..2 {
            let mean = sum[d] / n as f64;
            let v = sq[d] / n as f64 - mean * mean;
            assert!((mean - g.mean[d]).abs() < 0.02, "mean {mean}");
            assert!((v / var[d] - 1.0).abs() < 0.05, "var {v} vs {}", var[d]);
        }
    }

    #[test]
    fn kl_known_values() {
        let q = DiagGaussian::new(vec![1.0], vec![0.0]).unwrap();
        let p = DiagGaussian::standard(1);
        assert!((kl_diag(&q, &p).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(kl_diag(&p, &p).unwrap(), 0.0);
        assert!(kl_diag(&p, &DiagGaussian::standard(2)).is_err());
    }

    #[test]
    fn log_var_is_clamped() {
        let g = DiagGaussian::new(vec![0.0, 0.0], vec![-40.0, 99.0]).unwrap();
        assert_eq!(g.log_var, vec![-15.0, 15.0]);
        assert!(g.variance().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn bernoulli_values() {
        let v = bernoulli_loglik(&[1.0], &[0.5]).unwrap();
        assert!((v - (-0.693147)).abs() < 1e-6);
        let exact = bernoulli_loglik(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(exact <= 0.0 && exact > -1e-6);
        assert!(bernoulli_loglik(&[1.0], &[0.5, 0.5]).is_err());
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_on_equal(
            m in prop::collection::vec(-5.0f64..5.0, 4),
            lq in prop::collection::vec(-6.0f64..6.0, 4),
            mp in prop::collection::vec(-5.0f64..5.0, 4),
            lp in prop::collection::vec(-6.0f64..6.0, 4),
        ) {
            let q = DiagGaussian::new(m.clone(), lq.clone()).unwrap();
            let p = DiagGaussian::new(mp, lp).unwrap();
            prop_assert!(kl_diag(&q, &p).unwrap() >= 0.0);
            let same = DiagGaussian::new(m, lq).unwrap();
            prop_assert!(kl_diag(&q, &same).unwrap().abs() <= 1e-12);
        }

        #[test]
        fn vector_loglik_is_sum_of_scalars(
            probs in prop::collection::vec(0.0f64..=1.0, 1..20),
            bits in prop::collection::vec(any::<bool>(), 20),
        ) {
            let t: Vec<f64> = probs.iter().zip(&bits).map(|(_, &b)| f64::from(u8::from(b))).collect();
            let whole = bernoulli_loglik(&t, &probs).unwrap();
            let parts: f64 = t.iter().zip(&probs)
                .map(|(&ti, &pi)| bernoulli_loglik(&[ti], &[pi]).unwrap())
                .sum();
            prop_assert!((whole - parts).abs() <= 1e-9 * (1.0 + whole.abs()));
        }
    }
}
