use log::{debug, warn};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::InteractionMatrix;

/// A labelled (user, item) pair fed to the minibatch objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingPair {
    pub user: usize,
    pub item: usize,
    /// 1 for an observed interaction, 0 for a sampled negative.
    pub label: u8,
}

/// Draws positive pairs from a training matrix and uniform negatives from
/// its unobserved cells.
pub struct PairSampler<'a> {
    r: &'a InteractionMatrix,
    positives: Vec<(u32, u32)>,
}

impl<'a> PairSampler<'a> {
    pub fn new(r: &'a InteractionMatrix) -> Self {
        let positives = r.positives().map(|(u, i)| (u as u32, i as u32)).collect();
        Self { r, positives }
    }

    pub fn matrix(&self) -> &InteractionMatrix {
        self.r
    }

    pub fn positives(&self) -> &[(u32, u32)] {
        &self.positives
    }

    /// `n` negatives, uniform over unobserved (user, item) cells.
    pub fn negatives<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<TrainingPair> {
        let (m, k) = (self.r.n_users(), self.r.n_items());
        if n > 0 && self.r.n_positives() >= m * k {
            warn!("no unobserved cells to draw negatives from");
            return Vec::new();
        }
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let u = rng.gen_range(0..m);
            let i = rng.gen_range(0..k);
            if !self.r.contains(u, i) {
                out.push(TrainingPair {
                    user: u,
                    item: i,
                    label: 0,
                });
            }
        }
        out
    }

    /// The given positives followed by `neg_ratio` fresh negatives each.
    pub fn with_negatives<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        positives: &[(u32, u32)],
        neg_ratio: usize,
    ) -> Vec<TrainingPair> {
        let mut out: Vec<TrainingPair> = positives
            .iter()
            .map(|&(u, i)| TrainingPair {
                user: u as usize,
                item: i as usize,
                label: 1,
            })
            .collect();
        out.extend(self.negatives(rng, positives.len() * neg_ratio));
        out
    }

    /// `batch_positives` uniform positives (without replacement unless the
    /// matrix has fewer) plus `neg_ratio * batch_positives` uniform
    /// negatives.
    pub fn sample_minibatch<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        batch_positives: usize,
        neg_ratio: usize,
    ) -> Vec<TrainingPair> {
        let n = self.positives.len();
        let chosen: Vec<(u32, u32)> = if n == 0 {
            warn!("training matrix has no positives");
            Vec::new()
        } else if batch_positives > n {
            debug!("batch of {batch_positives} positives exceeds {n}; sampling with replacement");
            (0..batch_positives)
                .map(|_| self.positives[rng.gen_range(0..n)])
                .collect()
        } else {
            sample(rng, n, batch_positives)
                .into_iter()
                .map(|k| self.positives[k])
                .collect()
        };
        self.with_negatives(rng, &chosen, neg_ratio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> InteractionMatrix {
        InteractionMatrix::from_pairs(
            10,
            12,
            (0..10).flat_map(|u| [(u, u), (u, (u + 3) % 12), (u, (u * 7) % 12)]),
        )
        .unwrap()
    }

    #[test]
    fn counts_follow_ratio() {
        let r = InteractionMatrix::from_pairs(40, 60, (0..40).flat_map(|u| [(u, u), (u, u + 1)]))
            .unwrap();
        let s = PairSampler::new(&r);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = s.sample_minibatch(&mut rng, 21, 5);
        assert_eq!(batch.len(), 126);
        assert_eq!(batch.iter().filter(|p| p.label == 0).count(), 105);
        for p in &batch {
            assert_eq!(p.label == 1, r.contains(p.user, p.item));
        }
        let only_pos = s.sample_minibatch(&mut rng, 21, 0);
        assert!(only_pos.iter().all(|p| p.label == 1));
    }

    #[test]
    fn oversized_batch_uses_replacement() {
        let r = toy();
        let s = PairSampler::new(&r);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = s.sample_minibatch(&mut rng, 100, 1);
        assert_eq!(batch.iter().filter(|p| p.label == 1).count(), 100);
    }

    #[test]
    fn reproducible_for_equal_seeds() {
        let r = toy();
        let s = PairSampler::new(&r);
        let a = s.sample_minibatch(&mut ChaCha8Rng::seed_from_u64(9), 5, 3);
        let b = s.sample_minibatch(&mut ChaCha8Rng::seed_from_u64(9), 5, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn fully_observed_matrix_yields_no_negatives() {
        let r = InteractionMatrix::from_pairs(2, 2, [(0, 0), (0, 1), (1, 0), (1, 1)]).unwrap();
        let s = PairSampler::new(&r);
        assert!(s.negatives(&mut ChaCha8Rng::seed_from_u64(0), 5).is_empty());
    }
}
