use std::collections::BTreeSet;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::InteractionMatrix;

/// Sampled negatives per evaluation case.
pub const EVAL_NEGATIVES: usize = 99;

/// One held-out positive ranked against sampled negatives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCase {
    pub user: usize,
    pub held_out_item: usize,
    pub negatives: Vec<usize>,
    /// Fewer non-interacted items existed than requested negatives.
    pub short: bool,
}

impl EvalCase {
    /// Held-out item first, then negatives.
    pub fn candidates(&self) -> Vec<usize> {
        std::iter::once(self.held_out_item)
            .chain(self.negatives.iter().copied())
            .collect()
    }
}

/// Training matrix with one held-out case per qualifying user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaveOneOut {
    pub train: InteractionMatrix,
    pub cases: Vec<EvalCase>,
}

/// Draws `k` distinct items outside `excluded` (sorted ascending). Returns
/// every available item, shuffled, when fewer than `k` exist.
pub fn sample_negative_items<R: Rng + ?Sized>(
    rng: &mut R,
    n_items: usize,
    excluded: &[u32],
    k: usize,
) -> (Vec<usize>, bool) {
    let available = n_items - excluded.len();
    if available <= k {
        let mut all: Vec<usize> = (0..n_items)
            .filter(|&i| excluded.binary_search(&(i as u32)).is_err())
            .collect();
        all.shuffle(rng);
        return (all, available < k);
    }
    let mut chosen = BTreeSet::new();
    let mut out = Vec::with_capacity(k);
    if available * 2 >= n_items {
        while out.len() < k {
            let i = rng.gen_range(0..n_items);
            if excluded.binary_search(&(i as u32)).is_err() && chosen.insert(i) {
                out.push(i);
            }
        }
    } else {
        let mut pool: Vec<usize> = (0..n_items)
            .filter(|&i| excluded.binary_search(&(i as u32)).is_err())
            .collect();
        let (picked, _) = pool.partial_shuffle(rng, k);
        out.extend_from_slice(picked);
    }
    (out, false)
}

/// Holds out each user's most recent positive (ties: larger item id).
///
/// Users with fewer than two positives keep all of them in training and get
/// no case. Negatives are drawn from items absent from the user's row in
/// `known`, which must contain `r` (pass `r` itself in the common case).
pub fn leave_one_out_split(
    r: &InteractionMatrix,
    known: &InteractionMatrix,
    n_negatives: usize,
    seed: u64,
) -> LeaveOneOut {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    let mut held = Vec::new();
    for u in 0..r.n_users() {
        let items = r.user_row(u);
        if items.len() < 2 {
            continue;
        }
        let times = r.user_times(u);
        let (k, _) = (0..items.len())
            .map(|k| (k, (times[k], items[k])))
            .max_by_key(|&(_, key)| key)
            .unwrap();
        let target = items[k] as usize;
        let (negatives, short) =
            sample_negative_items(&mut rng, r.n_items(), known.user_row(u), n_negatives);
        if short {
            warn!("user {u}: only {} negatives available", negatives.len());
        }
        held.push((u, target));
        cases.push(EvalCase {
            user: u,
            held_out_item: target,
            negatives,
            short,
        });
    }
    LeaveOneOut {
        train: r.without(&held),
        cases,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latest_positive_is_held_out() {
        let r = InteractionMatrix::from_triples(1, 200, [(0, 5, 1), (0, 9, 9)]).unwrap();
        let s = leave_one_out_split(&r, &r, 99, 0);
        assert_eq!(s.cases.len(), 1);
        assert_eq!(s.cases[0].held_out_item, 9);
        assert_eq!(s.train.user_row(0), &[5]);
        assert_eq!(s.cases[0].negatives.len(), 99);
    }

    #[test]
    fn timestamp_tie_holds_out_larger_item() {
        let r = InteractionMatrix::from_triples(1, 200, [(0, 7, 3), (0, 2, 3)]).unwrap();
        let s = leave_one_out_split(&r, &r, 10, 0);
        assert_eq!(s.cases[0].held_out_item, 7);
    }

    #[test]
    fn single_positive_user_gets_no_case() {
        let r = InteractionMatrix::from_triples(2, 200, [(0, 1, 1), (1, 1, 1), (1, 2, 2)]).unwrap();
        let s = leave_one_out_split(&r, &r, 99, 0);
        assert_eq!(s.cases.len(), 1);
        assert_eq!(s.cases[0].user, 1);
        assert_eq!(s.train.user_row(0), &[1]);
    }

    #[test]
    fn short_candidate_pool_is_flagged() {
        let r = InteractionMatrix::from_triples(1, 10, [(0, 1, 1), (0, 2, 2)]).unwrap();
        let s = leave_one_out_split(&r, &r, 99, 0);
        assert!(s.cases[0].short);
        assert_eq!(s.cases[0].negatives.len(), 8);
        assert!(!s.cases[0].negatives.contains(&1) && !s.cases[0].negatives.contains(&2));
    }

    #[test]
    fn dense_user_uses_pool_sampling() {
        let items: Vec<(usize, usize, i64)> = (0..150).map(|i| (0, i, i as i64)).collect();
        let r = InteractionMatrix::from_triples(1, 200, items).unwrap();
        let s = leave_one_out_split(&r, &r, 20, 3);
        let negs = &s.cases[0].negatives;
        assert_eq!(negs.len(), 20);
        assert!(negs.iter().all(|&i| i >= 150));
        let unique: BTreeSet<_> = negs.iter().collect();
        assert_eq!(unique.len(), 20);
    }
}
