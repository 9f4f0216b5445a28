//! Random 80/10/10 split of positives and the cold-start variants built on
//! it: a fraction of validation and test samples receive a fresh user (or
//! item) id that has no training history but copies the source's side
//! information.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::split::{sample_negative_items, EvalCase};
use super::{DataError, InteractionMatrix, SideInfo};
use crate::autodiff::SparseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColdMode {
    User,
    Item,
}

impl fmt::Display for ColdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColdMode::User => "user",
            ColdMode::Item => "item",
        })
    }
}

impl FromStr for ColdMode {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "user" | "cold-u" => Ok(ColdMode::User),
            "item" | "cold-i" => Ok(ColdMode::Item),
            other => Err(DataError::Invalid(format!("unknown cold mode {other:?}"))),
        }
    }
}

/// Train/validation/test partition of the positives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseSplit {
    pub train: InteractionMatrix,
    pub validation: Vec<EvalCase>,
    pub test: Vec<EvalCase>,
}

/// Shuffles all positives and cuts them 80/10/10. Every validation and test
/// positive becomes an [`EvalCase`] with negatives outside the user's full
/// row.
pub fn base_split(r: &InteractionMatrix, n_negatives: usize, seed: u64) -> BaseSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<(usize, usize, i64)> = r.triples().collect();
    pos.shuffle(&mut rng);
    let n_val = (pos.len() as f64 * 0.1).round() as usize;
    let n_test = (pos.len() as f64 * 0.1).round() as usize;
    let n_train = pos.len() - n_val - n_test;

    let mut to_case = |&(u, i, _): &(usize, usize, i64)| {
        let (negatives, short) =
            sample_negative_items(&mut rng, r.n_items(), r.user_row(u), n_negatives);
        EvalCase {
            user: u,
            held_out_item: i,
            negatives,
            short,
        }
    };
    let validation = pos[n_train..n_train + n_val].iter().map(&mut to_case).collect();
    let test = pos[n_train + n_val..].iter().map(&mut to_case).collect();
    let train = InteractionMatrix::from_triples(r.n_users(), r.n_items(), pos[..n_train].iter().copied())
        .expect("subset of a valid matrix");
    BaseSplit {
        train,
        validation,
        test,
    }
}

/// A base split whose selected evaluation samples use fresh ids.
///
/// In user mode, fresh ids are `n_users + k` and case `user` fields point at
/// them; in item mode, fresh ids are `n_items + k` in `held_out_item`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColdSplit {
    pub mode: ColdMode,
    pub fraction: f64,
    pub train: InteractionMatrix,
    pub validation: Vec<EvalCase>,
    pub test: Vec<EvalCase>,
    /// Source id of fresh id `base + k`.
    pub sources: Vec<usize>,
    /// Side-information row of fresh id `base + k`.
    pub cold_features: SparseMatrix,
}

impl ColdSplit {
    /// The base split with no cold samples.
    pub fn warm(base: &BaseSplit, side: &SideInfo, mode: ColdMode) -> Self {
        let width = match mode {
            ColdMode::User => side.user_dim(),
            ColdMode::Item => side.item_dim(),
        };
        Self {
            mode,
            fraction: 0.0,
            train: base.train.clone(),
            validation: base.validation.clone(),
            test: base.test.clone(),
            sources: Vec::new(),
            cold_features: SparseMatrix::new(width),
        }
    }

    /// First fresh id.
    pub fn base_id(&self) -> usize {
        match self.mode {
            ColdMode::User => self.train.n_users(),
            ColdMode::Item => self.train.n_items(),
        }
    }

    pub fn is_cold(&self, id: usize) -> bool {
        id >= self.base_id()
    }

    pub fn n_cold(&self) -> usize {
        self.sources.len()
    }

    pub fn source_of(&self, id: usize) -> usize {
        if self.is_cold(id) {
            self.sources[id - self.base_id()]
        } else {
            id
        }
    }

    /// Side-information row of a fresh id.
    pub fn cold_row(&self, id: usize) -> (&[usize], &[f64]) {
        self.cold_features.row(id - self.base_id())
    }

    /// Test cases that involve a fresh id.
    pub fn cold_test_cases(&self) -> impl Iterator<Item = &EvalCase> {
        self.test.iter().filter(move |c| match self.mode {
            ColdMode::User => self.is_cold(c.user),
            ColdMode::Item => self.is_cold(c.held_out_item),
        })
    }
}

/// Gives `round(fraction * |set|)` random validation and test samples each a
/// fresh id in the chosen mode.
pub fn make_cold_split(
    base: &BaseSplit,
    side: &SideInfo,
    fraction: f64,
    mode: ColdMode,
    seed: u64,
) -> Result<ColdSplit, DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::Invalid(format!(
            "cold fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = ColdSplit::warm(base, side, mode);
    split.fraction = fraction;
    let base_id = split.base_id();
    let ColdSplit {
        validation,
        test,
        sources,
        cold_features,
        ..
    } = &mut split;
    for set in [validation, test] {
        let n_cold = (fraction * set.len() as f64).round() as usize;
        let mut picks = sample(&mut rng, set.len(), n_cold).into_vec();
        picks.sort_unstable();
        for k in picks {
            let case = &mut set[k];
            let fresh = base_id + sources.len();
            let src = match mode {
                ColdMode::User => std::mem::replace(&mut case.user, fresh),
                ColdMode::Item => std::mem::replace(&mut case.held_out_item, fresh),
            };
            let (idx, vals) = match mode {
                ColdMode::User => side.user_row(src),
                ColdMode::Item => side.item_row(src),
            };
            cold_features.push_row(idx.iter().copied().zip(vals.iter().copied()));
            sources.push(src);
        }
    }
    if split.sources.is_empty() {
        return Err(DataError::Invalid(format!(
            "cold fraction {fraction} selects no samples"
        )));
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (InteractionMatrix, SideInfo) {
        let pairs: Vec<(usize, usize)> = (0..30)
            .flat_map(|u| (0..8).map(move |k| (u, (u * 3 + k * 5) % 50)))
            .collect();
        let r = InteractionMatrix::from_pairs(30, 50, pairs).unwrap();
        let mut uf = SparseMatrix::new(3);
        for u in 0..30 {
            uf.push_row([(u % 3, 1.0)]);
        }
        let mut itf = SparseMatrix::new(2);
        for i in 0..50 {
            itf.push_row([(i % 2, 0.5)]);
        }
        let side = SideInfo::new(
            uf,
            itf,
            vec!["a".into(), "b".into(), "c".into()],
            vec!["x".into(), "y".into()],
        )
        .unwrap();
        (r, side)
    }

    #[test]
    fn base_split_partitions_positives() {
        let (r, _) = fixture();
        let b = base_split(&r, 20, 4);
        assert_eq!(b.validation.len(), 24);
        assert_eq!(b.test.len(), 24);
        assert_eq!(b.train.n_positives(), r.n_positives() - 48);
        for c in b.validation.iter().chain(&b.test) {
            assert!(!b.train.contains(c.user, c.held_out_item));
            assert!(c.negatives.iter().all(|&j| !r.contains(c.user, j)));
        }
    }

    #[test]
    fn cold_users_have_no_history_and_copied_features() {
        let (r, side) = fixture();
        let b = base_split(&r, 20, 4);
        let s = make_cold_split(&b, &side, 0.3, ColdMode::User, 1).unwrap();
        let expected = (0.3f64 * 24.0).round() as usize * 2;
        assert_eq!(s.n_cold(), expected);
        assert_eq!(s.cold_test_cases().count(), (0.3f64 * 24.0).round() as usize);
        for c in s.cold_test_cases() {
            assert!(c.user >= r.n_users());
            let src = s.source_of(c.user);
            assert_eq!(s.cold_row(c.user), side.user_row(src));
        }
        // fresh ids never appear in training
        assert_eq!(s.train.n_users(), r.n_users());
    }

    #[test]
    fn item_mode_remaps_targets() {
        let (r, side) = fixture();
        let b = base_split(&r, 20, 4);
        let s = make_cold_split(&b, &side, 0.5, ColdMode::Item, 2).unwrap();
        for c in s.cold_test_cases() {
            assert!(c.held_out_item >= r.n_items());
            assert_eq!(s.cold_row(c.held_out_item), side.item_row(s.source_of(c.held_out_item)));
        }
    }

    #[test]
    fn zero_selection_is_an_error() {
        let (r, side) = fixture();
        let b = base_split(&r, 20, 4);
        assert!(make_cold_split(&b, &side, 0.001, ColdMode::User, 0).is_err());
        assert!(make_cold_split(&b, &side, 0.0, ColdMode::User, 0).is_err());
        let warm = ColdSplit::warm(&b, &side, ColdMode::User);
        assert_eq!(warm.test, b.test);
        assert_eq!(warm.n_cold(), 0);
    }
}
