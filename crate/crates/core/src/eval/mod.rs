//! Ranking metrics over held-out cases.
//!
//! Each case ranks its held-out item among its sampled negatives. The rank
//! is 1 plus the number of candidates scoring strictly higher, plus those
//! scoring equal with a smaller item id. `HR@k` is the share of cases ranked
//! within the top `k`; `NDCG@k` averages `1 / log2(rank + 1)` over those
//! cases (0 otherwise).

mod ablation;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use ablation::{cold_run, compare_ablations, test_warm, warm_run, AblationResult, Variant};

use crate::data::{ColdMode, ColdSplit, EvalCase, CACHE_VERSION};
use crate::model::{DiagGaussian, ModelError, Role};
use crate::predict::Predictor;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite score for user {user}")]
    NonFinite { user: usize },
    #[error("no evaluation cases")]
    NoCases,
    #[error("{0}")]
    Invalid(String),
}

/// Scores every candidate of a case, held-out item first.
pub trait Scorer {
    fn score(&self, case: &EvalCase) -> Result<Vec<f64>, EvalError>;
}

/// 1-based rank of the first candidate.
pub fn rank_of_target(scores: &[f64], candidates: &[usize]) -> usize {
    let (t, id) = (scores[0], candidates[0]);
    1 + scores
        .iter()
        .zip(candidates)
        .skip(1)
        .filter(|&(&s, &c)| s > t || (s == t && c < id))
        .count()
}

pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// Expected `NDCG@k` of a uniformly random ranking of `n` candidates.
pub fn random_ndcg(k: usize, n: usize) -> f64 {
    (1..=k.min(n)).map(|r| ndcg_at_k(r, k)).sum::<f64>() / n as f64
}

/// Short hex digest identifying the configuration behind a report.
pub fn fingerprint(config_json: &str) -> String {
    let mut h = Sha256::new();
    h.update(config_json.as_bytes());
    h.update(format!("cache-v{CACHE_VERSION}").as_bytes());
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Mean metrics at several cutoffs.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub label: String,
    pub ks: Vec<usize>,
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
    /// Rank of each case's held-out item, in case order.
    pub ranks: Vec<usize>,
    pub seed: u64,
    pub fingerprint: String,
}

impl MetricReport {
    pub fn from_ranks(label: impl Into<String>, ranks: Vec<usize>, ks: &[usize]) -> Self {
        let n = ranks.len().max(1) as f64;
        let mean = |f: fn(usize, usize) -> f64, k| ranks.iter().map(|&r| f(r, k)).sum::<f64>() / n;
        Self {
            label: label.into(),
            ks: ks.to_vec(),
            hr: ks.iter().map(|&k| mean(hr_at_k, k)).collect(),
            ndcg: ks.iter().map(|&k| mean(ndcg_at_k, k)).collect(),
            ranks,
            seed: 0,
            fingerprint: String::new(),
        }
    }

    pub fn cases(&self) -> usize {
        self.ranks.len()
    }

    pub fn hr_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|p| self.hr[p])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|p| self.ndcg[p])
    }

    /// Restricts to the cases selected by `keep` (in case order).
    pub fn subset(&self, label: impl Into<String>, keep: &[bool]) -> Self {
        let ranks = self
            .ranks
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(&r, _)| r)
            .collect();
        let mut out = Self::from_ranks(label, ranks, &self.ks);
        out.seed = self.seed;
        out.fingerprint = self.fingerprint.clone();
        out
    }

    pub const CSV_HEADER: &'static str = "label,k,hr,ndcg,cases,seed,fingerprint";

    /// One CSV row per cutoff, without header.
    pub fn csv_rows(&self) -> String {
        self.ks
            .iter()
            .enumerate()
            .map(|(p, k)| {
                format!(
                    "{},{k},{:.6},{:.6},{},{},{}\n",
                    self.label,
                    self.hr[p],
                    self.ndcg[p],
                    self.cases(),
                    self.seed,
                    self.fingerprint
                )
            })
            .collect()
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} ({} cases, seed {})", self.label, self.cases(), self.seed)?;
        writeln!(f, "{:>6} {:>8} {:>8}", "k", "HR", "NDCG")?;
        for (p, k) in self.ks.iter().enumerate() {
            writeln!(f, "{k:>6} {:>8.4} {:>8.4}", self.hr[p], self.ndcg[p])?;
        }
        Ok(())
    }
}

/// Ranks every case with `scorer`.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    cases: &[EvalCase],
    ks: &[usize],
    label: &str,
) -> Result<MetricReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::NoCases);
    }
    let mut ranks = Vec::with_capacity(cases.len());
    for case in cases {
        let scores = scorer.score(case)?;
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(EvalError::NonFinite { user: case.user });
        }
        ranks.push(rank_of_target(&scores, &case.candidates()));
    }
    Ok(MetricReport::from_ranks(label, ranks, ks))
}

/// Uniform random scores, reproducible per case.
pub struct RandomScorer {
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn score(&self, case: &EvalCase) -> Result<Vec<f64>, EvalError> {
        let key = (case.user as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ case.held_out_item as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ key);
        Ok((0..=case.negatives.len()).map(|_| rng.gen::<f64>()).collect())
    }
}

/// Knows the answer: 1 for the held-out item, 0 otherwise.
pub struct OracleScorer;

impl Scorer for OracleScorer {
    fn score(&self, case: &EvalCase) -> Result<Vec<f64>, EvalError> {
        let mut s = vec![0.0; case.negatives.len() + 1];
        s[0] = 1.0;
        Ok(s)
    }
}

/// Model scores for warm ids, and for the fresh ids of an optional cold split.
pub struct ModelScorer<'p, 'm> {
    predictor: &'p Predictor<'m>,
    cold: Option<&'p ColdSplit>,
}

impl<'p, 'm> ModelScorer<'p, 'm> {
    pub fn warm(predictor: &'p Predictor<'m>) -> Self {
        Self { predictor, cold: None }
    }

    pub fn cold(predictor: &'p Predictor<'m>, split: &'p ColdSplit) -> Self {
        Self {
            predictor,
            cold: Some(split),
        }
    }

    fn item_gaussian(&self, id: usize) -> Result<DiagGaussian, EvalError> {
        match self.cold {
            Some(s) if s.mode == ColdMode::Item && s.is_cold(id) => {
                Ok(self.predictor.cold_prior(Role::Item, s.cold_row(id))?)
            }
            _ if id < self.predictor.n_items() => Ok(self.predictor.item_posterior(id)),
            _ => Err(EvalError::Invalid(format!("item {id} is out of range"))),
        }
    }

    fn user_gaussian(&self, id: usize) -> Result<DiagGaussian, EvalError> {
        match self.cold {
            Some(s) if s.mode == ColdMode::User && s.is_cold(id) => {
                Ok(self.predictor.cold_prior(Role::User, s.cold_row(id))?)
            }
            _ if id < self.predictor.n_users() => Ok(self.predictor.user_posterior(id)),
            _ => Err(EvalError::Invalid(format!("user {id} is out of range"))),
        }
    }
}

impl Scorer for ModelScorer<'_, '_> {
    fn score(&self, case: &EvalCase) -> Result<Vec<f64>, EvalError> {
        let u = self.user_gaussian(case.user)?;
        let items = case
            .candidates()
            .into_iter()
            .map(|i| self.item_gaussian(i))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.predictor.score_gaussians(&u, &items.iter().collect::<Vec<_>>())?)
    }
}

/// Evaluates a cold split's test cases. Returns the report over all cases
/// and the report over the cases involving a fresh id.
pub fn evaluate_cold(
    predictor: &Predictor,
    split: &ColdSplit,
    ks: &[usize],
) -> Result<(MetricReport, MetricReport), EvalError> {
    let all = evaluate(
        &ModelScorer::cold(predictor, split),
        &split.test,
        ks,
        &format!("cold-{}", split.mode),
    )?;
    let keep: Vec<bool> = split
        .test
        .iter()
        .map(|c| match split.mode {
            ColdMode::User => split.is_cold(c.user),
            ColdMode::Item => split.is_cold(c.held_out_item),
        })
        .collect();
    let only = all.subset(format!("cold-{}-only", split.mode), &keep);
    Ok((all, only))
}
