use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::autodiff::SparseMatrix;

/// Side information of all users and items.
///
/// Row `u` of `user_features` is the feature vector `f_u` (so the matrix is
/// the transpose of the usual P×M layout); likewise for items. Stored
/// sparse because bag-of-words and social features are mostly zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideInfo {
    user_features: SparseMatrix,
    item_features: SparseMatrix,
    user_feature_names: Vec<String>,
    item_feature_names: Vec<String>,
}

impl SideInfo {
    pub fn new(
        user_features: SparseMatrix,
        item_features: SparseMatrix,
        user_feature_names: Vec<String>,
        item_feature_names: Vec<String>,
    ) -> Result<Self, DataError> {
        if user_features.cols() == 0 || item_features.cols() == 0 {
            return Err(DataError::Invalid(
                "side information needs at least one user and one item feature".into(),
            ));
        }
        if user_feature_names.len() != user_features.cols()
            || item_feature_names.len() != item_features.cols()
        {
            return Err(DataError::Invalid("feature names do not match feature widths".into()));
        }
        for m in [&user_features, &item_features] {
            for r in 0..m.rows() {
                if m.row(r).1.iter().any(|v| !v.is_finite()) {
                    return Err(DataError::Invalid(format!("non-finite feature in row {r}")));
                }
            }
        }
        Ok(Self {
            user_features,
            item_features,
            user_feature_names,
            item_feature_names,
        })
    }

    /// User feature width `P`.
    pub fn user_dim(&self) -> usize {
        self.user_features.cols()
    }

    /// Item feature width `Q`.
    pub fn item_dim(&self) -> usize {
        self.item_features.cols()
    }

    pub fn n_users(&self) -> usize {
        self.user_features.rows()
    }

    pub fn n_items(&self) -> usize {
        self.item_features.rows()
    }

    pub fn user_features(&self) -> &SparseMatrix {
        &self.user_features
    }

    pub fn item_features(&self) -> &SparseMatrix {
        &self.item_features
    }

    pub fn user_feature_names(&self) -> &[String] {
        &self.user_feature_names
    }

    pub fn item_feature_names(&self) -> &[String] {
        &self.item_feature_names
    }

    /// `(column, value)` entries of `f_u`.
    pub fn user_row(&self, u: usize) -> (&[usize], &[f64]) {
        self.user_features.row(u)
    }

    /// `(column, value)` entries of `g_i`.
    pub fn item_row(&self, i: usize) -> (&[usize], &[f64]) {
        self.item_features.row(i)
    }

    pub fn user_dense(&self, u: usize) -> Vec<f64> {
        densify(self.user_features.row(u), self.user_dim())
    }

    pub fn item_dense(&self, i: usize) -> Vec<f64> {
        densify(self.item_features.row(i), self.item_dim())
    }

    /// Copy with user rows reordered: new row `k` is old row `perm[k]`.
    pub fn permute_users(&self, perm: &[usize]) -> Self {
        let mut s = self.clone();
        s.user_features = permute_rows(&self.user_features, perm);
        s
    }

    /// Copy with item rows reordered: new row `k` is old row `perm[k]`.
    pub fn permute_items(&self, perm: &[usize]) -> Self {
        let mut s = self.clone();
        s.item_features = permute_rows(&self.item_features, perm);
        s
    }
}

fn densify((idx, vals): (&[usize], &[f64]), dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for (&c, &x) in idx.iter().zip(vals) {
        v[c] = x;
    }
    v
}

fn permute_rows(m: &SparseMatrix, perm: &[usize]) -> SparseMatrix {
    let mut out = SparseMatrix::new(m.cols());
    for &src in perm {
        let (idx, vals) = m.row(src);
        out.push_row(idx.iter().copied().zip(vals.iter().copied()));
    }
    out
}

/// Age brackets `<18, 18-24, 25-34, 35-44, 45-49, 50-55, 56+`.
pub const AGE_BUCKETS: usize = 7;

pub fn age_bucket(age: u32) -> usize {
    match age {
        0..=17 => 0,
        18..=24 => 1,
        25..=34 => 2,
        35..=44 => 3,
        45..=49 => 4,
        50..=55 => 5,
        _ => 6,
    }
}

/// First digit of a zip code, if it is one.
pub fn zip_bucket(zip: &str) -> Option<usize> {
    zip.trim()
        .chars()
        .next()
        .and_then(|c| c.to_digit(10))
        .map(|d| d as usize)
}

/// Position of `value` in a fixed category list, as a one-hot vector.
pub fn one_hot(categories: &[&str], value: &str) -> Vec<f64> {
    categories
        .iter()
        .map(|&c| if c == value { 1.0 } else { 0.0 })
        .collect()
}

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "an", "and", "are", "as", "at", "be", "but", "by", "de", "for",
    "from", "had", "has", "have", "he", "her", "his", "i", "in", "into", "is", "it", "its", "la",
    "le", "les", "of", "on", "or", "she", "so", "that", "the", "their", "them", "they", "this",
    "to", "was", "were", "what", "when", "who", "will", "with", "you",
];

/// Lowercase alphanumeric tokens with stopwords removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !STOPWORDS.contains(t))
        .map(str::to_owned)
        .collect()
}

/// Bag-of-words vocabulary restricted to the most frequent terms by
/// document frequency (ties broken alphabetically).
#[derive(Clone, Debug, PartialEq)]
pub struct BagOfWords {
    terms: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl BagOfWords {
    pub fn fit<'a>(docs: impl IntoIterator<Item = &'a [String]>, max_terms: usize) -> Self {
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in docs {
            let unique: BTreeSet<&str> = doc.iter().map(String::as_str).collect();
            for t in unique {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = df.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_terms);
        let terms: Vec<String> = ranked.into_iter().map(|(t, _)| t.to_owned()).collect();
        let index = terms.iter().enumerate().map(|(k, t)| (t.clone(), k)).collect();
        Self { terms, index }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// L2-normalised term counts as sorted `(column, value)` pairs. A
    /// document with no known terms maps to the empty (zero) vector.
    pub fn transform(&self, doc: &[String]) -> Vec<(usize, f64)> {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in doc {
            if let Some(&k) = self.index.get(t) {
                *counts.entry(k).or_default() += 1.0;
            }
        }
        let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
        counts
            .into_iter()
            .map(|(k, c)| (k, c / norm))
            .collect()
    }
}
