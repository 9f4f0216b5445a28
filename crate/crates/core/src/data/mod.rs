//! Dataset ingestion, side-information vectorisation, evaluation splits and
//! training-pair sampling.

mod cache;
mod cold;
mod features;
mod interactions;
mod lastfm;
mod movielens;
mod sampling;
mod split;

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::{decode_cache, encode_cache, read_cache, write_cache, CACHE_MAGIC, CACHE_VERSION};
pub use cold::{base_split, make_cold_split, BaseSplit, ColdMode, ColdSplit};
pub use features::{age_bucket, one_hot, tokenize, zip_bucket, BagOfWords, SideInfo, AGE_BUCKETS};
pub use interactions::InteractionMatrix;
pub use lastfm::{load_lastfm, LastfmData};
pub use movielens::{
    load_movielens, ml100k_side_info, ml1m_side_info, parse_ratings, RatingsFile, MAX_TERMS,
    ML100K_GENRES,
};
pub use sampling::{PairSampler, TrainingPair};
pub use split::{leave_one_out_split, sample_negative_items, EvalCase, LeaveOneOut, EVAL_NEGATIVES};

/// Rating at or above which a MovieLens rating counts as a positive.
pub const RATING_THRESHOLD: f64 = 4.0;

/// Fraction of validation/test samples turned cold.
pub const COLD_FRACTION: f64 = 0.3;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no ratings found")]
    Empty,
    #[error("{0}")]
    Invalid(String),
    #[error("expected file {name} in {}; download the dataset and point --in at its directory", dir.display())]
    MissingFile { name: String, dir: PathBuf },
    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<DataError>,
    },
    #[error("cache: {0}")]
    Cache(String),
}

impl DataError {
    /// Attaches the file being read.
    pub fn in_file(self, path: &Path) -> Self {
        match self {
            e @ (DataError::Io { .. } | DataError::InFile { .. } | DataError::MissingFile { .. }) => e,
            e => DataError::InFile {
                path: path.to_path_buf(),
                source: Box::new(e),
            },
        }
    }

    /// True for failures of the filesystem rather than the content.
    pub fn is_io(&self) -> bool {
        match self {
            DataError::Io { .. } | DataError::MissingFile { .. } => true,
            DataError::InFile { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

/// Reads a file as ISO-8859-1, which every byte sequence decodes under.
pub(crate) fn read_latin1(path: &Path) -> Result<String, DataError> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(bytes.iter().map(|&b| b as char).collect())
}

pub(crate) fn require_file(dir: &Path, name: &str) -> Result<PathBuf, DataError> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(DataError::MissingFile {
            name: name.to_owned(),
            dir: dir.to_path_buf(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    Ml100k,
    Ml1m,
    Lastfm2k,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [DatasetKind::Ml100k, DatasetKind::Ml1m, DatasetKind::Lastfm2k];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Ml100k => "ml-100k",
            DatasetKind::Ml1m => "ml-1m",
            DatasetKind::Lastfm2k => "lastfm-2k",
        }
    }

    /// The file whose checksum identifies a download.
    pub fn primary_file(self) -> &'static str {
        match self {
            DatasetKind::Ml100k => "u.data",
            DatasetKind::Ml1m => "ratings.dat",
            DatasetKind::Lastfm2k => "user_artists.dat",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                DataError::Invalid(format!(
                    "unknown dataset {s:?} (expected ml-100k, ml-1m or lastfm-2k)"
                ))
            })
    }
}

/// Everything downstream commands need, computed once by [`prepare`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedDataset {
    pub kind: DatasetKind,
    pub seed: u64,
    pub raw_ratings: usize,
    /// Hex SHA-256 of the primary ratings file.
    pub source_sha256: String,
    pub full: InteractionMatrix,
    pub side: SideInfo,
    /// Latest positive per user held out from `full`.
    pub test: LeaveOneOut,
    /// Latest remaining positive held out again; `validation.train` is the
    /// matrix models are fit on.
    pub validation: LeaveOneOut,
    /// Random 80/10/10 split used by the cold-start protocol.
    pub cold_base: BaseSplit,
    pub cold_user: ColdSplit,
    pub cold_item: ColdSplit,
}

/// Table-style dataset statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub raw_ratings: usize,
    pub positives: usize,
    pub sparsity: f64,
    pub user_features: usize,
    pub item_features: usize,
    pub test_cases: usize,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "M (users)        {}", self.users)?;
        writeln!(f, "N (items)        {}", self.items)?;
        writeln!(f, "ratings          {}", self.raw_ratings)?;
        writeln!(f, "positives        {}", self.positives)?;
        writeln!(f, "sparsity         {:.4}%", self.sparsity * 100.0)?;
        writeln!(f, "P (user feats)   {}", self.user_features)?;
        writeln!(f, "Q (item feats)   {}", self.item_features)?;
        write!(f, "test cases       {}", self.test_cases)
    }
}

impl PreparedDataset {
    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            users: self.full.n_users(),
            items: self.full.n_items(),
            raw_ratings: self.raw_ratings,
            positives: self.full.n_positives(),
            sparsity: self.full.sparsity(),
            user_features: self.side.user_dim(),
            item_features: self.side.item_dim(),
            test_cases: self.test.cases.len(),
        }
    }

    /// The matrix models are trained on under the warm protocol.
    pub fn fit_matrix(&self) -> &InteractionMatrix {
        &self.validation.train
    }

    /// Everything except the warm test targets. Test-time posteriors
    /// condition on this, so validation positives count as known history.
    pub fn test_matrix(&self) -> &InteractionMatrix {
        &self.test.train
    }

    pub fn cold(&self, mode: ColdMode) -> &ColdSplit {
        match mode {
            ColdMode::User => &self.cold_user,
            ColdMode::Item => &self.cold_item,
        }
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String, DataError> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Looks for `SHA256SUMS` next to the data and compares the primary file's
/// digest against it. A mismatch is logged, not fatal.
fn check_sums(dir: &Path, kind: DatasetKind, digest: &str) -> Result<(), DataError> {
    let sums = dir.join("SHA256SUMS");
    if !sums.is_file() {
        info!("no SHA256SUMS in {}; skipping checksum validation", dir.display());
        return Ok(());
    }
    let text = read_latin1(&sums)?;
    let expected = text.lines().find_map(|l| {
        let mut f = l.split_whitespace();
        let (h, name) = (f.next()?, f.next()?);
        (name.trim_start_matches('*') == kind.primary_file()).then(|| h.to_ascii_lowercase())
    });
    match expected {
        Some(h) if h == digest => info!("{} checksum ok", kind.primary_file()),
        Some(h) => warn!("{} checksum {digest} differs from listed {h}", kind.primary_file()),
        None => info!("SHA256SUMS has no entry for {}", kind.primary_file()),
    }
    Ok(())
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Builds a [`PreparedDataset`] from interactions and side information
/// already in memory.
pub fn prepare_from_parts(
    kind: DatasetKind,
    full: InteractionMatrix,
    side: SideInfo,
    raw_ratings: usize,
    source_sha256: String,
    seed: u64,
) -> Result<PreparedDataset, DataError> {
    if side.n_users() != full.n_users() || side.n_items() != full.n_items() {
        return Err(DataError::Invalid(format!(
            "side information covers {}x{} but interactions are {}x{}",
            side.n_users(),
            side.n_items(),
            full.n_users(),
            full.n_items()
        )));
    }
    let test = leave_one_out_split(&full, &full, EVAL_NEGATIVES, sub_seed(seed, 1));
    let validation = leave_one_out_split(&test.train, &full, EVAL_NEGATIVES, sub_seed(seed, 2));
    let cold_base = base_split(&full, EVAL_NEGATIVES, sub_seed(seed, 3));
    let cold_user = make_cold_split(&cold_base, &side, COLD_FRACTION, ColdMode::User, sub_seed(seed, 4))?;
    let cold_item = make_cold_split(&cold_base, &side, COLD_FRACTION, ColdMode::Item, sub_seed(seed, 5))?;
    Ok(PreparedDataset {
        kind,
        seed,
        raw_ratings,
        source_sha256,
        full,
        side,
        test,
        validation,
        cold_base,
        cold_user,
        cold_item,
    })
}

/// Reads a raw dataset directory and builds all splits from `seed`.
pub fn prepare(kind: DatasetKind, dir: &Path, seed: u64) -> Result<PreparedDataset, DataError> {
    let primary = require_file(dir, kind.primary_file())?;
    let digest = file_sha256(&primary)?;
    check_sums(dir, kind, &digest)?;
    let (full, side, raw) = match kind {
        DatasetKind::Ml100k | DatasetKind::Ml1m => {
            let ratings = load_movielens(&primary, RATING_THRESHOLD)?;
            let (m, n) = (ratings.matrix.n_users(), ratings.matrix.n_items());
            let side = if kind == DatasetKind::Ml100k {
                ml100k_side_info(dir, m, n)?
            } else {
                ml1m_side_info(dir, m, n)?
            };
            (ratings.matrix, side, ratings.raw_ratings)
        }
        DatasetKind::Lastfm2k => {
            let d = load_lastfm(dir)?;
            (d.matrix, d.side, d.raw_ratings)
        }
    };
    info!(
        "{kind}: {} users, {} items, {} positives",
        full.n_users(),
        full.n_items(),
        full.n_positives()
    );
    prepare_from_parts(kind, full, side, raw, digest, seed)
}
