//! End-to-end runs over a prepared dataset: warm leave-one-out, cold-start,
//! and the prior ablations.

use std::fmt;
use std::str::FromStr;

use log::info;

use super::{evaluate, evaluate_cold, fingerprint, EvalError, MetricReport, ModelScorer};
use crate::data::{ColdMode, PreparedDataset};
use crate::predict::Predictor;
use crate::train::{fit, CaseValidator, FitOutcome, TrainConfig, TrainError};

/// Which side-information priors are kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Both priors.
    Nvh,
    /// Neither prior; both KL terms use the standard normal.
    NvhN,
    /// User prior only.
    NvhU,
    /// Item prior only.
    NvhI,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::NvhN, Variant::NvhU, Variant::NvhI, Variant::Nvh];

    pub fn flags(self) -> (bool, bool) {
        match self {
            Variant::Nvh => (true, true),
            Variant::NvhN => (false, false),
            Variant::NvhU => (true, false),
            Variant::NvhI => (false, true),
        }
    }

    pub fn apply(self, config: &TrainConfig) -> TrainConfig {
        let (u, i) = self.flags();
        TrainConfig {
            use_user_prior: u,
            use_item_prior: i,
            ..config.clone()
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Nvh => "nvh",
            Variant::NvhN => "nvh-n",
            Variant::NvhU => "nvh-u",
            Variant::NvhI => "nvh-i",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| EvalError::Invalid(format!("unknown variant {s:?} (nvh, nvh-n, nvh-u, nvh-i)")))
    }
}

#[derive(Debug)]
pub struct AblationResult {
    pub variant: Variant,
    pub fit: FitOutcome,
    pub report: MetricReport,
}

fn stamp(mut rep: MetricReport, config: &TrainConfig) -> MetricReport {
    rep.seed = config.seed;
    rep.fingerprint = fingerprint(&config.to_json());
    rep
}

/// Trains on the warm fit matrix with leave-one-out validation, then ranks
/// the test cases with the best checkpoint.
pub fn warm_run(data: &PreparedDataset, config: &TrainConfig, ks: &[usize]) -> Result<(FitOutcome, MetricReport), TrainError> {
    let r = data.fit_matrix();
    let validator = CaseValidator::new(
        r,
        &data.side,
        &data.validation.cases,
        config.val_users,
        config.eval_samples,
        config.seed,
    );
    let out = fit(r, &data.side, config, Some(&validator), "warm")?;
    let report = test_warm(data, &out, config, ks)?;
    Ok((out, report))
}

/// Ranks the warm test cases with a fitted model.
///
/// The model is fit without the validation positives, but at test time
/// they are ordinary history: posteriors condition on everything except
/// the test targets.
pub fn test_warm(data: &PreparedDataset, out: &FitOutcome, config: &TrainConfig, ks: &[usize]) -> Result<MetricReport, TrainError> {
    let p = Predictor::new(&out.best.model, data.test_matrix(), &data.side, config.eval_samples, config.seed)?;
    let rep = evaluate(&ModelScorer::warm(&p), &data.test.cases, ks, "warm")?;
    Ok(stamp(rep, config))
}

/// Trains on a cold split's training part and evaluates its test cases.
/// Returns reports over all test cases and over the cold ones only.
pub fn cold_run(
    data: &PreparedDataset,
    mode: ColdMode,
    config: &TrainConfig,
    ks: &[usize],
) -> Result<(FitOutcome, MetricReport, MetricReport), TrainError> {
    let split = data.cold(mode);
    let validator = CaseValidator::new(
        &split.train,
        &data.side,
        &split.validation,
        config.val_users,
        config.eval_samples,
        config.seed,
    )
    .with_cold(split);
    let out = fit(&split.train, &data.side, config, Some(&validator), &format!("cold-{mode}"))?;
    let p = Predictor::new(&out.best.model, &split.train, &data.side, config.eval_samples, config.seed)?;
    let (all, only) = evaluate_cold(&p, split, ks)?;
    Ok((out, stamp(all, config), stamp(only, config)))
}

/// Trains and tests every variant on the same splits and seed.
pub fn compare_ablations(
    data: &PreparedDataset,
    config: &TrainConfig,
    ks: &[usize],
) -> Result<Vec<AblationResult>, TrainError> {
    Variant::ALL
        .into_iter()
        .map(|variant| {
            info!("ablation variant {variant}");
            let (fit, mut report) = warm_run(data, &variant.apply(config), ks)?;
            report.label = variant.name().into();
            Ok(AblationResult { variant, fit, report })
        })
        .collect()
}
