use std::io::Write;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{clip_grad_norm, Adam, TrainConfig, TrainError};
use crate::autodiff::Tape;
use crate::data::{ColdSplit, EvalCase, InteractionMatrix, PairSampler, SideInfo};
use crate::eval::{evaluate, ModelScorer};
use crate::model::{minibatch_loss, Batch, Checkpoint, Dims, Model, Noise};
use crate::predict::Predictor;

/// Scores a model on held-out data after each epoch; returns `(HR@5, NDCG@5)`.
pub trait Validator {
    fn validate(&self, model: &Model) -> Result<(f64, f64), TrainError>;
}

/// Leave-one-out validation on a fixed subsample of cases.
pub struct CaseValidator<'a> {
    r: &'a InteractionMatrix,
    side: &'a SideInfo,
    cases: Vec<EvalCase>,
    cold: Option<&'a ColdSplit>,
    samples: usize,
    seed: u64,
}

impl<'a> CaseValidator<'a> {
    /// Keeps at most `limit` cases, chosen by a seeded shuffle.
    pub fn new(
        r: &'a InteractionMatrix,
        side: &'a SideInfo,
        cases: &[EvalCase],
        limit: usize,
        samples: usize,
        seed: u64,
    ) -> Self {
        let mut cases = cases.to_vec();
        if cases.len() > limit {
            cases.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            cases.truncate(limit);
        }
        Self {
            r,
            side,
            cases,
            cold: None,
            samples,
            seed,
        }
    }

    /// Scores fresh ids of `split` through their priors.
    pub fn with_cold(mut self, split: &'a ColdSplit) -> Self {
        self.cold = Some(split);
        self
    }

    pub fn cases(&self) -> &[EvalCase] {
        &self.cases
    }
}

impl Validator for CaseValidator<'_> {
    fn validate(&self, model: &Model) -> Result<(f64, f64), TrainError> {
        let p = Predictor::new(model, self.r, self.side, self.samples, self.seed)?;
        let scorer = match self.cold {
            Some(s) => ModelScorer::cold(&p, s),
            None => ModelScorer::warm(&p),
        };
        let rep = evaluate(&scorer, &self.cases, &[5], "validation")?;
        Ok((rep.hr[0], rep.ndcg[0]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub loss: f64,
    pub val_hr5: Option<f64>,
    pub val_ndcg5: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    Patience,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Parameters from the epoch with the best validation HR@5 (the last
    /// epoch when no validator is given).
    pub best: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
}

pub const HISTORY_HEADER: &str = "epoch,loss,val_hr5,val_ndcg5";

/// Writes the loss/metric history as CSV preceded by a `# seed=` line.
pub fn write_history<W: Write>(out: &mut W, seed: u64, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(out, "# seed={seed}")?;
    writeln!(out, "{HISTORY_HEADER}")?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for h in history {
        writeln!(out, "{},{:.6},{},{}", h.epoch, h.loss, opt(h.val_hr5), opt(h.val_ndcg5))?;
    }
    Ok(())
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// A freshly initialised model for `r` and `side`.
pub fn init_model(r: &InteractionMatrix, side: &SideInfo, config: &TrainConfig) -> Result<Model, TrainError> {
    Ok(Model::new(Dims::of(r, side), config.model_config(), &mut stream(config.seed, 1))?)
}

/// Trains on the positives of `r` with fresh negatives every step.
///
/// `split` is recorded in the checkpoint. Each epoch shuffles the positives
/// and walks them in chunks of `config.batch_positives()`.
pub fn fit(
    r: &InteractionMatrix,
    side: &SideInfo,
    config: &TrainConfig,
    validator: Option<&dyn Validator>,
    split: &str,
) -> Result<FitOutcome, TrainError> {
    config.validate()?;
    let mut model = init_model(r, side, config)?;
    let mut rng = stream(config.seed, 2);
    let sampler = PairSampler::new(r);
    let mut positives = sampler.positives().to_vec();
    if positives.is_empty() {
        return Err(TrainError::Config("training matrix has no positives".into()));
    }
    let ep = config.batch_positives();
    let mut steps = positives.len().div_ceil(ep);
    if let Some(cap) = config.max_steps_per_epoch {
        steps = steps.min(cap.max(1));
    }
    info!(
        "training on {} positives: {steps} steps/epoch of {ep} positives + {} negatives",
        positives.len(),
        ep * config.neg_ratio
    );

    let mut opt = Adam::new(&model.store, config.learning_rate);
    let checkpoint = |model: &Model, epoch: usize, step: u64| Checkpoint {
        model: model.clone(),
        seed: config.seed,
        step,
        epoch,
        split: split.to_owned(),
    };
    let mut history = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut since_best = 0;
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        let t0 = Instant::now();
        positives.shuffle(&mut rng);
        let mut total = 0.0;
        for (s, chunk) in positives.chunks(ep).take(steps).enumerate() {
            let pairs = sampler.with_negatives(&mut rng, chunk, config.neg_ratio);
            let batch = Batch::new(pairs)?;
            let noise = Noise::sample(&mut rng, batch.len(), config.train_samples, config.latent_dim);
            let mut grads = {
                let mut tape = Tape::new(&model.store);
                let out = minibatch_loss(&model, &mut tape, r, side, &batch, &noise)?;
                let value = out.parts.loss;
                if !value.is_finite() {
                    return Err(diverged(epoch, s, value, checkpoint(&model, epoch, opt.steps()), history));
                }
                total += value;
                if s % 200 == 0 {
                    debug!("epoch {epoch} step {s}: {:?}", out.parts);
                }
                tape.backward(out.loss)?.into_params()
            };
            let norm = clip_grad_norm(&mut grads, config.grad_clip);
            if !norm.is_finite() {
                return Err(diverged(epoch, s, norm, checkpoint(&model, epoch, opt.steps()), history));
            }
            opt.step(&mut model.store, &grads)?;
        }
        let loss = total / steps as f64;
        let (val_hr5, val_ndcg5) = match validator {
            Some(v) => {
                let (h, n) = v.validate(&model)?;
                (Some(h), Some(n))
            }
            None => (None, None),
        };
        let record = EpochRecord {
            epoch,
            loss,
            val_hr5,
            val_ndcg5,
            seconds: t0.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: loss {loss:.4} val HR@5 {} NDCG@5 {} ({:.1}s)",
            val_hr5.map_or("-".into(), |x| format!("{x:.4}")),
            val_ndcg5.map_or("-".into(), |x| format!("{x:.4}")),
            record.seconds
        );
        history.push(record);

        let score = val_hr5.unwrap_or(f64::INFINITY);
        if best.as_ref().map_or(true, |(b, _)| score > *b || val_hr5.is_none()) {
            best = Some((score, checkpoint(&model, epoch, opt.steps())));
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience > 0 && since_best >= config.patience {
                info!("no validation improvement for {since_best} epochs; stopping");
                stop = StopReason::Patience;
                break;
            }
        }
    }
    let (_, best) = best.expect("at least one epoch");
    info!("best epoch {}", best.epoch);
    Ok(FitOutcome { best, history, stop })
}

fn diverged(epoch: usize, step: usize, value: f64, last_good: Checkpoint, history: Vec<EpochRecord>) -> TrainError {
    TrainError::Diverged {
        epoch,
        step,
        value,
        last_good: Box::new(last_good),
        history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::SparseMatrix;
    use crate::model::Widths;
    use std::cell::Cell;

    /// Two user groups, each liking its own half of the items.
    fn block() -> (InteractionMatrix, SideInfo) {
        let pairs = (0..20).flat_map(|u| {
            let lo = if u < 10 { 0 } else { 15 };
            (lo..lo + 15).map(move |i| (u, i))
        });
        let r = InteractionMatrix::from_pairs(20, 30, pairs).unwrap();
        let mut uf = SparseMatrix::new(1);
        let mut itf = SparseMatrix::new(1);
        (0..20).for_each(|_| uf.push_row([(0, 1.0)]));
        (0..30).for_each(|_| itf.push_row([(0, 1.0)]));
        let side = SideInfo::new(uf, itf, vec!["bias".into()], vec!["bias".into()]).unwrap();
        (r, side)
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            batch_size: 24,
            neg_ratio: 2,
            learning_rate: 5e-3,
            max_epochs: 200,
            patience: 0,
            latent_dim: 8,
            eval_samples: 32,
            widths: Widths {
                prior_hidden: 8,
                inference_hidden: [32, 16],
                decoder_hidden: [16, 32],
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn overfits_block_structure() {
        let (r, side) = block();
        let out = fit(&r, &side, &small_config(), None, "test").unwrap();
        let first = out.history[0].loss;
        let last = out.history.last().unwrap().loss;
        assert!(last < 0.5 * first, "loss {first} -> {last}");

        let p = Predictor::new(&out.best.model, &r, &side, 64, 1).unwrap();
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for u in 0..20 {
            let scores = p.score_warm(u, &(0..30).collect::<Vec<_>>()).unwrap();
            for (i, s) in scores.into_iter().enumerate() {
                if r.contains(u, i) { pos.push(s) } else { neg.push(s) }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&pos) > 0.9, "positives {}", mean(&pos));
        assert!(mean(&neg) < 0.5, "negatives {}", mean(&neg));
    }

    #[test]
    fn without_negatives_everything_looks_positive() {
        let (r, side) = block();
        let config = TrainConfig {
            neg_ratio: 0,
            max_epochs: 60,
            ..small_config()
        };
        let out = fit(&r, &side, &config, None, "test").unwrap();
        let p = Predictor::new(&out.best.model, &r, &side, 32, 1).unwrap();
        let s = p.score_warm(0, &[20, 25, 29]).unwrap();
        assert!(s.iter().all(|&x| x > 0.9), "{s:?}");
    }

    #[test]
    fn fitting_is_deterministic() {
        let (r, side) = block();
        let config = TrainConfig {
            max_epochs: 3,
            ..small_config()
        };
        let a = fit(&r, &side, &config, None, "test").unwrap();
        let b = fit(&r, &side, &config, None, "test").unwrap();
        assert_eq!(a.best, b.best);
        assert_eq!(a.history.iter().map(|h| h.loss).collect::<Vec<_>>(), b.history.iter().map(|h| h.loss).collect::<Vec<_>>());
        let c = fit(&r, &side, &TrainConfig { seed: 1, ..config }, None, "test").unwrap();
        assert_ne!(a.best.model, c.best.model);
    }

    struct Scripted(Vec<f64>, Cell<usize>);

    impl Validator for Scripted {
        fn validate(&self, _: &Model) -> Result<(f64, f64), TrainError> {
            let k = self.1.get();
            self.1.set(k + 1);
            Ok((self.0[k], 0.0))
        }
    }

    #[test]
    fn early_stopping_keeps_best_epoch() {
        let (r, side) = block();
        let config = TrainConfig {
            max_epochs: 20,
            patience: 3,
            ..small_config()
        };
        let v = Scripted(vec![0.1, 0.5, 0.3, 0.5, 0.2, 0.9, 0.9], Cell::new(0));
        let out = fit(&r, &side, &config, Some(&v), "test").unwrap();
        assert_eq!(out.stop, StopReason::Patience);
        assert_eq!(out.best.epoch, 2);
        assert_eq!(out.history.len(), 5);
        let mut buf = Vec::new();
        write_history(&mut buf, 0, &out.history).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# seed=0\nepoch,loss,val_hr5,val_ndcg5\n1,"));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn rejects_empty_training_matrix() {
        let (_, side) = block();
        let r = InteractionMatrix::from_pairs(20, 30, []).unwrap();
        assert!(matches!(fit(&r, &side, &small_config(), None, "t"), Err(TrainError::Config(_))));
    }
}
