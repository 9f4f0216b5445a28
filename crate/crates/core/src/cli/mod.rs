//! Command-line surface. Logs go to stderr; results go to stdout or `--out`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use crate::data::{prepare, read_cache, write_cache, ColdMode, ColdSplit, DataError, DatasetKind, InteractionMatrix, PreparedDataset};
use crate::eval::{compare_ablations, evaluate, evaluate_cold, warm_run, EvalError, MetricReport, ModelScorer, Variant};
use crate::model::{Checkpoint, Dims, ModelError};
use crate::predict::{write_predictions, Predictor, DEFAULT_SAMPLES, PREDICTION_HEADER};
use crate::train::{fit, write_history, CaseValidator, TrainConfig, TrainError};

/// Environment variable naming the directory `prepare` writes to when
/// `--out` is omitted.
pub const CACHE_DIR_ENV: &str = "NVHCF_CACHE_DIR";
const DEFAULT_CACHE_DIR: &str = ".nvhcf-cache";

#[derive(Debug, Parser)]
#[command(name = "nvhcf", version, about = "Neural variational hybrid collaborative filtering")]
pub struct Cli {
    /// More log output (-v debug, -vv trace). `RUST_LOG` overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a raw dataset, build all splits and write a cache file.
    Prepare(PrepareArgs),
    /// Fit a model and write a checkpoint plus its history CSV.
    Train(TrainArgs),
    /// Leave-one-out HR/NDCG of a warm checkpoint on the test cases.
    Evaluate(EvaluateArgs),
    /// HR/NDCG of a cold-start checkpoint, over all and over cold cases.
    EvalCold(EvalColdArgs),
    /// Top-ranked unseen items for some users.
    Predict(PredictArgs),
    /// Train and test the four prior variants on shared splits.
    Ablate(AblateArgs),
    /// Train and test across values of one hyper-parameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Dataset layout.
    #[arg(long, value_parser = parse_dataset)]
    pub dataset: DatasetKind,
    /// Directory with the raw files.
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    /// Cache file [default: $NVHCF_CACHE_DIR/<dataset>-seed<N>.bin, or .nvhcf-cache/...].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Seed for every split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON training config; missing keys take defaults (logged).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set max_epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    /// Leave-one-out on all users and items.
    Warm,
    /// Fresh user ids on the 80/10/10 split.
    ColdUser,
    /// Fresh item ids on the 80/10/10 split.
    ColdItem,
}

impl SplitArg {
    fn name(self) -> &'static str {
        match self {
            SplitArg::Warm => "warm",
            SplitArg::ColdUser => "cold-user",
            SplitArg::ColdItem => "cold-item",
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset cache written by `prepare`.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Checkpoint path. On divergence the last good parameters are written here.
    #[arg(long, value_name = "CKPT")]
    pub out: PathBuf,
    /// Which priors to use.
    #[arg(long, default_value = "nvh", value_parser = parse_variant)]
    pub variant: Variant,
    /// Training protocol.
    #[arg(long, value_enum, default_value_t = SplitArg::Warm)]
    pub split: SplitArg,
    /// History CSV [default: <CKPT>.history.csv].
    #[arg(long, value_name = "FILE")]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset cache written by `prepare`.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "CKPT")]
    pub checkpoint: PathBuf,
    /// Cutoffs.
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    pub ks: Vec<usize>,
    /// Monte Carlo samples per score.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    /// CSV output [default: stdout table].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Args)]
pub struct EvalColdArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Cold mode; must match the checkpoint [default: from the checkpoint].
    #[arg(long, value_parser = parse_cold_mode)]
    pub mode: Option<ColdMode>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Dataset cache written by `prepare`.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "CKPT")]
    pub checkpoint: PathBuf,
    /// Zero-based user ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub users: Vec<usize>,
    /// Items kept per user.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Also rank items the user interacted with in training.
    #[arg(long)]
    pub include_seen: bool,
    /// Monte Carlo samples per score.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    /// CSV output [default: stdout].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Dataset cache written by `prepare`.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Cutoffs.
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    pub ks: Vec<usize>,
    /// CSV output [default: stdout].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    /// Negatives per positive.
    #[value(name = "neg_ratio", alias = "neg-ratio")]
    NegRatio,
    /// Latent dimension.
    Dim,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Dataset cache written by `prepare`.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Hyper-parameter to vary.
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Values to try.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<usize>,
    /// Training seeds per value.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Runs trained at once.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Cutoffs.
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    pub ks: Vec<usize>,
    /// CSV output [default: stdout].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

fn parse_dataset(s: &str) -> Result<DatasetKind, String> {
    s.parse().map_err(|e: DataError| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: EvalError| e.to_string())
}

fn parse_cold_mode(s: &str) -> Result<ColdMode, String> {
    s.parse().map_err(|e: DataError| e.to_string())
}

/// A bad flag combination or value found after parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Process exit status for an error: 2 usage or validation, 3 numerical
/// failure, 4 I/O.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return train_code(e);
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return eval_code(e);
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return model_code(e);
        }
        if let Some(e) = cause.downcast_ref::<DataError>() {
            return data_code(e);
        }
        if cause.is::<io::Error>() {
            return 4;
        }
    }
    2
}

fn train_code(e: &TrainError) -> i32 {
    match e {
        TrainError::Diverged { .. } => 3,
        TrainError::Model(m) => model_code(m),
        TrainError::Eval(e) => eval_code(e),
        TrainError::Config(_) | TrainError::Shape(_) => 2,
    }
}

fn eval_code(e: &EvalError) -> i32 {
    match e {
        EvalError::NonFinite { .. } => 3,
        EvalError::Model(m) => model_code(m),
        EvalError::NoCases | EvalError::Invalid(_) => 2,
    }
}

fn model_code(e: &ModelError) -> i32 {
    match e {
        ModelError::Io { .. } | ModelError::Checkpoint(_) => 4,
        _ => 2,
    }
}

fn data_code(e: &DataError) -> i32 {
    match e {
        DataError::Invalid(_) => 2,
        _ => 4,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => cmd_prepare(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::EvalCold(a) => cmd_eval_cold(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

/// Cache path used when `prepare --out` is omitted.
pub fn default_cache_path(kind: DatasetKind, seed: u64) -> PathBuf {
    let dir = std::env::var_os(CACHE_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR), PathBuf::from);
    dir.join(format!("{}-seed{seed}.bin", kind.name()))
}

fn cmd_prepare(a: PrepareArgs) -> Result<()> {
    let out = a.out.unwrap_or_else(|| default_cache_path(a.dataset, a.seed));
    let data = prepare(a.dataset, &a.input, a.seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_cache(&out, &data)?;
    println!("dataset          {} (seed {})", data.kind, data.seed);
    println!("{}", data.stats());
    println!("cache            {}", out.display());
    Ok(())
}

/// Reads the JSON config (or defaults) and applies `--set` overrides.
pub fn load_config(a: &ConfigArgs) -> Result<TrainConfig> {
    let mut value = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str::<serde_json::Value>(&text)
                .map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => serde_json::json!({}),
    };
    for o in &a.overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        let v = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.into()));
        let obj = value
            .as_object_mut()
            .ok_or_else(|| usage("config must be a JSON object"))?;
        obj.insert(key.to_owned(), v);
    }
    Ok(TrainConfig::from_json(&value.to_string())?)
}

fn split_parts<'d>(data: &'d PreparedDataset, split: &str) -> Result<(&'d InteractionMatrix, Option<&'d ColdSplit>)> {
    match split {
        "warm" => Ok((data.fit_matrix(), None)),
        "cold-user" => Ok((&data.cold_user.train, Some(&data.cold_user))),
        "cold-item" => Ok((&data.cold_item.train, Some(&data.cold_item))),
        other => Err(usage(format!("checkpoint has unknown split {other:?}"))),
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let config = a.variant.apply(&load_config(&a.config)?);
    let data = read_cache(&a.data)?;
    let (r, cold) = split_parts(&data, a.split.name())?;
    let cases = match cold {
        Some(s) => &s.validation,
        None => &data.validation.cases,
    };
    let mut validator = CaseValidator::new(r, &data.side, cases, config.val_users, config.eval_samples, config.seed);
    if let Some(s) = cold {
        validator = validator.with_cold(s);
    }
    let history_path = a.history.unwrap_or_else(|| suffixed(&a.out, ".history.csv"));
    info!("training {} on {} ({})", a.variant, data.kind, a.split.name());
    match fit(r, &data.side, &config, Some(&validator), a.split.name()) {
        Ok(out) => {
            out.best.save(&a.out)?;
            write_history(&mut create(&history_path)?, config.seed, &out.history)?;
            let best = &out.history[out.best.epoch - 1];
            println!(
                "best epoch {} of {} (val HR@5 {:.4}), stopped by {:?}",
                out.best.epoch,
                out.history.len(),
                best.val_hr5.unwrap_or(f64::NAN),
                out.stop
            );
            println!("checkpoint {}\nhistory    {}", a.out.display(), history_path.display());
            Ok(())
        }
        Err(TrainError::Diverged {
            epoch,
            step,
            value,
            last_good,
            history,
        }) => {
            last_good.save(&a.out)?;
            write_history(&mut create(&history_path)?, config.seed, &history)?;
            warn!("last good parameters written to {}", a.out.display());
            Err(TrainError::Diverged {
                epoch,
                step,
                value,
                last_good,
                history,
            }
            .into())
        }
        Err(e) => Err(e.into()),
    }
}

fn suffixed(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_pair(a: &EvalArgs) -> Result<(PreparedDataset, Checkpoint)> {
    if a.ks.is_empty() || a.ks.contains(&0) {
        return Err(usage("--ks needs positive cutoffs"));
    }
    if a.samples == 0 {
        return Err(usage("--samples must be positive"));
    }
    let data = read_cache(&a.data)?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    Ok((data, ckpt))
}

fn check_dims(ckpt: &Checkpoint, data: &PreparedDataset, r: &InteractionMatrix) -> Result<()> {
    if ckpt.model.dims != Dims::of(r, &data.side) {
        return Err(usage(format!(
            "checkpoint dimensions {:?} do not match the dataset ({:?})",
            ckpt.model.dims,
            Dims::of(r, &data.side)
        )));
    }
    Ok(())
}

fn write_reports(out: &Option<PathBuf>, reports: &[&MetricReport]) -> Result<()> {
    let mut w = output(out)?;
    if out.is_some() {
        writeln!(w, "{}", MetricReport::CSV_HEADER)?;
        for r in reports {
            write!(w, "{}", r.csv_rows())?;
        }
    } else {
        for r in reports {
            writeln!(w, "{r}")?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let (data, ckpt) = load_pair(&a.eval)?;
    if ckpt.split != "warm" {
        return Err(usage(format!("checkpoint was trained on {}; use eval-cold", ckpt.split)));
    }
    check_dims(&ckpt, &data, data.test_matrix())?;
    let p = Predictor::new(&ckpt.model, data.test_matrix(), &data.side, a.eval.samples, ckpt.seed)?;
    let mut rep = evaluate(&ModelScorer::warm(&p), &data.test.cases, &a.eval.ks, "warm")?;
    rep.seed = ckpt.seed;
    rep.fingerprint = ckpt_fingerprint(&ckpt);
    write_reports(&a.eval.out, &[&rep])
}

fn ckpt_fingerprint(ckpt: &Checkpoint) -> String {
    let m = &ckpt.model;
    crate::eval::fingerprint(&format!("{:?}{:?}{}{}", m.config, m.dims, ckpt.seed, ckpt.split))
}

fn cmd_eval_cold(a: EvalColdArgs) -> Result<()> {
    let (data, ckpt) = load_pair(&a.eval)?;
    let from_ckpt = match ckpt.split.as_str() {
        "cold-user" => ColdMode::User,
        "cold-item" => ColdMode::Item,
        s => return Err(usage(format!("checkpoint was trained on {s}; use evaluate"))),
    };
    if let Some(m) = a.mode.filter(|&m| m != from_ckpt) {
        return Err(usage(format!("--mode {m} does not match the checkpoint's {}", ckpt.split)));
    }
    let split = data.cold(from_ckpt);
    check_dims(&ckpt, &data, &split.train)?;
    let p = Predictor::new(&ckpt.model, &split.train, &data.side, a.eval.samples, ckpt.seed)?;
    let (mut all, mut only) = evaluate_cold(&p, split, &a.eval.ks)?;
    for r in [&mut all, &mut only] {
        r.seed = ckpt.seed;
        r.fingerprint = ckpt_fingerprint(&ckpt);
    }
    write_reports(&a.eval.out, &[&all, &only])
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    if a.top == 0 || a.samples == 0 {
        return Err(usage("--top and --samples must be positive"));
    }
    let data = read_cache(&a.data)?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let (r, _) = split_parts(&data, &ckpt.split)?;
    check_dims(&ckpt, &data, r)?;
    if let Some(&u) = a.users.iter().find(|&&u| u >= r.n_users()) {
        return Err(usage(format!("user {u} is outside 0..{}", r.n_users())));
    }
    let p = Predictor::new(&ckpt.model, r, &data.side, a.samples, ckpt.seed)?;
    let mut w = output(&a.out)?;
    writeln!(w, "# seed={}", ckpt.seed)?;
    writeln!(w, "{PREDICTION_HEADER}")?;
    for &u in &a.users {
        let items: Vec<usize> = (0..r.n_items()).filter(|&i| a.include_seen || !r.contains(u, i)).collect();
        let scores = p.score_warm(u, &items)?;
        let order = crate::predict::rank(&scores, &items);
        let keep: Vec<usize> = order.into_iter().take(a.top).collect();
        let (ti, ts): (Vec<usize>, Vec<f64>) = keep.iter().map(|&k| (items[k], scores[k])).unzip();
        write_predictions(&mut w, u, &ti, &ts)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let config = load_config(&a.config)?;
    let data = read_cache(&a.data)?;
    let results = compare_ablations(&data, &config, &a.ks)?;
    let mut w = output(&a.out)?;
    writeln!(w, "# seed={}", config.seed)?;
    writeln!(w, "variant,best_epoch,{}", MetricReport::CSV_HEADER)?;
    for r in &results {
        for line in r.report.csv_rows().lines() {
            writeln!(w, "{},{},{line}", r.variant, r.fit.best.epoch)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One sweep cell: metrics or the error that stopped it.
#[derive(Debug)]
pub struct SweepRow {
    pub value: usize,
    pub seed: u64,
    pub result: Result<MetricReport, String>,
}

/// Trains every `(value, seed)` with at most `jobs` runs at a time. A
/// failing run is reported in its row; the others continue.
pub fn run_sweep(
    data: &PreparedDataset,
    base: &TrainConfig,
    param: SweepParam,
    values: &[usize],
    seeds: &[u64],
    ks: &[usize],
    jobs: usize,
) -> Vec<SweepRow> {
    let cells: Vec<(usize, u64)> = values.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let results: Mutex<Vec<Option<SweepRow>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, cells.len().max(1)) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(value, seed)) = cells.get(k) else { break };
                let mut config = TrainConfig { seed, ..base.clone() };
                match param {
                    SweepParam::NegRatio => config.neg_ratio = value,
                    SweepParam::Dim => config.latent_dim = value,
                }
                info!("sweep {param:?}={value} seed {seed}");
                let result = warm_run(data, &config, ks).map(|(_, r)| r).map_err(|e| {
                    warn!("sweep {param:?}={value} seed {seed} failed: {e}");
                    e.to_string()
                });
                results.lock().expect("no panics while held")[k] = Some(SweepRow { value, seed, result });
            });
        }
    });
    results
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    if a.values.is_empty() || a.seeds.is_empty() {
        return Err(usage("--values and --seeds must be non-empty"));
    }
    let config = load_config(&a.config)?;
    let data = read_cache(&a.data)?;
    let rows = run_sweep(&data, &config, a.param, &a.values, &a.seeds, &a.ks, a.jobs);
    let name = match a.param {
        SweepParam::NegRatio => "neg_ratio",
        SweepParam::Dim => "dim",
    };
    let mut w = output(&a.out)?;
    writeln!(w, "# seeds={}", a.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" "))?;
    writeln!(w, "param,value,seed,k,hr,ndcg,status")?;
    let mut failed = 0;
    for row in &rows {
        match &row.result {
            Ok(rep) => {
                for (p, k) in rep.ks.iter().enumerate() {
                    writeln!(w, "{name},{},{},{k},{:.6},{:.6},ok", row.value, row.seed, rep.hr[p], rep.ndcg[p])?;
                }
            }
            Err(e) => {
                failed += 1;
                writeln!(w, "{name},{},{},,,,\"failed: {}\"", row.value, row.seed, e.replace('"', "'"))?;
            }
        }
    }
    w.flush()?;
    if failed == rows.len() {
        bail!("every sweep run failed");
    }
    Ok(())
}
