//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! Criteria 4-8 need MovieLens-100K: set `NVHCF_ML100K_DIR`, or place the
//! files in `data/ml-100k` at the workspace root. Criteria 5-8 train full
//! models for hours, so a plain `cargo test` skips them; set
//! `NVHCF_ACCEPTANCE_FULL=1` to run everything. `NVHCF_ACCEPTANCE_ONLY=1,3`
//! runs an explicit subset.

use std::cell::RefCell;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use nvhcf::autodiff::{finite_diff_check, FiniteDiffOptions, SparseMatrix};
use nvhcf::data::{prepare, ColdMode, DatasetKind, InteractionMatrix, PairSampler, PreparedDataset, SideInfo};
use nvhcf::eval::{cold_run, evaluate, random_ndcg, warm_run, OracleScorer, RandomScorer, Variant};
use nvhcf::model::{kl_diag, minibatch_loss, Batch, DiagGaussian, Dims, Model, ModelConfig, ModelError, Noise, Widths};
use nvhcf::predict::Predictor;
use nvhcf::train::{fit, TrainConfig, TrainError, Validator};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Check = fn(&mut Context) -> Outcome;

/// Lazily prepared data and training runs shared between criteria.
#[derive(Default)]
struct Context {
    data: Option<Result<PreparedDataset, String>>,
    warm: Vec<((Variant, usize, u64, usize), Result<nvhcf::eval::MetricReport, String>)>,
}

impl Context {
    fn data(&mut self) -> Result<&PreparedDataset, String> {
        if self.data.is_none() {
            let dir = data_dir();
            let loaded = prepare(DatasetKind::Ml100k, &dir, 0).map_err(|e| {
                format!("ML-100K not available ({e}); set NVHCF_ML100K_DIR or run scripts/fetch_ml100k.py")
            });
            self.data = Some(loaded);
        }
        self.data.as_ref().unwrap().as_ref().map_err(Clone::clone)
    }

    /// Warm leave-one-out run, memoised by (variant, neg_ratio, seed, epochs).
    fn warm(&mut self, variant: Variant, neg_ratio: usize, seed: u64, epochs: usize) -> Result<nvhcf::eval::MetricReport, String> {
        let key = (variant, neg_ratio, seed, epochs);
        if let Some((_, r)) = self.warm.iter().find(|(k, _)| *k == key) {
            return r.clone();
        }
        let result = self.data().and_then(|d| {
            let config = variant.apply(&TrainConfig {
                neg_ratio,
                max_epochs: epochs,
                ..heavy_config(seed)
            });
            let t = Instant::now();
            let r = warm_run(d, &config, &[5, 10]).map(|(fit, rep)| {
                eprintln!(
                    "  trained {variant} neg_ratio={neg_ratio} seed={seed}: best epoch {}/{} in {:.0}s, HR@5 {:.4} HR@10 {:.4} NDCG@5 {:.4}",
                    fit.best.epoch,
                    fit.history.len(),
                    t.elapsed().as_secs_f64(),
                    rep.hr_at(5).unwrap(),
                    rep.hr_at(10).unwrap(),
                    rep.ndcg_at(5).unwrap()
                );
                rep
            });
            r.map_err(|e| e.to_string())
        });
        self.warm.push((key, result.clone()));
        result
    }
}

fn data_dir() -> PathBuf {
    std::env::var_os("NVHCF_ML100K_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k"))
}

/// Settings for the ML-100K training runs: the model defaults, with an
/// epoch budget sized for a single CPU core (about 11 minutes per epoch).
fn heavy_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        max_epochs: reproduction_epochs(),
        ..TrainConfig::default()
    }
}

/// Epoch cap for the reproduction run, keeping it near two hours.
fn reproduction_epochs() -> usize {
    env_usize("NVHCF_ACCEPTANCE_EPOCHS", 8)
}

/// Epoch cap for the directional comparisons, which need 14 runs.
fn comparison_epochs() -> usize {
    env_usize("NVHCF_ACCEPTANCE_SHORT_EPOCHS", 2)
}

fn env_usize(key: &str, default: usize) -> usize {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn small_side(m: usize, n: usize, p: usize, q: usize, rng: &mut ChaCha8Rng) -> SideInfo {
    let mut uf = SparseMatrix::new(p);
    for _ in 0..m {
        let row: Vec<(usize, f64)> = (0..p).filter(|_| rng.gen_bool(0.5)).collect::<Vec<_>>().into_iter().map(|k| (k, rng.gen_range(0.2..1.0))).collect();
        uf.push_row(row);
    }
    let mut itf = SparseMatrix::new(q);
    for _ in 0..n {
        let row: Vec<(usize, f64)> = (0..q).filter(|_| rng.gen_bool(0.5)).collect::<Vec<_>>().into_iter().map(|k| (k, rng.gen_range(0.2..1.0))).collect();
        itf.push_row(row);
    }
    SideInfo::new(
        uf,
        itf,
        (0..p).map(|k| format!("f{k}")).collect(),
        (0..q).map(|k| format!("g{k}")).collect(),
    )
    .unwrap()
}

fn gradient_check(_: &mut Context) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<(usize, usize)> = (0..20)
        .flat_map(|u| (0..30).map(move |i| (u, i)))
        .filter(|_| rng.gen_bool(0.2))
        .collect();
    let r = InteractionMatrix::from_pairs(20, 30, pairs).unwrap();
    let side = small_side(20, 30, 5, 6, &mut rng);
    let config = ModelConfig {
        latent_dim: 8,
        widths: Widths {
            prior_hidden: 12,
            inference_hidden: [16, 12],
            decoder_hidden: [12, 16],
        },
        ..ModelConfig::default()
    };
    let mut model = Model::new(Dims::of(&r, &side), config, &mut rng).unwrap();
    // zero biases would leave dead ReLU units exactly at the kink; the
    // smaller steps cover pre-activations that land near it
    for id in model.store.ids().collect::<Vec<_>>() {
        if model.store.name(id).ends_with(".bias") {
            for b in model.store.get_mut(id).as_mut_slice() {
                *b += rng.gen_range(-0.1..0.1);
            }
        }
    }
    let sampler = PairSampler::new(&r);
    let positives: Vec<(u32, u32)> = sampler.positives().iter().take(8).copied().collect();
    let batch = Batch::new(sampler.with_negatives(&mut rng, &positives, 3)).unwrap();
    let noise = Noise::sample(&mut rng, batch.len(), 2, 8);
    let report = finite_diff_check(
        &model.store,
        |tape| {
            minibatch_loss(&model, tape, &r, &side, &batch, &noise)
                .map(|b| b.loss)
                .map_err(|e| match e {
                    ModelError::Autodiff(a) => a,
                    other => panic!("{other}"),
                })
        },
        &FiniteDiffOptions {
            steps: vec![1e-4, 1e-5, 1e-6],
            ..FiniteDiffOptions::default()
        },
    )
    .unwrap();
    outcome(
        report.max_rel_error < 1e-4,
        format!(
            "max relative error {:.2e} over {} coordinates (< 1e-4); worst {} analytic {:.6e} numeric {:.6e}",
            report.max_rel_error,
            report.coords_checked,
            report.worst.map_or(String::new(), |(id, c)| format!("{}[{c}]", model.store.name(id))),
            report.worst_values.0,
            report.worst_values.1
        ),
    )
}

fn kl_oracle(_: &mut Context) -> Outcome {
    const D: usize = 16;
    const SAMPLES: usize = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_z: f64 = 0.0;
    let mut min_kl = f64::INFINITY;
    let mut failures = 0;
    for _ in 0..100 {
        let mut draw = |lo: f64, hi: f64| (0..D).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>();
        let q = DiagGaussian::new(draw(-1.5, 1.5), draw(-2.0, 1.0)).unwrap();
        let p = DiagGaussian::new(draw(-1.5, 1.5), draw(-1.0, 2.0)).unwrap();
        let exact = kl_diag(&q, &p).unwrap();
        min_kl = min_kl.min(exact);
        let sq = q.std_dev();
        let inv_vp: Vec<f64> = p.variance().iter().map(|v| 1.0 / v).collect();
        let c: f64 = (0..D).map(|d| 0.5 * (p.log_var[d] - q.log_var[d])).sum();
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..SAMPLES {
            let mut x = c;
            for d in 0..D {
                let e: f64 = rng.sample(StandardNormal);
                let diff = q.mean[d] + sq[d] * e - p.mean[d];
                x += 0.5 * (diff * diff * inv_vp[d] - e * e);
            }
            sum += x;
            sum_sq += x * x;
        }
        let n = SAMPLES as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean) / (n - 1.0)).sqrt();
        let z = (mean - exact).abs() / se;
        worst_z = worst_z.max(z);
        if z > 3.0 {
            failures += 1;
        }
    }
    outcome(
        failures == 0 && min_kl >= 0.0,
        format!("100 pairs: largest |MC - closed form| = {worst_z:.2} SE (<= 3), min KL {min_kl:.3} (>= 0)"),
    )
}

/// Mean predicted probability on training positives and on off-block cells.
struct BlockProbe<'a> {
    r: &'a InteractionMatrix,
    side: &'a SideInfo,
    trace: RefCell<Vec<(f64, f64)>>,
}

impl Validator for BlockProbe<'_> {
    fn validate(&self, model: &Model) -> Result<(f64, f64), TrainError> {
        let p = Predictor::new(model, self.r, self.side, 32, 0)?;
        let (mut pos, mut neg) = ((0.0, 0), (0.0, 0));
        let items: Vec<usize> = (0..self.r.n_items()).collect();
        for u in 0..self.r.n_users() {
            for (i, s) in p.score_warm(u, &items)?.into_iter().enumerate() {
                let acc = if self.r.contains(u, i) { &mut pos } else { &mut neg };
                acc.0 += s;
                acc.1 += 1;
            }
        }
        let m = (pos.0 / pos.1 as f64, neg.0 / neg.1 as f64);
        self.trace.borrow_mut().push(m);
        Ok((m.0 - m.1, 0.0))
    }
}

fn overfit_oracle(_: &mut Context) -> Outcome {
    let block = |u: usize, i: usize| (u < 10) == (i < 15);
    let pairs = (0..20).flat_map(|u| (0..30).filter(move |&i| block(u, i)).map(move |i| (u, i)));
    let r = InteractionMatrix::from_pairs(20, 30, pairs).unwrap();
    let mut uf = SparseMatrix::new(2);
    (0..20).for_each(|u| uf.push_row([(usize::from(u >= 10), 1.0)]));
    let mut itf = SparseMatrix::new(2);
    (0..30).for_each(|i| itf.push_row([(usize::from(i >= 15), 1.0)]));
    let side = SideInfo::new(uf, itf, vec!["a".into(), "b".into()], vec!["a".into(), "b".into()]).unwrap();
    let config = TrainConfig {
        batch_size: 24,
        neg_ratio: 2,
        learning_rate: 5e-3,
        max_epochs: 500,
        patience: 0,
        latent_dim: 8,
        widths: Widths {
            prior_hidden: 8,
            inference_hidden: [32, 16],
            decoder_hidden: [16, 32],
        },
        ..TrainConfig::default()
    };
    let probe = BlockProbe {
        r: &r,
        side: &side,
        trace: RefCell::default(),
    };
    if let Err(e) = fit(&r, &side, &config, Some(&probe), "block") {
        return outcome(false, format!("training failed: {e}"));
    }
    let trace = probe.trace.into_inner();
    match trace.iter().position(|&(p, n)| p > 0.9 && n < 0.5) {
        Some(k) => outcome(
            true,
            format!(
                "epoch {}: positives {:.3} (> 0.9), structural negatives {:.3} (< 0.5)",
                k + 1,
                trace[k].0,
                trace[k].1
            ),
        ),
        None => {
            let last = trace.last().copied().unwrap_or((f64::NAN, f64::NAN));
            outcome(false, format!("after 500 epochs: positives {:.3}, negatives {:.3}", last.0, last.1))
        }
    }
}

fn calibration(ctx: &mut Context) -> Outcome {
    let d = match ctx.data() {
        Ok(d) => d,
        Err(e) => return outcome(false, e),
    };
    let cases = &d.test.cases;
    let n = cases.len() as f64;
    let ks = [1, 5, 10];
    let random = evaluate(&RandomScorer { seed: 4 }, cases, &ks, "random").unwrap();
    let oracle = evaluate(&OracleScorer, cases, &ks, "oracle").unwrap();
    let mut ok = oracle.hr.iter().chain(&oracle.ndcg).all(|&x| x == 1.0);
    let mut detail = Vec::new();
    for k in [5, 10] {
        let p = k as f64 / 100.0;
        let se = (p * (1.0 - p) / n).sqrt();
        let hr = random.hr_at(k).unwrap();
        ok &= (hr - p).abs() <= 3.0 * se;
        detail.push(format!("random HR@{k} {hr:.4} (target {p:.2} +/- {:.4})", 3.0 * se));
    }
    detail.push(format!("oracle HR = NDCG = 1 at k in {ks:?}: {}", oracle.hr.iter().chain(&oracle.ndcg).all(|&x| x == 1.0)));
    outcome(ok, format!("{} cases; {}", cases.len(), detail.join(", ")))
}

fn warm_reproduction(ctx: &mut Context) -> Outcome {
    match ctx.warm(Variant::Nvh, 5, 0, reproduction_epochs()) {
        Ok(rep) => {
            let (hr, ndcg) = (rep.hr_at(5).unwrap(), rep.ndcg_at(5).unwrap());
            outcome(
                hr >= 0.46 && ndcg >= 0.30,
                format!("HR@5 {hr:.4} (>= 0.46), NDCG@5 {ndcg:.4} (>= 0.30)"),
            )
        }
        Err(e) => outcome(false, e),
    }
}

/// Compares HR@k of two warm configurations over seeds 0..3; passes when
/// `a` wins on at least two (ties count as wins unless `strict`).
fn majority(ctx: &mut Context, a: (Variant, usize), b: (Variant, usize), k: usize, strict: bool, what: &str) -> Outcome {
    let epochs = comparison_epochs();
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..3 {
        let (x, y) = match (ctx.warm(a.0, a.1, seed, epochs), ctx.warm(b.0, b.1, seed, epochs)) {
            (Ok(x), Ok(y)) => (x.hr_at(k).unwrap(), y.hr_at(k).unwrap()),
            (Err(e), _) | (_, Err(e)) => return outcome(false, e),
        };
        wins += usize::from(x > y || (!strict && x == y));
        detail.push(format!("seed {seed}: {x:.4} vs {y:.4}"));
    }
    outcome(wins >= 2, format!("{what} on {wins}/3 seeds ({})", detail.join(", ")))
}

fn ablation_ordering(ctx: &mut Context) -> Outcome {
    majority(ctx, (Variant::Nvh, 5), (Variant::NvhN, 5), 10, true, "HR@10 nvh > nvh-n")
}

fn cold_start(ctx: &mut Context) -> Outcome {
    let d = match ctx.data() {
        Ok(d) => d,
        Err(e) => return outcome(false, e),
    };
    let mut ndcg = Vec::new();
    for v in [Variant::Nvh, Variant::NvhN] {
        let t = Instant::now();
        let config = TrainConfig {
            max_epochs: comparison_epochs(),
            ..heavy_config(0)
        };
        match cold_run(d, ColdMode::User, &v.apply(&config), &[5, 10]) {
            Ok((fit, all, only)) => {
                eprintln!(
                    "  trained {v} cold-user: best epoch {}/{} in {:.0}s, NDCG@5 all {:.4}, cold-only {:.4} ({} cases)",
                    fit.best.epoch,
                    fit.history.len(),
                    t.elapsed().as_secs_f64(),
                    all.ndcg_at(5).unwrap(),
                    only.ndcg_at(5).unwrap(),
                    only.cases()
                );
                ndcg.push(only.ndcg_at(5).unwrap());
            }
            Err(e) => return outcome(false, e.to_string()),
        }
    }
    let floor = 2.0 * random_ndcg(5, 100);
    outcome(
        ndcg[0] > ndcg[1] && ndcg[0] >= floor,
        format!(
            "cold-user NDCG@5: nvh {:.4} vs nvh-n {:.4}; 2x random = {floor:.4}",
            ndcg[0], ndcg[1]
        ),
    )
}

fn negative_ratio(ctx: &mut Context) -> Outcome {
    majority(ctx, (Variant::Nvh, 6), (Variant::Nvh, 2), 5, false, "HR@5 neg_ratio 6 >= neg_ratio 2")
}

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let criteria: [(u8, &str, Check); 8] = [
        (1, "gradient check", gradient_check),
        (2, "KL oracle", kl_oracle),
        (3, "overfit oracle", overfit_oracle),
        (4, "metric calibration", calibration),
        (5, "ML-100K warm reproduction", warm_reproduction),
        (6, "ablation ordering", ablation_ordering),
        (7, "cold-start sanity", cold_start),
        (8, "negative-ratio sweep shape", negative_ratio),
    ];
    let only: Option<Vec<u8>> = std::env::var("NVHCF_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let full = std::env::var("NVHCF_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let have_data = data_dir().join("u.data").is_file();
    let mut ctx = Context::default();
    let mut failed = 0;
    for (id, name, check) in criteria {
        let skip = match &only {
            Some(o) if !o.contains(&id) => continue,
            Some(_) => None,
            None if id >= 5 && !full => Some("needs NVHCF_ACCEPTANCE_FULL=1"),
            None if id == 4 && !full && !have_data => Some("ML-100K not found"),
            None => None,
        };
        if let Some(why) = skip {
            println!("criterion {id} [SKIP] {name}: {why}");
            continue;
        }
        let t = Instant::now();
        let out = check(&mut ctx);
        failed += usize::from(!out.pass);
        println!(
            "criterion {id} [{}] {name}: {} ({:.1}s)",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
