//! Acceptance criteria 1-9, run in order with one PASS/FAIL line each.
//!
//! Set `ACCEPTANCE_ONLY=3,5` to run a subset.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tabsynth::dataset::{ColumnSpec, Slot, Splits, Table, TableSchema, TargetSpec, TaskKind};
use tabsynth::denoiser::{Denoiser, DenoiserConfig, DenoiserParams};
use tabsynth::eval::{c2st, cde, mia, pcc, tvd, BinningSpec, C2stConfig};
use tabsynth::generative::{
    ddpm_sample, flow_sample, sample_table, train, ModelCheckpoint, NoiseSchedule, Regime, TrainConfig, VectorField,
};
use tabsynth::geometry::{
    closed_form_variance, count_minimal_singular_points, enumerate_minimal_singular_points, minimal_singular_point,
    score_variance_exact, PriorSpec, SingularConfig,
};
use tabsynth::transforms::{CodecKind, TableEncoder};
use tabsynth::{toy, Exec};
use tabsynth_cli::{cmd_infer, cmd_sample, cmd_train, TrainJob};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

/// Bypasses the test harness capture so the lines land in the log.
fn report(line: &str) {
    let mut err = std::io::stderr();
    let _ = writeln!(err, "{line}");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------- 1, 2

fn geometry_closed_form() -> Outcome {
    let (alpha, sigma) = (1.0, 0.2);
    let mut worst = 0.0f64;
    for k in 2..=10 {
        for n in 2..=k {
            let cfg = SingularConfig::new(k, (0..n).collect(), alpha, sigma).unwrap();
            let x = minimal_singular_point(&cfg);
            let exact = score_variance_exact(&cfg, &PriorSpec::Uniform, &x).unwrap();
            let closed = alpha * alpha / sigma.powi(4) * (n as f64 - 1.0) / n as f64;
            assert!((closed_form_variance(alpha, sigma, n) - closed).abs() <= 1e-12 * closed);
            worst = worst.max((exact - closed).abs() / closed);
        }
    }
    outcome(worst < 1e-6, format!("max relative error {worst:.3e} (< 1e-6)"))
}

/// Subsets `S`, `|S| ≥ 2`, whose centroid is nearest to exactly the one-hot
/// vectors of `S`.
fn brute_force_singular_count(k: usize) -> u64 {
    let mut count = 0;
    for mask in 0u64..1 << k {
        let n = mask.count_ones() as usize;
        if n < 2 {
            continue;
        }
        let x: Vec<f64> = (0..k).map(|i| if mask >> i & 1 == 1 { 1.0 / n as f64 } else { 0.0 }).collect();
        let norm: f64 = x.iter().map(|v| v * v).sum();
        let d: Vec<f64> = (0..k).map(|i| norm - 2.0 * x[i] + 1.0).collect();
        let best = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let nearest: u64 = (0..k).filter(|&i| d[i] - best <= 1e-12).map(|i| 1u64 << i).sum();
        if nearest == mask {
            count += 1;
        }
    }
    count
}

fn singular_counting() -> Outcome {
    let mut bad = Vec::new();
    for k in 2..=16usize {
        let want = (1u64 << k) - (k as u64 + 1);
        let got = brute_force_singular_count(k);
        if got != want
            || enumerate_minimal_singular_points(k).unwrap() != want
            || count_minimal_singular_points(k).unwrap() != want
        {
            bad.push(k);
        }
    }
    outcome(bad.is_empty(), format!("K=2..16 match 2^K-(K+1); mismatches {bad:?}"))
}

// ---------------------------------------------------------------- 3

fn random_table(rng: &mut ChaCha8Rng) -> Table {
    let n = rng.random_range(1..=50);
    let n_cols = rng.random_range(1..=8);
    let n_cat = rng.random_range(0..=n_cols);
    let n_num = n_cols - n_cat;
    let mut columns: Vec<ColumnSpec> = (0..n_num).map(|j| ColumnSpec::numeric(format!("n{j}"))).collect();
    let ks: Vec<usize> = (0..n_cat).map(|_| rng.random_range(2..=32)).collect();
    for (j, &k) in ks.iter().enumerate() {
        columns.push(ColumnSpec::categorical(format!("c{j}"), (0..k).map(|v| format!("v{v:02}"))));
    }
    let target = if n_num > 0 {
        TargetSpec {
            name: "n0".into(),
            task: TaskKind::Regression,
        }
    } else {
        TargetSpec {
            name: "c0".into(),
            task: TaskKind::MulticlassClassification,
        }
    };
    let schema = TableSchema::new(columns, target).unwrap();
    let mut numeric = Array2::zeros((n, n_num));
    for j in 0..n_num {
        let discrete = rng.random_bool(0.3);
        let scale = 10f64.powf(rng.random_range(-3.0..4.0));
        for i in 0..n {
            numeric[[i, j]] = if discrete {
                rng.random_range(0..4) as f64
            } else {
                scale * rng.sample::<f64, _>(StandardNormal)
            };
        }
    }
    let categorical = Array2::from_shape_fn((n, n_cat), |(_, j)| rng.random_range(0..ks[j]));
    Table::new(schema, numeric, categorical).unwrap()
}

fn codec_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let kinds = [CodecKind::CatConverter, CodecKind::OneHot, CodecKind::AnalogBits, CodecKind::Dictionary];
    let mut failures = 0;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let table = random_table(&mut rng);
        for kind in kinds {
            let enc = TableEncoder::fit(&table, kind, 1000, 0).unwrap();
            let back = enc.decode(&enc.encode(&table).unwrap()).unwrap().table;
            let mut ok = back.categorical == table.categorical;
            for j in 0..table.numeric.ncols() {
                let col = table.numeric.column(j);
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for (a, b) in col.iter().zip(back.numeric.column(j)) {
                    let err = (a - b).abs();
                    if hi > lo {
                        worst = worst.max(err / (hi - lo));
                    }
                    ok &= err <= 1e-6 * (hi - lo);
                }
            }
            failures += usize::from(!ok);
        }
    }
    outcome(
        failures == 0,
        format!("1000 tables x 4 codecs, {failures} failures, worst numeric error {worst:.2e} of range"),
    )
}

// ---------------------------------------------------------------- 4

/// Double-double accumulator for the finite-difference reference.
#[derive(Debug, Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    fn norm(s: f64, e: f64) -> Dd {
        let hi = s + e;
        Dd { hi, lo: e - (hi - s) }
    }

    fn add(self, o: Dd) -> Dd {
        let s = self.hi + o.hi;
        let bb = s - self.hi;
        let e = (self.hi - (s - bb)) + (o.hi - bb);
        Dd::norm(s, e + self.lo + o.lo)
    }

    fn mul(self, w: f64) -> Dd {
        let p = self.hi * w;
        Dd::norm(p, self.hi.mul_add(w, -p) + self.lo * w)
    }

    fn positive(self) -> bool {
        self.hi > 0.0 || (self.hi == 0.0 && self.lo > 0.0)
    }
}

fn reference_objective(p: &DenoiserParams<f64>, d_t: usize, z: &Array2<f64>, t: &[f64], up: &Array2<f64>) -> (Dd, Vec<bool>) {
    let mut pattern = Vec::new();
    let mut total = Dd::ZERO;
    for r in 0..z.nrows() {
        let mut h: Vec<Dd> = z.row(r).iter().map(|&v| Dd::from(v)).collect();
        for (l, layer) in p.layers.iter().enumerate() {
            let (fan_in, fan_out) = layer.w.dim();
            let mut next = vec![Dd::ZERO; fan_out];
            for (o, slot) in next.iter_mut().enumerate() {
                let mut acc = Dd::from(layer.b[o]);
                for (i, hi) in h.iter().enumerate().take(fan_in) {
                    acc = acc.add(hi.mul(layer.w[[i, o]]));
                }
                if l == 0 {
                    let arg = 1000.0 * t[r] * 10000f64.powf(-2.0 * (o / 2) as f64 / d_t as f64);
                    acc = acc.add(Dd::from(if o % 2 == 0 { arg.sin() } else { arg.cos() }));
                } else if l < 5 {
                    pattern.push(acc.positive());
                    if !acc.positive() {
                        acc = Dd::ZERO;
                    }
                }
                *slot = acc;
            }
            h = next;
        }
        for (j, v) in h.iter().enumerate() {
            total = total.add(v.mul(up[[r, j]]));
        }
    }
    (total, pattern)
}

fn gradient_check() -> Outcome {
    let h = 1e-6;
    let (mut worst, mut checked, mut kinks) = (0.0f64, 0usize, 0usize);
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(50_000 + case);
        let d_in = rng.random_range(1..=6);
        let d_t = 2 * rng.random_range(1..=8);
        let n = rng.random_range(1..=4);
        let cfg = DenoiserConfig::scaled(d_in, d_t);
        let mut net = Denoiser::<f64>::new(cfg, case).unwrap();
        for t in net.params.tensors_mut() {
            for v in t.iter_mut() {
                *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let z = Array2::from_shape_simple_fn((n, d_in), || rng.sample(StandardNormal));
        let up = Array2::from_shape_simple_fn((n, d_in), || rng.sample(StandardNormal));
        let t: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let (_, cache) = net.forward(z.view(), &t).unwrap();
        let analytic: Vec<f64> = net.backward(&cache, up.view()).unwrap().params.tensors().concat();
        let (_, base) = reference_objective(&net.params, d_t, &z, &t, &up);
        let mut flat: Vec<f64> = net.params.tensors().concat();
        for k in 0..flat.len() {
            let orig = flat[k];
            let (xp, xm) = (orig + h, orig - h);
            flat[k] = xp;
            let (lp, pp) = reference_objective(&DenoiserParams::from_flat(&net.config, &flat).unwrap(), d_t, &z, &t, &up);
            flat[k] = xm;
            let (lm, pm) = reference_objective(&DenoiserParams::from_flat(&net.config, &flat).unwrap(), d_t, &z, &t, &up);
            flat[k] = orig;
            if pp != base || pm != base {
                kinks += 1;
                continue;
            }
            let diff = lp.add(Dd { hi: -lm.hi, lo: -lm.lo });
            let numeric = (diff.hi + diff.lo) / (xp - xm);
            let a = analytic[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12));
            checked += 1;
        }
    }
    outcome(
        worst < 1e-5 && kinks * 100 < checked,
        format!("100 configs, {checked} parameters, max relative error {worst:.3e} (< 1e-5), {kinks} skipped at ReLU kinks"),
    )
}

// ---------------------------------------------------------------- 5

struct GaussianEps {
    sched: NoiseSchedule,
    mu: f64,
    var: f64,
}

impl VectorField for GaussianEps {
    fn width(&self) -> usize {
        1
    }

    fn eval(&self, z: ArrayView2<f64>, t: &[f64]) -> tabsynth::Result<Array2<f64>> {
        let mut out = z.to_owned();
        for (r, mut row) in out.outer_iter_mut().enumerate() {
            let step = (t[r] * self.sched.steps as f64).round() as usize;
            let ab = self.sched.alpha_bar(step);
            let sb = self.sched.sigma_bar(step);
            row.mapv_inplace(|v| sb * (v - ab.sqrt() * self.mu) / (ab * self.var + 1.0 - ab));
        }
        Ok(out)
    }
}

struct PointMass([f64; 2]);

impl VectorField for PointMass {
    fn width(&self) -> usize {
        2
    }

    fn eval(&self, z: ArrayView2<f64>, t: &[f64]) -> tabsynth::Result<Array2<f64>> {
        Ok(Array2::from_shape_fn(z.dim(), |(r, j)| (z[[r, j]] - self.0[j]) / t[r]))
    }
}

fn sampler_oracles() -> Outcome {
    let g = GaussianEps {
        sched: NoiseSchedule::default(),
        mu: 2.0,
        var: 0.25,
    };
    let z = ddpm_sample(&g, &g.sched, 100_000, 11, Exec::default()).unwrap();
    let (mean, var) = (z.column(0).mean().unwrap(), z.column(0).var(1.0));
    let field = PointMass([3.0, -1.0]);
    let f = flow_sample(&field, 50, 10_000, 11, Exec::default()).unwrap();
    let flow_err = f
        .outer_iter()
        .map(|r| (r[0] - 3.0).abs().max((r[1] + 1.0).abs()))
        .fold(0.0, f64::max);
    let ok = (mean - 2.0).abs() < 0.05 && (var / 0.25 - 1.0).abs() < 0.10 && flow_err < 1e-6;
    outcome(
        ok,
        format!("DDPM mean {mean:.4} (2 +- 0.05), variance {var:.4} (0.25 +- 10%); flow max error {flow_err:.2e} (< 1e-6)"),
    )
}

// ---------------------------------------------------------------- 6, 8

struct ToyRun {
    regime: Regime,
    splits: Splits,
    checkpoint: ModelCheckpoint,
    cde: f64,
    pcc: f64,
    c2st: f64,
    /// Training, sampling and scoring time.
    seconds: f64,
}

const TOY_SEEDS: u64 = 5;

fn toy_table() -> Table {
    toy::correlated_mixed(5000, 0.7, 0)
}

fn toy_runs() -> &'static Vec<ToyRun> {
    static RUNS: OnceLock<Vec<ToyRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let table = toy_table();
        let mut runs = Vec::new();
        for regime in [Regime::Ddpm, Regime::Flow] {
            for seed in 0..TOY_SEEDS {
                let start = Instant::now();
                let splits = Splits::build(&table, None, (0.8, 0.1, 0.1), seed).unwrap();
                let cfg = TrainConfig {
                    seed,
                    ..TrainConfig::desk(regime)
                };
                let checkpoint = train(&splits, &cfg).unwrap().checkpoint;
                let syn = sample_table(&checkpoint, splits.train.n_rows(), 1000 + seed, Exec::default())
                    .unwrap()
                    .table;
                runs.push(ToyRun {
                    regime,
                    cde: cde(&splits.train, &syn).unwrap(),
                    pcc: pcc(&splits.train, &syn, BinningSpec::default()).unwrap(),
                    c2st: c2st(&splits.train, &syn, seed, &C2stConfig::default()).unwrap(),
                    splits,
                    checkpoint,
                    seconds: start.elapsed().as_secs_f64(),
                });
            }
        }
        runs
    })
}

fn end_to_end() -> Outcome {
    let runs = toy_runs();
    let mut ok = true;
    let mut parts = Vec::new();
    for regime in [Regime::Ddpm, Regime::Flow] {
        let of = |f: fn(&ToyRun) -> f64| median(runs.iter().filter(|r| r.regime == regime).map(f).collect());
        let (c, p, d) = (of(|r| r.cde), of(|r| r.pcc), of(|r| r.c2st));
        let secs: f64 = runs.iter().filter(|r| r.regime == regime).map(|r| r.seconds).sum();
        ok &= c >= 0.95 && p >= 0.90 && d >= 0.80 && secs <= 300.0;
        parts.push(format!("{regime}: CDE {c:.3} PCC {p:.3} C2ST {d:.3} in {secs:.0} s"));
    }
    outcome(
        ok,
        format!(
            "medians over {TOY_SEEDS} seeds, {} (>= 0.95 / 0.90 / 0.80, <= 300 s per regime)",
            parts.join("; ")
        ),
    )
}

fn mia_calibration() -> Outcome {
    let train_t = toy::correlated_mixed(2000, 0.7, 101);
    let holdout = toy::correlated_mixed(2000, 0.7, 102);
    let copy = mia(&train_t, &holdout, &train_t, 0, Exec::default()).unwrap().recall;
    let fresh = toy::correlated_mixed(2000, 0.7, 103);
    let null = mia(&train_t, &holdout, &fresh, 0, Exec::default()).unwrap().recall;
    let model: Vec<f64> = toy_runs()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let syn = sample_table(&r.checkpoint, r.splits.train.n_rows(), 2000 + i as u64, Exec::default())
                .unwrap()
                .table;
            mia(&r.splits.train, &r.splits.test, &syn, i as u64, Exec::default()).unwrap().recall
        })
        .collect();
    let lo = model.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = model.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ok = copy >= 0.9 && (0.45..=0.55).contains(&null) && lo >= 0.40 && hi <= 0.60;
    outcome(
        ok,
        format!(
            "copy recall {copy:.3} (>= 0.9), resample recall {null:.3} ([0.45, 0.55]), trained models recall {lo:.3}..{hi:.3} ([0.40, 0.60], {} models)",
            model.len()
        ),
    )
}

// ---------------------------------------------------------------- 7

fn codec_ablation() -> Outcome {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..5u64 {
        let table = toy::single_categorical(5000, 24, seed);
        let splits = Splits::build(&table, None, (0.7, 0.1, 0.2), seed).unwrap();
        let Some(Slot::Categorical(c)) = table.schema.slot_of("c") else {
            unreachable!("toy column")
        };
        let real = splits.train.categorical.column(c).to_vec();
        let score = |codec| {
            let cfg = TrainConfig {
                iterations: 20_000,
                batch: 128,
                seed,
                codec,
                ..TrainConfig::desk(Regime::Flow)
            };
            let ckpt = train(&splits, &cfg).unwrap().checkpoint;
            let syn = sample_table(&ckpt, splits.train.n_rows(), 7, Exec::default()).unwrap().table;
            1.0 - tvd(&real, &syn.categorical.column(c).to_vec()).unwrap()
        };
        let (cc, oh) = (score(CodecKind::CatConverter), score(CodecKind::OneHot));
        wins += usize::from(cc > oh);
        parts.push(format!("{cc:.3}/{oh:.3}"));
    }
    outcome(
        wins >= 4,
        format!("CatConverter beats one-hot in {wins}/5 seeds (>= 4); TVD-CDE cc/onehot {}", parts.join(" ")),
    )
}

// ---------------------------------------------------------------- 9

fn train_and_sample(dir: &Path, data: &Path, schema: &Path, regime: Regime) -> (Vec<u8>, Vec<u8>) {
    let ckpt = dir.join(format!("{regime}.ckpt"));
    let out = dir.join(format!("{regime}.csv"));
    let job = TrainJob {
        data: data.to_path_buf(),
        schema: schema.to_path_buf(),
        checkpoint: ckpt.clone(),
        log: Some(dir.join(format!("{regime}.log.csv"))),
        test: None,
        splits_out: None,
        ratio: (0.8, 0.1, 0.1),
        split_seed: 5,
        config: TrainConfig {
            seed: 5,
            exec: Exec::Sequential,
            ..TrainConfig::desk(regime)
        },
    };
    cmd_train(&job).unwrap();
    cmd_sample(&ckpt, 2000, 9, &out, Exec::Sequential).unwrap();
    (std::fs::read(ckpt).unwrap(), std::fs::read(out).unwrap())
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data.csv");
    std::fs::write(&data, toy_table().to_csv_string()).unwrap();
    let schema = root.path().join("schema.json");
    cmd_infer(&data, &schema, 20, None).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for regime in [Regime::Ddpm, Regime::Flow] {
        let runs: Vec<_> = (0..2)
            .map(|i| {
                let dir = root.path().join(format!("run{i}"));
                std::fs::create_dir(&dir).ok();
                train_and_sample(&dir, &data, &schema, regime)
            })
            .collect();
        let same = runs[0] == runs[1];
        ok &= same;
        parts.push(format!(
            "{regime}: checkpoint {} bytes, csv {} bytes, identical {same}",
            runs[0].0.len(),
            runs[0].1.len()
        ));
    }
    outcome(ok, parts.join("; "))
}

// ----------------------------------------------------------------

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 9] = [
        (1, "geometry closed form", Duration::from_secs(10), geometry_closed_form),
        (2, "singular counting", Duration::from_secs(5), singular_counting),
        (3, "codec round trip", Duration::from_secs(30), codec_round_trip),
        (4, "gradient correctness", Duration::from_secs(60), gradient_check),
        (5, "sampler oracles", Duration::from_secs(60), sampler_oracles),
        (6, "end-to-end toy synthesis", Duration::from_secs(600), end_to_end),
        (7, "CatConverter vs one-hot", Duration::from_secs(600), codec_ablation),
        (8, "MIA calibration", Duration::from_secs(120), mia_calibration),
        (9, "determinism", Duration::from_secs(300), determinism),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (id, name, budget, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        if id == 8 {
            // reuses the models trained for criterion 6
            toy_runs();
        }
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let passed = out.passed && in_time;
        report(&format!(
            "criterion {id} [{}] {name}: {} ({:.1} s, budget {} s)",
            if passed { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        ));
        if !passed {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria {failed:?}");
}
