use ndarray::{Array2, ArrayView2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tabsynth::dataset::Splits;
use tabsynth::denoiser::{Denoiser, DenoiserConfig};
use tabsynth::generative::{
    ddpm_loss, ddpm_loss_with, ddpm_noise, ddpm_sample, flow_interpolate, flow_loss, flow_sample, sample_table,
    score_from_eps, train, ModelCheckpoint, NoiseSchedule, Regime, TrainConfig, VectorField, CHECKPOINT_MAGIC,
};
use tabsynth::{toy, Exec, Result};

/// Exact ε-prediction for 1-D data `N(mu, var)` under the schedule: the
/// marginal of `z_t` is `N(√ᾱ·mu, ᾱ·var + 1 − ᾱ)`.
struct GaussianEps {
    sched: NoiseSchedule,
    mu: f64,
    var: f64,
}

impl VectorField for GaussianEps {
    fn width(&self) -> usize {
        1
    }

    fn eval(&self, z: ArrayView2<f64>, t: &[f64]) -> Result<Array2<f64>> {
        let mut out = z.to_owned();
        for (r, mut row) in out.outer_iter_mut().enumerate() {
            let step = (t[r] * self.sched.steps as f64).round() as usize;
            let ab = self.sched.alpha_bar(step);
            let marginal = ab * self.var + 1.0 - ab;
            row.mapv_inplace(|v| self.sched.sigma_bar(step) * (v - ab.sqrt() * self.mu) / marginal);
        }
        Ok(out)
    }
}

/// Conditional field of a point mass at `x0`: `(z − x0)/t`.
struct PointMass {
    x0: Vec<f64>,
}

impl VectorField for PointMass {
    fn width(&self) -> usize {
        self.x0.len()
    }

    fn eval(&self, z: ArrayView2<f64>, t: &[f64]) -> Result<Array2<f64>> {
        Ok(Array2::from_shape_fn(z.dim(), |(r, j)| (z[[r, j]] - self.x0[j]) / t[r]))
    }
}

fn zero_net(d_in: usize) -> Denoiser<f64> {
    let cfg = DenoiserConfig::scaled(d_in, 8);
    let net = Denoiser::<f64>::new(cfg.clone(), 0).unwrap();
    Denoiser::from_params(cfg, net.params.zeros_like()).unwrap()
}

fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

#[test]
fn ddpm_recovers_gaussian_with_exact_score() {
    let oracle = GaussianEps {
        sched: NoiseSchedule::default(),
        mu: 2.0,
        var: 0.25,
    };
    let z = ddpm_sample(&oracle, &oracle.sched, 100_000, 7, Exec::default()).unwrap();
    let col = z.column(0);
    let mean = col.mean().unwrap();
    let var = col.var(1.0);
    assert!((mean - 2.0).abs() < 0.05, "mean {mean}");
    assert!((var / 0.25 - 1.0).abs() < 0.10, "variance {var}");
}

#[test]
fn flow_euler_recovers_point_mass() {
    let field = PointMass { x0: vec![3.0, -1.0] };
    let z = flow_sample(&field, 50, 1000, 3, Exec::default()).unwrap();
    for row in z.outer_iter() {
        assert!((row[0] - 3.0).abs() < 1e-6 && (row[1] + 1.0).abs() < 1e-6, "{row}");
    }
}

#[test]
fn flow_single_step_is_one_euler_step() {
    // z0 = z1 - v(z1, 1) lands on the point mass
    let z = flow_sample(&PointMass { x0: vec![0.5] }, 1, 4, 9, Exec::Sequential).unwrap();
    assert!(z.iter().all(|v| (v - 0.5).abs() < 1e-12));
}

#[test]
fn sampler_shapes_and_repeatability() {
    let net = Denoiser::<f64>::new(DenoiserConfig::scaled(3, 8), 4).unwrap();
    let sched = NoiseSchedule::linear(20, 1e-4, 0.2).unwrap();
    let a = ddpm_sample(&net, &sched, 700, 5, Exec::default()).unwrap();
    assert_eq!(a.dim(), (700, 3));
    assert_eq!(a, ddpm_sample(&net, &sched, 700, 5, Exec::default()).unwrap());
    assert_eq!(a, ddpm_sample(&net, &sched, 700, 5, Exec::Sequential).unwrap());
    let f = flow_sample(&net, 10, 700, 5, Exec::Parallel).unwrap();
    assert_eq!(f, flow_sample(&net, 10, 700, 5, Exec::Sequential).unwrap());
    // a prefix of rows does not depend on how many rows are drawn
    let g = flow_sample(&net, 10, 100, 5, Exec::Sequential).unwrap();
    assert_eq!(g, f.slice(ndarray::s![..100, ..]));
}

#[test]
fn noising_mean_matches_monte_carlo() {
    let sched = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 20_000;
    let z0_row = [1.5, -0.7, 0.0, 3.0];
    let z0 = Array2::from_shape_fn((n, 4), |(_, j)| z0_row[j]);
    for step in [1, 10, 250, 600, 1000] {
        let eps = normal(n, 4, &mut rng);
        let zt = ddpm_noise(z0.view(), &vec![step; n], eps.view(), &sched).unwrap();
        let mean = zt.mean_axis(Axis(0)).unwrap();
        let sd = zt.std_axis(Axis(0), 1.0);
        for j in 0..4 {
            let want = sched.alpha_bar(step).sqrt() * z0_row[j];
            let se = sd[j] / (n as f64).sqrt();
            assert!((mean[j] - want).abs() <= 3.0 * se, "t={step} j={j}: {} vs {want}", mean[j]);
        }
    }
}

#[test]
fn zero_model_losses_are_unit() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = zero_net(5);
    let z0 = normal(4000, 5, &mut rng);
    let sched = NoiseSchedule::default();
    let d = ddpm_loss(&net, z0.view(), &sched, 3, 1, 512, Exec::default()).unwrap();
    assert!((d.loss - 1.0).abs() < 0.05, "ddpm {}", d.loss);
    let zeros = Array2::zeros((4000, 5));
    let f = flow_loss(&net, zeros.view(), 3, 1, 512, Exec::default()).unwrap();
    assert!((f.loss - 1.0).abs() < 0.05, "flow {}", f.loss);
}

#[test]
fn zero_model_ddpm_loss_is_noise_energy() {
    let sched = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let eps = normal(16, 2, &mut rng);
    let z0 = normal(16, 2, &mut rng);
    let t: Vec<usize> = (0..16).map(|i| 1 + 60 * i).collect();
    let out = ddpm_loss_with(&zero_net(2), z0.view(), &t, eps.view(), &sched, 4, Exec::Sequential).unwrap();
    let mse = eps.mapv(|e| e * e).mean().unwrap();
    assert!((out.loss - mse).abs() < 1e-12);
}

#[test]
fn sharding_does_not_change_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = Denoiser::<f64>::new(DenoiserConfig::scaled(3, 8), 1).unwrap();
    let z0 = normal(300, 3, &mut rng);
    let a = flow_loss(&net, z0.view(), 9, 17, 300, Exec::Sequential).unwrap();
    let b = flow_loss(&net, z0.view(), 9, 17, 32, Exec::Parallel).unwrap();
    assert!((a.loss - b.loss).abs() < 1e-12);
    for (x, y) in a.grads.tensors().iter().zip(b.grads.tensors()) {
        for (p, q) in x.iter().zip(y) {
            assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0));
        }
    }
    let c = flow_loss(&net, z0.view(), 9, 17, 32, Exec::Sequential).unwrap();
    assert_eq!(b.loss, c.loss);
}

#[test]
fn flow_endpoints_are_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z0 = normal(8, 3, &mut rng);
    let eps = normal(8, 3, &mut rng);
    assert_eq!(flow_interpolate(z0.view(), &[0.0; 8], eps.view()).unwrap(), z0);
    assert_eq!(flow_interpolate(z0.view(), &[1.0; 8], eps.view()).unwrap(), eps);
}

proptest! {
    #[test]
    fn score_matches_gaussian_gradient(z0 in -5.0f64..5.0, eps in -4.0f64..4.0, step in 1usize..=1000) {
        let sched = NoiseSchedule::default();
        let (a, sb) = (sched.alpha_bar(step).sqrt(), sched.sigma_bar(step));
        let z = a * z0 + sb * eps;
        // d/dz log N(z | a z0, sb²) written out directly
        let symbolic = -(z - a * z0) / (1.0 - sched.alpha_bar(step));
        let s = score_from_eps(eps, sb);
        prop_assert!((s - symbolic).abs() <= 1e-12 * s.abs().max(1.0), "{} vs {}", s, symbolic);
    }
}

fn toy_splits(seed: u64) -> Splits {
    Splits::build(&toy::wide_categorical(2000, 3, seed), None, (0.8, 0.1, 0.1), seed).unwrap()
}

fn quick_config(regime: Regime, iterations: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        batch: 128,
        d_t: 32,
        eval_every: 250,
        eval_rows: 256,
        log_every: 50,
        seed,
        lr: 1e-3,
        exec: Exec::Sequential,
        ..TrainConfig::desk(regime)
    }
}

#[test]
fn training_loss_decreases() {
    for regime in [Regime::Ddpm, Regime::Flow] {
        let mut ratios: Vec<f64> = (0..5u64)
            .map(|seed| {
                let out = train(&toy_splits(seed), &quick_config(regime, 500, seed)).unwrap();
                out.log.last().unwrap().loss / out.log[0].loss
            })
            .collect();
        ratios.sort_by(f64::total_cmp);
        assert!(ratios[2] < 0.9, "{regime}: median loss ratio {}", ratios[2]);
    }
}

#[test]
fn flow_euler_is_first_order() {
    let out = train(&toy_splits(11), &quick_config(Regime::Flow, 400, 11)).unwrap();
    let net = &out.checkpoint.denoiser;
    let at = |steps| flow_sample(net, steps, 128, 2, Exec::default()).unwrap();
    // the time embedding oscillates at up to 1000 rad per unit time, so the
    // asymptotic regime needs steps well below 1/1000
    let (a, b, c) = (at(2000), at(4000), at(8000));
    let d1 = (&a - &b).mapv(f64::abs).sum();
    let d2 = (&b - &c).mapv(f64::abs).sum();
    let order = (d1 / d2).log2();
    assert!((0.8..=1.2).contains(&order), "observed order {order}");
}

#[test]
fn training_is_repeatable_and_checkpoints_round_trip() {
    let splits = toy_splits(21);
    for regime in [Regime::Ddpm, Regime::Flow] {
        let cfg = TrainConfig {
            ddpm_steps: 100,
            flow_steps: 10,
            ..quick_config(regime, 300, 21)
        };
        let a = train(&splits, &cfg).unwrap().checkpoint;
        let b = train(&splits, &cfg).unwrap().checkpoint;
        let bytes = a.to_bytes().unwrap();
        assert_eq!(bytes, b.to_bytes().unwrap());
        assert_eq!(&bytes[..5], CHECKPOINT_MAGIC);
        assert!(a.meta.val_score.is_some());
        let mut back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        // the execution policy is a runtime choice and is not stored
        back.meta.config.exec = a.meta.config.exec;
        assert_eq!(back, a);
        assert_eq!(back.to_bytes().unwrap(), bytes);

        let par = train(&splits, &TrainConfig { exec: Exec::Parallel, ..cfg.clone() }).unwrap().checkpoint;
        assert_eq!(par.to_bytes().unwrap(), bytes);

        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ModelCheckpoint::from_bytes(&extra).is_err());
        assert!(ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelCheckpoint::from_bytes(&bad).is_err());
    }
}

#[test]
fn sampled_tables_respect_schema() {
    let splits = toy_splits(31);
    let ckpt = train(&splits, &TrainConfig { ddpm_steps: 100, ..quick_config(Regime::Ddpm, 200, 31) })
        .unwrap()
        .checkpoint;
    let empty = sample_table(&ckpt, 0, 1, Exec::default()).unwrap();
    assert!(empty.table.is_empty());
    assert_eq!(&empty.table.schema, ckpt.schema());

    let s = sample_table(&ckpt, 1500, 1, Exec::default()).unwrap();
    assert_eq!(s.table.n_rows(), 1500);
    let k = ckpt.schema().cardinalities();
    for row in s.table.categorical.outer_iter() {
        for (v, k) in row.iter().zip(&k) {
            assert!(v < k);
        }
    }
    assert!(s.ooi_rate.iter().all(|r| (0.0..=1.0).contains(r)));
    for j in 0..s.table.numeric.ncols() {
        let train_col = splits.train.numeric.column(j);
        let lo = train_col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = train_col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let slack = 1e-9 * (hi - lo);
        assert!(s.table.numeric.column(j).iter().all(|&v| v >= lo - slack && v <= hi + slack));
    }
}
