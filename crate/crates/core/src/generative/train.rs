use log::{debug, info};
use ndarray::{Array2, Axis};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{ModelCheckpoint, TrainingMeta};
use super::{ddpm_loss, ddpm_sample, flow_loss, flow_sample, NoiseSchedule, Regime};
use crate::dataset::{Splits, Table};
use crate::denoiser::{adam_step, AdamConfig, AdamState, Denoiser, DenoiserConfig};
use crate::eval::{cde, pcc, BinningSpec};
use crate::par::Exec;
use crate::rng::{self, Domain};
use crate::transforms::{CodecKind, TableEncoder};
use crate::{Error, Result};

/// Losses above this abort training.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValMetric {
    /// Mean column-wise density score.
    Cde,
    /// Pairwise correlation score.
    Pcc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub regime: Regime,
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Denoiser width `d_t`; hidden layers are `[d_t, 2d_t, 2d_t, d_t]`.
    pub d_t: usize,
    pub codec: CodecKind,
    pub n_quantiles: usize,
    /// Validate (and possibly keep the parameters) every this many iterations.
    pub eval_every: usize,
    /// Synthetic rows drawn per validation.
    pub eval_rows: usize,
    pub val_metric: ValMetric,
    /// Euler steps for flow sampling.
    pub flow_steps: usize,
    pub ddpm_steps: usize,
    /// Rows per gradient shard; fixed so results do not depend on workers.
    pub shard_rows: usize,
    pub log_every: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl TrainConfig {
    /// Full-size settings: 100k iterations at batch 4096, `d_t = 1024`.
    pub fn full_scale(regime: Regime) -> Self {
        TrainConfig {
            regime,
            iterations: 100_000,
            batch: 4096,
            lr: 1e-4,
            weight_decay: 5e-4,
            seed: 0,
            d_t: 1024,
            codec: CodecKind::CatConverter,
            n_quantiles: 1000,
            eval_every: 5000,
            eval_rows: 2048,
            val_metric: ValMetric::Cde,
            flow_steps: 50,
            ddpm_steps: 1000,
            shard_rows: 512,
            log_every: 100,
            exec: Exec::default(),
        }
    }

    /// Settings that finish in about a minute on one core.
    pub fn desk(regime: Regime) -> Self {
        TrainConfig {
            iterations: 5000,
            batch: 256,
            d_t: 64,
            eval_every: 1000,
            eval_rows: 512,
            shard_rows: 256,
            ..TrainConfig::full_scale(regime)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("iterations", self.iterations),
            ("batch", self.batch),
            ("eval_every", self.eval_every),
            ("eval_rows", self.eval_rows),
            ("flow_steps", self.flow_steps),
            ("ddpm_steps", self.ddpm_steps),
            ("shard_rows", self.shard_rows),
            ("log_every", self.log_every),
            ("n_quantiles", self.n_quantiles),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("`{name}` must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("learning rate must be positive and weight decay non-negative"));
        }
        DenoiserConfig::scaled(1, self.d_t).validate()
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.ddpm_steps, 1e-4, 0.02)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    /// Mean loss since the previous row.
    pub loss: f64,
    pub val_score: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Holds the best-validated parameters.
    pub checkpoint: ModelCheckpoint,
    pub log: Vec<LogRow>,
}

fn batch_indices(n: usize, batch: usize, seed: u64, iteration: u64) -> Vec<usize> {
    let mut rng = rng::stream(seed, Domain::Batch, iteration);
    if batch <= n {
        index::sample(&mut rng, n, batch).into_vec()
    } else {
        (0..batch).map(|_| rng.random_range(0..n)).collect()
    }
}

fn validation_score(
    ckpt: &ModelCheckpoint,
    validation: &Table,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<f64> {
    let seed = rng::key(cfg.seed, Domain::Validation, iteration as u64);
    let z = match ckpt.regime {
        Regime::Ddpm => ddpm_sample(&ckpt.denoiser, &ckpt.schedule, cfg.eval_rows, seed, cfg.exec)?,
        Regime::Flow => flow_sample(&ckpt.denoiser, ckpt.flow_steps, cfg.eval_rows, seed, cfg.exec)?,
    };
    let syn = ckpt.encoder.decode(&ckpt.encoder.wrap(z)?)?.table;
    match cfg.val_metric {
        ValMetric::Cde => cde(validation, &syn),
        ValMetric::Pcc => pcc(validation, &syn, BinningSpec::default()),
    }
}

/// Fit the encoder on the training split, train the denoiser, and return the
/// checkpoint whose parameters scored best on the validation split (the final
/// parameters when the validation split is empty).
pub fn train(splits: &Splits, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let table = &splits.train;
    if table.is_empty() {
        return Err(Error::EmptyTable("training split has no rows".into()));
    }
    let encoder = TableEncoder::fit(table, cfg.codec, cfg.n_quantiles, cfg.seed)?;
    let data: Array2<f32> = encoder.encode(table)?.data.mapv(|v| v as f32);
    let net_cfg = DenoiserConfig::scaled(encoder.width(), cfg.d_t);
    let mut net = Denoiser::<f32>::new(net_cfg, cfg.seed)?;
    let mut adam = AdamState::new(
        &net.params,
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
    );
    let schedule = cfg.schedule()?;
    info!(
        "training {} on {} rows, width {}, {} parameters",
        cfg.regime,
        data.nrows(),
        encoder.width(),
        net.params.n_params()
    );

    let mut ckpt = ModelCheckpoint {
        encoder,
        regime: cfg.regime,
        schedule,
        flow_steps: cfg.flow_steps,
        denoiser: net.clone(),
        meta: TrainingMeta {
            seed: cfg.seed,
            iterations: cfg.iterations,
            best_iteration: 0,
            val_score: None,
            skipped_steps: 0,
            final_loss: f64::NAN,
            config: cfg.clone(),
        },
    };
    let validate = !splits.validation.is_empty();
    let mut best: Option<f64> = None;
    let mut log = Vec::new();
    let (mut acc, mut count) = (0.0, 0usize);

    for it in 1..=cfg.iterations {
        let idx = batch_indices(data.nrows(), cfg.batch, cfg.seed, it as u64);
        let z0 = data.select(Axis(0), &idx);
        let out = match cfg.regime {
            Regime::Ddpm => ddpm_loss(&net, z0.view(), &ckpt.schedule, cfg.seed, it as u64, cfg.shard_rows, cfg.exec),
            Regime::Flow => flow_loss(&net, z0.view(), cfg.seed, it as u64, cfg.shard_rows, cfg.exec),
        };
        let out = match out {
            Ok(o) if o.loss <= DIVERGENCE_LOSS => o,
            Ok(o) => return Err(Error::Diverged { iteration: it, loss: o.loss }),
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { iteration: it, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        if !adam_step(&mut net.params, &out.grads, &mut adam) {
            debug!("iteration {it}: non-finite gradient, step skipped");
        }
        acc += out.loss;
        count += 1;
        ckpt.meta.final_loss = out.loss;

        let eval_now = validate && (it % cfg.eval_every == 0 || it == cfg.iterations);
        if it % cfg.log_every == 0 || eval_now || it == cfg.iterations {
            let mut row = LogRow {
                iteration: it,
                loss: acc / count as f64,
                val_score: None,
            };
            if eval_now {
                let candidate = ModelCheckpoint {
                    denoiser: net.clone(),
                    ..ckpt.clone()
                };
                let score = validation_score(&candidate, &splits.validation, cfg, it)?;
                row.val_score = Some(score);
                if best.is_none_or(|b| score > b) {
                    best = Some(score);
                    ckpt.denoiser = candidate.denoiser;
                    ckpt.meta.best_iteration = it;
                    ckpt.meta.val_score = Some(score);
                }
                info!("iteration {it}: loss {:.5}, validation {score:.4}", row.loss);
            } else {
                debug!("iteration {it}: loss {:.5}", row.loss);
            }
            log.push(row);
            acc = 0.0;
            count = 0;
        }
    }
    if !validate {
        ckpt.denoiser = net;
        ckpt.meta.best_iteration = cfg.iterations;
    }
    ckpt.meta.skipped_steps = adam.skipped;
    Ok(TrainOutcome { checkpoint: ckpt, log })
}
