//! Command-line arguments, config files, and their merge.
//!
//! A `--config` file (TOML, or JSON when the extension is `.json`) supplies
//! defaults for the same keys as the long flags; explicit flags win. Unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tabsynth::generative::{Regime, TrainConfig, ValMetric};
use tabsynth::transforms::CodecKind;
use tabsynth::Exec;

use crate::{CliError, CliResult, EvalJob, SynSource, TrainJob};

#[derive(Debug, Parser)]
#[command(name = "tabsynth", version, about = "Synthesize mixed-type tables with diffusion or flow matching")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Infer a schema JSON from a CSV file.
    Infer(InferArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Draw synthetic rows from a checkpoint.
    Sample(SampleArgs),
    /// Score synthetic data against real data.
    Eval(EvalArgs),
    /// Score variance at the singular points of the one-hot simplex.
    Geometry(GeometryArgs),
}

fn parse_val_metric(s: &str) -> Result<ValMetric, String> {
    serde_json::from_value(Value::String(s.to_ascii_lowercase())).map_err(|_| format!("expected cde or pcc, got `{s}`"))
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Numeric columns with at most this many distinct values are categorical.
    #[arg(long)]
    pub categorical_threshold: Option<usize>,
    /// Target column (default: the last column).
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Training log CSV (iteration, loss, val_score).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Real test file; without it the data is split train/validation/test.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Write the train/validation/test splits into this directory.
    #[arg(long)]
    pub splits_out: Option<PathBuf>,
    /// Split ratio, e.g. `0.8,0.1,0.1`.
    #[arg(long, value_delimiter = ',')]
    pub ratio: Option<Vec<f64>>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Start from the full-size hyperparameters instead of the desk-scale ones.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub paper_scale: bool,
    #[arg(long)]
    pub regime: Option<Regime>,
    #[arg(long)]
    pub codec: Option<CodecKind>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Denoiser width; hidden layers are `[d_t, 2d_t, 2d_t, d_t]`.
    #[arg(long)]
    pub d_t: Option<usize>,
    #[arg(long)]
    pub n_quantiles: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub eval_rows: Option<usize>,
    #[arg(long, value_parser = parse_val_metric)]
    pub val_metric: Option<ValMetric>,
    #[arg(long)]
    pub flow_steps: Option<usize>,
    #[arg(long)]
    pub ddpm_steps: Option<usize>,
    #[arg(long)]
    pub shard_rows: Option<usize>,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Number of rows.
    #[arg(long, short)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    /// Real rows the generator was trained on.
    #[arg(long)]
    pub real: Option<PathBuf>,
    /// Held-out real rows; enables the membership attack and MLE.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Synthetic CSV files (repeatable).
    #[arg(long)]
    pub syn: Option<Vec<PathBuf>>,
    /// Sample from this checkpoint once per seed instead of reading files.
    #[arg(long, conflicts_with = "syn")]
    pub checkpoint: Option<PathBuf>,
    /// Rows per sampled table (default: as many as the real table).
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryArgs {
    /// Number of categories (2..=12).
    #[arg(long, short)]
    pub k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

/// Parse a config file into a JSON object.
pub fn read_config(path: &Path) -> CliResult<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| tabsynth::Error::io(path, e))?;
    let value: Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    };
    match value {
        Value::Object(map) => Ok(map),
        _ => Err(CliError::Config(format!("{}: expected a table of keys", path.display()))),
    }
}

/// Overlay the flags that were given onto the config file's values.
pub fn merge<T>(flags: &T, config: Option<&Path>) -> CliResult<T>
where
    T: Serialize + DeserializeOwned,
{
    let Some(path) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(flags).expect("args serialise"))
            .expect("args round-trip"));
    };
    let mut merged = read_config(path)?;
    let Value::Object(given) = serde_json::to_value(flags).expect("args serialise") else {
        unreachable!("args serialise to an object")
    };
    for (k, v) in given {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn required<T: Clone>(v: &Option<T>, name: &str) -> CliResult<T> {
    v.clone().ok_or_else(|| CliError::Usage(format!("missing --{}", name.replace('_', "-"))))
}

impl InferArgs {
    pub fn resolve(&self) -> CliResult<(PathBuf, PathBuf, usize, Option<String>)> {
        let a = merge(self, self.config.as_deref())?;
        Ok((
            required(&a.data, "data")?,
            required(&a.out, "out")?,
            a.categorical_threshold.unwrap_or(20),
            a.target,
        ))
    }
}

impl TrainArgs {
    pub fn resolve(&self, exec: Exec) -> CliResult<TrainJob> {
        let a = merge(self, self.config.as_deref())?;
        let regime = a.regime.unwrap_or(Regime::Flow);
        let base = if a.paper_scale {
            TrainConfig::full_scale(regime)
        } else {
            TrainConfig::desk(regime)
        };
        let config = TrainConfig {
            regime,
            codec: a.codec.unwrap_or(base.codec),
            iterations: a.iterations.unwrap_or(base.iterations),
            batch: a.batch.unwrap_or(base.batch),
            lr: a.lr.unwrap_or(base.lr),
            weight_decay: a.weight_decay.unwrap_or(base.weight_decay),
            seed: a.seed.unwrap_or(base.seed),
            d_t: a.d_t.unwrap_or(base.d_t),
            n_quantiles: a.n_quantiles.unwrap_or(base.n_quantiles),
            eval_every: a.eval_every.unwrap_or(base.eval_every),
            eval_rows: a.eval_rows.unwrap_or(base.eval_rows),
            val_metric: a.val_metric.unwrap_or(base.val_metric),
            flow_steps: a.flow_steps.unwrap_or(base.flow_steps),
            ddpm_steps: a.ddpm_steps.unwrap_or(base.ddpm_steps),
            shard_rows: a.shard_rows.unwrap_or(base.shard_rows),
            log_every: a.log_every.unwrap_or(base.log_every),
            exec,
        };
        config.validate()?;
        let ratio = match a.ratio.as_deref() {
            None => (0.8, 0.1, 0.1),
            Some(&[t, v, s]) => (t, v, s),
            Some(other) => return Err(CliError::Usage(format!("--ratio needs three values, got {}", other.len()))),
        };
        Ok(TrainJob {
            data: required(&a.data, "data")?,
            schema: required(&a.schema, "schema")?,
            checkpoint: required(&a.checkpoint, "checkpoint")?,
            log: a.log,
            test: a.test,
            splits_out: a.splits_out,
            ratio,
            split_seed: a.split_seed.unwrap_or(config.seed),
            config,
        })
    }
}

impl SampleArgs {
    pub fn resolve(&self) -> CliResult<(PathBuf, usize, u64, PathBuf)> {
        let a = merge(self, self.config.as_deref())?;
        Ok((
            required(&a.checkpoint, "checkpoint")?,
            required(&a.n, "n")?,
            a.seed.unwrap_or(0),
            required(&a.out, "out")?,
        ))
    }
}

impl EvalArgs {
    pub fn resolve(&self, exec: Exec) -> CliResult<EvalJob> {
        let a = merge(self, self.config.as_deref())?;
        let syn = match (a.syn, a.checkpoint) {
            (Some(_), Some(_)) => return Err(CliError::Usage("give either --syn or --checkpoint".into())),
            (Some(files), None) => SynSource::Files(files),
            (None, Some(path)) => SynSource::Checkpoint { path, rows: a.rows },
            (None, None) => return Err(CliError::Usage("missing --syn or --checkpoint".into())),
        };
        Ok(EvalJob {
            real: required(&a.real, "real")?,
            holdout: a.holdout,
            schema: required(&a.schema, "schema")?,
            syn,
            seeds: a.seeds.unwrap_or(20),
            out_json: required(&a.out_json, "out_json")?,
            out_csv: required(&a.out_csv, "out_csv")?,
            exec,
        })
    }
}

impl GeometryArgs {
    pub fn resolve(&self) -> CliResult<(usize, f64, f64, PathBuf)> {
        let a = merge(self, self.config.as_deref())?;
        Ok((
            required(&a.k, "k")?,
            a.alpha.unwrap_or(1.0),
            a.sigma.unwrap_or(0.2),
            required(&a.out, "out")?,
        ))
    }
}
