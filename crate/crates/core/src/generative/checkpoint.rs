use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::TrainConfig;
use super::{ddpm_sample, flow_sample, NoiseSchedule, Regime};
use crate::dataset::{Table, TableSchema};
use crate::denoiser::{Denoiser, DenoiserConfig, DenoiserParams};
use crate::par::Exec;
use crate::transforms::{CategoricalCodec, Codec, ColumnQuantiles, QuantileMap, TableEncoder};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"TREP1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub iterations: usize,
    /// Iteration whose parameters were kept.
    pub best_iteration: usize,
    pub val_score: Option<f64>,
    pub skipped_steps: u64,
    pub final_loss: f64,
    pub config: TrainConfig,
}

/// Everything needed to sample: encoder, network, sampler settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub encoder: TableEncoder,
    pub regime: Regime,
    pub schedule: NoiseSchedule,
    pub flow_steps: usize,
    pub denoiser: Denoiser<f32>,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QuantileHeader {
    n_quantiles: usize,
    clip: f64,
    constant: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema: TableSchema,
    codec: Codec,
    quantiles: Option<QuantileHeader>,
    regime: Regime,
    schedule: NoiseSchedule,
    flow_steps: usize,
    denoiser: DenoiserConfig,
    meta: TrainingMeta,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt("truncated payload"))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| corrupt("size overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| corrupt("size overflow"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

impl ModelCheckpoint {
    /// `TREP1`, manifest length (u64 LE), JSON manifest, then the quantile
    /// grid and per-column quantiles (f64 LE) and the denoiser tensors
    /// (f32 LE, declaration order).
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let q = self.encoder.quantiles.as_ref();
        let manifest = Manifest {
            schema: self.encoder.schema.clone(),
            codec: self.encoder.codec.codec,
            quantiles: q.map(|q| QuantileHeader {
                n_quantiles: q.references.len(),
                clip: q.clip,
                constant: q.columns.iter().map(|c| c.constant).collect(),
            }),
            regime: self.regime,
            schedule: self.schedule.clone(),
            flow_steps: self.flow_steps,
            denoiser: self.denoiser.config.clone(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(json.len() + 4 * self.denoiser.params.n_params() + 64);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        if let Some(q) = q {
            for v in q.references.iter().chain(q.columns.iter().flat_map(|c| &c.quantiles)) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for t in self.denoiser.params.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(CHECKPOINT_MAGIC.len()).ok() != Some(&CHECKPOINT_MAGIC[..]) {
            return Err(corrupt("missing TREP1 magic"));
        }
        let len = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let len = usize::try_from(len).map_err(|_| corrupt("manifest length overflow"))?;
        let manifest: Manifest =
            serde_json::from_slice(r.take(len)?).map_err(|e| corrupt(format!("manifest: {e}")))?;
        let quantiles = match &manifest.quantiles {
            Some(h) => {
                let references = r.f64s(h.n_quantiles)?;
                let columns = h
                    .constant
                    .iter()
                    .map(|&constant| {
                        Ok(ColumnQuantiles {
                            quantiles: r.f64s(h.n_quantiles)?,
                            constant,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(QuantileMap {
                    references,
                    columns,
                    clip: h.clip,
                })
            }
            None => None,
        };
        let flat = r.f32s(manifest.denoiser.n_params())?;
        if r.at != bytes.len() {
            return Err(corrupt("trailing bytes after tensors"));
        }
        let params = DenoiserParams::from_flat(&manifest.denoiser, &flat)?;
        let denoiser = Denoiser::from_params(manifest.denoiser, params)?;
        let codec = CategoricalCodec::for_schema(manifest.codec, &manifest.schema)?;
        let encoder = TableEncoder {
            schema: manifest.schema,
            quantiles,
            codec,
        };
        if encoder.width() != denoiser.config.d_in {
            return Err(corrupt("denoiser width does not match the encoder"));
        }
        Ok(ModelCheckpoint {
            encoder,
            regime: manifest.regime,
            schedule: manifest.schedule,
            flow_steps: manifest.flow_steps,
            denoiser,
            meta: manifest.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn schema(&self) -> &TableSchema {
        &self.encoder.schema
    }
}

/// A decoded synthetic table plus categorical decode diagnostics.
#[derive(Debug, Clone)]
pub struct Sampled {
    pub table: Table,
    /// Per categorical column, fraction of cells cast to index 0.
    pub ooi_rate: Vec<f64>,
    pub cast_counts: Vec<usize>,
}

/// Sample `n_rows` encoded rows with the checkpoint's regime and decode them.
pub fn sample_table(ckpt: &ModelCheckpoint, n_rows: usize, seed: u64, exec: Exec) -> Result<Sampled> {
    let z = match ckpt.regime {
        Regime::Ddpm => ddpm_sample(&ckpt.denoiser, &ckpt.schedule, n_rows, seed, exec)?,
        Regime::Flow => flow_sample(&ckpt.denoiser, ckpt.flow_steps, n_rows, seed, exec)?,
    };
    let decoded = ckpt.encoder.decode(&ckpt.encoder.wrap(z)?)?;
    let ooi_rate = decoded
        .cast_counts
        .iter()
        .map(|&c| if n_rows == 0 { 0.0 } else { c as f64 / n_rows as f64 })
        .collect();
    Ok(Sampled {
        table: decoded.table,
        ooi_rate,
        cast_counts: decoded.cast_counts,
    })
}
