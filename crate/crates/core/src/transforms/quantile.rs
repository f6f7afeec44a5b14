//! Rank-based Gaussianisation of numeric columns.

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::index;
use serde::{Deserialize, Serialize};
use statrs::function::erf;

use crate::dataset::Table;
use crate::rng::{self, Domain};
use crate::{Error, Result};

pub const DEFAULT_N_QUANTILES: usize = 1000;
/// Forward outputs are clipped to `[-DEFAULT_CLIP, DEFAULT_CLIP]`.
pub const DEFAULT_CLIP: f64 = 5.2;
/// Columns longer than this are subsampled before fitting.
pub const SUBSAMPLE: usize = 100_000;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile function on `(0, 1)`.
pub fn normal_quantile(p: f64) -> f64 {
    let z = -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p);
    if !z.is_finite() || z.abs() > 30.0 {
        return z;
    }
    // erfc_inv alone is accurate to ~1e-11; one Newton step on Φ(z) = p.
    let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let step = (normal_cdf(z) - p) / density;
    if step.is_finite() {
        z - step
    } else {
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnQuantiles {
    /// Empirical quantiles at the shared reference grid, non-decreasing.
    pub quantiles: Vec<f64>,
    /// Zero interquantile range: forward maps everything to 0.
    pub constant: bool,
}

/// Per-column map from values to standard-normal scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileMap {
    /// Uniform grid on `[0, 1]` shared by every column.
    pub references: Vec<f64>,
    pub columns: Vec<ColumnQuantiles>,
    pub clip: f64,
}

fn linspace(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Linear-interpolated percentile of sorted data at `r ∈ [0, 1]`.
fn percentile(sorted: &[f64], r: f64) -> f64 {
    let pos = r * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let f = pos - lo as f64;
    sorted[lo] + f * (sorted[hi] - sorted[lo])
}

/// Fit one quantile map over all numeric columns of `table`.
///
/// `n_quantiles` is reduced to the row count when the table is smaller.
pub fn fit_quantile(table: &Table, n_quantiles: usize, seed: u64) -> Result<QuantileMap> {
    fit_quantile_columns(&table.numeric, n_quantiles, seed)
}

pub fn fit_quantile_columns(data: &Array2<f64>, n_quantiles: usize, seed: u64) -> Result<QuantileMap> {
    if n_quantiles < 2 {
        return Err(Error::invalid("n_quantiles must be at least 2"));
    }
    if data.ncols() == 0 {
        return Err(Error::invalid("no numeric columns to fit"));
    }
    let n = data.nrows();
    if n == 0 {
        return Err(Error::EmptyTable("cannot fit quantiles on zero rows".into()));
    }
    let rows: Vec<usize> = if n > SUBSAMPLE {
        let mut rng = rng::stream(seed, Domain::Quantile, n as u64);
        let mut idx = index::sample(&mut rng, n, SUBSAMPLE).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let nq = n_quantiles.min(rows.len()).max(2);
    let references = linspace(nq);
    let columns = data
        .axis_iter(Axis(1))
        .enumerate()
        .map(|(j, col)| {
            let mut sorted: Vec<f64> = rows.iter().map(|&i| col[i]).collect();
            if sorted.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("numeric column {j}")));
            }
            sorted.sort_by(f64::total_cmp);
            let mut quantiles: Vec<f64> = references.iter().map(|&r| percentile(&sorted, r)).collect();
            for i in 1..quantiles.len() {
                if quantiles[i] < quantiles[i - 1] {
                    quantiles[i] = quantiles[i - 1];
                }
            }
            let constant = quantiles[0] == quantiles[nq - 1];
            if constant {
                log::warn!("numeric column {j} is constant; encoded as zeros");
            }
            Ok(ColumnQuantiles { quantiles, constant })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantileMap {
        references,
        columns,
        clip: DEFAULT_CLIP,
    })
}

impl QuantileMap {
    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn n_quantiles(&self) -> usize {
        self.references.len()
    }

    /// Empirical CDF position of `x` in column `col`, ties at the midpoint
    /// of the tied reference range.
    pub fn cdf_position(&self, col: usize, x: f64) -> f64 {
        let q = &self.columns[col].quantiles;
        let refs = &self.references;
        let last = q.len() - 1;
        if x < q[0] {
            return 0.0;
        }
        if x > q[last] {
            return 1.0;
        }
        let lo = q.partition_point(|&v| v < x);
        let hi = q.partition_point(|&v| v <= x);
        if lo < hi {
            return 0.5 * (refs[lo] + refs[hi - 1]);
        }
        // q[lo - 1] < x < q[lo]
        let (a, b) = (lo - 1, lo);
        refs[a] + (x - q[a]) / (q[b] - q[a]) * (refs[b] - refs[a])
    }

    pub fn forward_value(&self, col: usize, x: f64) -> f64 {
        if self.columns[col].constant {
            return 0.0;
        }
        let p = self.cdf_position(col, x);
        if p <= 0.0 {
            -self.clip
        } else if p >= 1.0 {
            self.clip
        } else {
            normal_quantile(p).clamp(-self.clip, self.clip)
        }
    }

    pub fn inverse_value(&self, col: usize, z: f64) -> f64 {
        let q = &self.columns[col].quantiles;
        let last = q.len() - 1;
        if self.columns[col].constant {
            return q[0];
        }
        if z.is_nan() || z <= -self.clip {
            return q[0];
        }
        if z >= self.clip {
            return q[last];
        }
        let pos = normal_cdf(z) * last as f64;
        let i = (pos.floor() as usize).min(last - 1);
        let f = (pos - i as f64).clamp(0.0, 1.0);
        q[i] + f * (q[i + 1] - q[i])
    }

    /// Forward map of one column's values.
    pub fn forward(&self, col: usize, x: ArrayView1<f64>) -> Vec<f64> {
        x.iter().map(|&v| self.forward_value(col, v)).collect()
    }

    pub fn inverse(&self, col: usize, z: ArrayView1<f64>) -> Vec<f64> {
        z.iter().map(|&v| self.inverse_value(col, v)).collect()
    }

    /// Column range `(min, max)` seen at fit time.
    pub fn range(&self, col: usize) -> (f64, f64) {
        let q = &self.columns[col].quantiles;
        (q[0], q[q.len() - 1])
    }
}

/// Forward map of every column of `x` (N × D_cont).
pub fn quantile_forward(map: &QuantileMap, x: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_fn(x.raw_dim(), |(i, j)| map.forward_value(j, x[[i, j]]))
}

pub fn quantile_inverse(map: &QuantileMap, z: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_fn(z.raw_dim(), |(i, j)| map.inverse_value(j, z[[i, j]]))
}
