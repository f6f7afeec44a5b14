//! Singular-point structure of one-hot representations under Gaussian noise.
//!
//! A noised one-hot sample `x ~ N(α e_k, σ² I)` has conditional score
//! `g_k(x) = (α e_k − x) / σ²`. Where `x` is equidistant from several one-hot
//! vectors the posterior over `k` is spread out and the posterior-weighted
//! variance of `g_k` stays large; this module computes that variance exactly
//! (log-space posterior) and in closed form at minimal singular points.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::report::{Direction, MetricReport};
use crate::rng::{self, Domain};
use crate::{Error, Result};

/// Largest K accepted by [`singular_report`].
pub const MAX_REPORT_K: usize = 12;

/// Relative tolerance for treating two distances as equal.
pub const EQUIDISTANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularConfig {
    pub k: usize,
    /// Sorted, distinct indices `S ⊆ {0..K-1}` with `|S| ≥ 2`.
    pub subset: Vec<usize>,
    pub alpha: f64,
    pub sigma: f64,
}

impl SingularConfig {
    pub fn new(k: usize, mut subset: Vec<usize>, alpha: f64, sigma: f64) -> Result<Self> {
        subset.sort_unstable();
        subset.dedup();
        if k < 2 || subset.len() < 2 || subset.iter().any(|&i| i >= k) {
            return Err(Error::invalid(format!(
                "need 2 <= |S| <= K with indices below K (K={k}, S={subset:?})"
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite() && alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid("alpha and sigma must be positive and finite"));
        }
        Ok(SingularConfig {
            k,
            subset,
            alpha,
            sigma,
        })
    }

    /// Subset encoded as a bitmask (bit i set for i ∈ S).
    pub fn from_mask(k: usize, mask: u64, alpha: f64, sigma: f64) -> Result<Self> {
        let subset = (0..k).filter(|i| mask >> i & 1 == 1).collect();
        Self::new(k, subset, alpha, sigma)
    }

    pub fn n(&self) -> usize {
        self.subset.len()
    }
}

/// Prior over the categories of `S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PriorSpec {
    Uniform,
    /// One positive weight per element of `S`, summing to 1.
    Categorical(Vec<f64>),
}

impl PriorSpec {
    pub fn categorical(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("prior weights must be positive and sum to 1"));
        }
        Ok(PriorSpec::Categorical(weights))
    }

    fn log_weights(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            PriorSpec::Uniform => Ok(vec![-(n as f64).ln(); n]),
            PriorSpec::Categorical(w) if w.len() == n => Ok(w.iter().map(|v| v.ln()).collect()),
            PriorSpec::Categorical(w) => Err(Error::invalid(format!(
                "prior has {} weights for a subset of {n}",
                w.len()
            ))),
        }
    }
}

/// Centroid of the one-hot vectors indexed by `S`.
pub fn minimal_singular_point(cfg: &SingularConfig) -> Vec<f64> {
    let mut x = vec![0.0; cfg.k];
    let w = 1.0 / cfg.n() as f64;
    for &i in &cfg.subset {
        x[i] = w;
    }
    x
}

/// `Σ_{n=2..K} C(K, n) = 2^K − (K + 1)`.
pub fn count_minimal_singular_points(k: usize) -> Result<u64> {
    if !(2..=62).contains(&k) {
        return Err(Error::invalid(format!("K={k} outside 2..=62")));
    }
    Ok((1u64 << k) - (k as u64 + 1))
}

/// Count subsets of size ≥ 2 by walking every bitmask.
pub fn enumerate_minimal_singular_points(k: usize) -> Result<u64> {
    if !(2..=30).contains(&k) {
        return Err(Error::invalid(format!("enumeration limited to 2 <= K <= 30, got {k}")));
    }
    Ok((0u64..1 << k).filter(|m| m.count_ones() >= 2).count() as u64)
}

/// Dimension of the singular hyperplane `H_S` for `|S| = n`.
pub fn hyperplane_dim(k: usize, n: usize) -> Result<usize> {
    if n < 2 || n > k {
        return Err(Error::invalid(format!("need 2 <= n <= K (n={n}, K={k})")));
    }
    Ok(k - n + 1)
}

/// `α² / σ⁴ · (n − 1) / n`; `n = 1` gives 0.
pub fn closed_form_variance(alpha: f64, sigma: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    alpha * alpha / sigma.powi(4) * (n - 1) as f64 / n as f64
}

pub fn score_variance_closed_form(cfg: &SingularConfig) -> f64 {
    closed_form_variance(cfg.alpha, cfg.sigma, cfg.n())
}

fn sq_dist_to_mode(x: &[f64], k: usize, alpha: f64) -> f64 {
    x.iter()
        .enumerate()
        .map(|(i, &xi)| {
            let d = if i == k { xi - alpha } else { xi };
            d * d
        })
        .sum()
}

/// Posterior `q(e_k | x)` for `k ∈ S`, computed with max-subtracted logs.
pub fn posterior(cfg: &SingularConfig, prior: &PriorSpec, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != cfg.k {
        return Err(Error::Shape(format!("point has {} coordinates, K={}", x.len(), cfg.k)));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("query point".into()));
    }
    let logw = prior.log_weights(cfg.n())?;
    let two_var = 2.0 * cfg.sigma * cfg.sigma;
    let logits: Vec<f64> = cfg
        .subset
        .iter()
        .zip(&logw)
        .map(|(&k, lw)| lw - sq_dist_to_mode(x, k, cfg.alpha) / two_var)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut q: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= total);
    Ok(q)
}

/// Exact posterior-weighted variance `Σ_k q_k ‖g_k(x) − ḡ(x)‖²` over `k ∈ S`.
pub fn score_variance_exact(cfg: &SingularConfig, prior: &PriorSpec, x: &[f64]) -> Result<f64> {
    let q = posterior(cfg, prior, x)?;
    let s2 = cfg.sigma * cfg.sigma;
    // g_k − ḡ only differs in the coordinates of S: α(e_k − Σ q_m e_m)/σ²,
    // the −x/σ² parts cancel.
    let mut mean = vec![0.0; cfg.n()];
    for (m, qm) in q.iter().enumerate() {
        mean[m] = cfg.alpha * qm / s2;
    }
    let var = q
        .iter()
        .enumerate()
        .map(|(k, qk)| {
            let dist: f64 = mean
                .iter()
                .enumerate()
                .map(|(m, gm)| {
                    let gk = if m == k { cfg.alpha / s2 } else { 0.0 };
                    (gk - gm).powi(2)
                })
                .sum();
            qk * dist
        })
        .sum();
    Ok(var)
}

/// Mean ± standard error of a sample statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Exact variance averaged over points `x + jitter · ξ`, `ξ ~ N(0, I)`.
///
/// With `jitter = 0` every draw equals the exact value at `x`.
pub fn score_variance_empirical(
    cfg: &SingularConfig,
    prior: &PriorSpec,
    x: &[f64],
    jitter: f64,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    if samples < 10_000 {
        return Err(Error::invalid("at least 10^4 samples required"));
    }
    let mut rng = rng::stream(seed, Domain::Eval, cfg.k as u64);
    let mut point = vec![0.0; x.len()];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        for (p, &xi) in point.iter_mut().zip(x) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *p = xi + jitter * z;
        }
        let v = score_variance_exact(cfg, prior, &point)?;
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(Estimate {
        mean,
        stderr: (var / n).sqrt(),
        samples,
    })
}

/// Indices of the one-hot vectors nearest to `x` (equal within tolerance).
pub fn nearest_one_hots(x: &[f64]) -> Vec<usize> {
    let d: Vec<f64> = (0..x.len()).map(|k| sq_dist_to_mode(x, k, 1.0).sqrt()).collect();
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    (0..x.len())
        .filter(|&k| (d[k] - min).abs() < EQUIDISTANCE_TOL * (1.0 + min))
        .collect()
}

/// Whether `x` is equidistant from every one-hot vector of `S`.
pub fn on_hyperplane(x: &[f64], subset: &[usize]) -> bool {
    let d: Vec<f64> = subset.iter().map(|&k| sq_dist_to_mode(x, k, 1.0).sqrt()).collect();
    d.iter().all(|dk| (dk - d[0]).abs() < EQUIDISTANCE_TOL * (1.0 + d[0]))
}

/// One line of the singular-point table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularRow {
    pub k: usize,
    pub n: usize,
    pub subset_id: u64,
    pub closed_form: f64,
    pub exact: f64,
}

impl SingularRow {
    pub fn abs_err(&self) -> f64 {
        (self.closed_form - self.exact).abs()
    }
}

/// Closed-form vs exact variance at every minimal singular point for `k ≤ 12`.
pub fn singular_rows(k: usize, alpha: f64, sigma: f64) -> Result<Vec<SingularRow>> {
    if !(2..=MAX_REPORT_K).contains(&k) {
        return Err(Error::invalid(format!("K={k} outside 2..={MAX_REPORT_K}")));
    }
    (0u64..1 << k)
        .filter(|m| m.count_ones() >= 2)
        .map(|mask| {
            let cfg = SingularConfig::from_mask(k, mask, alpha, sigma)?;
            let x = minimal_singular_point(&cfg);
            Ok(SingularRow {
                k,
                n: cfg.n(),
                subset_id: mask,
                closed_form: score_variance_closed_form(&cfg),
                exact: score_variance_exact(&cfg, &PriorSpec::Uniform, &x)?,
            })
        })
        .collect()
}

/// Write the singular-point table as CSV and return summary metrics.
pub fn singular_report<W: Write>(k: usize, alpha: f64, sigma: f64, out: W) -> Result<MetricReport> {
    let rows = singular_rows(k, alpha, sigma)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["K", "n", "subset_id", "closed_form", "exact", "abs_err"])?;
    for r in &rows {
        w.write_record([
            r.k.to_string(),
            r.n.to_string(),
            r.subset_id.to_string(),
            format!("{:?}", r.closed_form),
            format!("{:?}", r.exact),
            format!("{:?}", r.abs_err()),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<geometry csv>", e))?;
    let max_err = rows.iter().map(SingularRow::abs_err).fold(0.0, f64::max);
    Ok(MetricReport::single([
        ("rows".to_string(), rows.len() as f64, Direction::None),
        ("max_abs_err".to_string(), max_err, Direction::Lower),
    ]))
}
