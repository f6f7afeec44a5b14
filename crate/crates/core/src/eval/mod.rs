//! Fidelity, detectability, privacy and utility metrics for synthetic tables.
//!
//! Distances (`kst`, `tvd`, pair dissimilarities) are 0 for a perfect match;
//! the aggregates `cde` and `pcc` are scores where 1 is perfect.

mod detect;
mod gbdt;
mod privacy;

pub use detect::{auc, c2st, C2stConfig};
pub use gbdt::{mle, Gbdt, GbdtConfig, MleScore};
pub use privacy::{mia, MiaResult};

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataset::{Slot, Table, TableSchema, TaskKind};
use crate::par::Exec;
use crate::report::{Direction, MetricReport, SeedRow};
use crate::{Error, Result};

/// Two-sample Kolmogorov–Smirnov statistic `sup_x |F_a(x) − F_b(x)|`.
pub fn kst(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyTable("no rows to evaluate".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

fn pmf(codes: &[usize], size: usize) -> Vec<f64> {
    let mut p = vec![0.0; size];
    for &c in codes {
        p[c] += 1.0;
    }
    let n = codes.len().max(1) as f64;
    p.iter_mut().for_each(|v| *v /= n);
    p
}

/// Half L1 distance between two empirical PMFs of category codes.
pub fn tvd(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyTable("no rows to evaluate".into()));
    }
    let size = a.iter().chain(b).max().map_or(0, |m| m + 1);
    let (pa, pb) = (pmf(a, size), pmf(b, size));
    Ok(0.5 * pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// Pearson correlation; 0 when either column is constant.
pub fn pearson(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let (mx, my) = (x.sum() / n, y.sum() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// `½|ρ_real − ρ_syn|`.
pub fn pearson_dissimilarity(rho_real: f64, rho_syn: f64) -> f64 {
    0.5 * (rho_real - rho_syn).abs()
}

/// Half L1 distance between joint PMFs of two code pairs.
pub fn contingency(real: (&[usize], &[usize]), syn: (&[usize], &[usize])) -> Result<f64> {
    let width = real.1.iter().chain(syn.1).max().map_or(0, |m| m + 1);
    let joint = |a: &[usize], b: &[usize]| -> Vec<usize> { a.iter().zip(b).map(|(x, y)| x * width + y).collect() };
    if real.0.len() != real.1.len() || syn.0.len() != syn.1.len() {
        return Err(Error::Shape("pair columns differ in length".into()));
    }
    tvd(&joint(real.0, real.1), &joint(syn.0, syn.1))
}

/// How numeric columns are discretised for contingency scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningSpec {
    pub bins: usize,
}

impl Default for BinningSpec {
    fn default() -> Self {
        BinningSpec { bins: 20 }
    }
}

/// Interior bin edges, strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Binning {
    pub edges: Vec<f64>,
}

impl BinningSpec {
    /// Edges at the `i/bins` quantiles of `reference`; tied quantiles merge.
    pub fn fit(&self, reference: &[f64]) -> Result<Binning> {
        if self.bins < 2 {
            return Err(Error::invalid("at least 2 bins are required"));
        }
        if reference.is_empty() {
            return Err(Error::EmptyTable("no rows to evaluate".into()));
        }
        let mut sorted = reference.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut edges: Vec<f64> = Vec::with_capacity(self.bins - 1);
        for i in 1..self.bins {
            let e = sorted[(i * n / self.bins).min(n - 1)];
            if edges.last().is_none_or(|&l| e > l) && e > sorted[0] {
                edges.push(e);
            }
        }
        Ok(Binning { edges })
    }
}

impl Binning {
    /// Bin `b` holds `edges[b-1] <= x < edges[b]`.
    pub fn bin(&self, x: f64) -> usize {
        self.edges.partition_point(|&e| e <= x)
    }

    pub fn codes(&self, xs: impl IntoIterator<Item = f64>) -> Vec<usize> {
        xs.into_iter().map(|x| self.bin(x)).collect()
    }
}

fn check_schema(real: &Table, syn: &Table) -> Result<()> {
    if real.schema != syn.schema {
        return Err(Error::Schema("real and synthetic tables have different schemas".into()));
    }
    if real.is_empty() || syn.is_empty() {
        return Err(Error::EmptyTable("no rows to evaluate".into()));
    }
    Ok(())
}

/// `(column, 1 − KST or 1 − TVD)` for every schema column.
pub fn column_scores(real: &Table, syn: &Table) -> Result<Vec<(String, f64)>> {
    check_schema(real, syn)?;
    real.schema
        .columns
        .iter()
        .zip(real.schema.slots())
        .map(|(col, slot)| {
            let d = match slot {
                Slot::Numeric(i) => kst(&real.numeric.column(i).to_vec(), &syn.numeric.column(i).to_vec())?,
                Slot::Categorical(i) => tvd(&real.categorical.column(i).to_vec(), &syn.categorical.column(i).to_vec())?,
            };
            Ok((col.name.clone(), 1.0 - d))
        })
        .collect()
}

/// Column-wise density score: mean of [`column_scores`].
pub fn cde(real: &Table, syn: &Table) -> Result<f64> {
    let scores = column_scores(real, syn)?;
    Ok(scores.iter().map(|(_, s)| s).sum::<f64>() / scores.len() as f64)
}

/// `((column_a, column_b), dissimilarity)` for every unordered column pair.
pub fn pair_dissimilarities(real: &Table, syn: &Table, binning: BinningSpec) -> Result<Vec<((String, String), f64)>> {
    check_schema(real, syn)?;
    let schema = &real.schema;
    let slots = schema.slots();
    let mut codes: Vec<Option<(Vec<usize>, Vec<usize>)>> = Vec::with_capacity(slots.len());
    for slot in &slots {
        codes.push(match *slot {
            Slot::Categorical(i) => Some((real.categorical.column(i).to_vec(), syn.categorical.column(i).to_vec())),
            Slot::Numeric(_) => None,
        });
    }
    let mut binned = |j: usize| -> Result<(Vec<usize>, Vec<usize>)> {
        if let Some(c) = &codes[j] {
            return Ok(c.clone());
        }
        let Slot::Numeric(i) = slots[j] else { unreachable!() };
        let b = binning.fit(&real.numeric.column(i).to_vec())?;
        let pair = (b.codes(real.numeric.column(i).iter().copied()), b.codes(syn.numeric.column(i).iter().copied()));
        codes[j] = Some(pair.clone());
        Ok(pair)
    };
    let mut out = Vec::new();
    for a in 0..slots.len() {
        for b in a + 1..slots.len() {
            let d = match (slots[a], slots[b]) {
                (Slot::Numeric(i), Slot::Numeric(j)) => pearson_dissimilarity(
                    pearson(real.numeric.column(i), real.numeric.column(j)),
                    pearson(syn.numeric.column(i), syn.numeric.column(j)),
                ),
                _ => {
                    let (ra, sa) = binned(a)?;
                    let (rb, sb) = binned(b)?;
                    contingency((&ra, &rb), (&sa, &sb))?
                }
            };
            out.push(((schema.columns[a].name.clone(), schema.columns[b].name.clone()), d));
        }
    }
    Ok(out)
}

/// Pairwise correlation score `1 − mean dissimilarity`; 1 with fewer than two columns.
pub fn pcc(real: &Table, syn: &Table, binning: BinningSpec) -> Result<f64> {
    let pairs = pair_dissimilarities(real, syn, binning)?;
    if pairs.is_empty() {
        return Ok(1.0);
    }
    Ok(1.0 - pairs.iter().map(|(_, d)| d).sum::<f64>() / pairs.len() as f64)
}

/// Design matrix: numerics standardised with `(mean, sd)` per column,
/// categoricals one-hot scaled by `onehot_scale`.
pub(crate) fn design(table: &Table, stats: &[(f64, f64)], onehot_scale: f64, skip: Option<&str>) -> Array2<f64> {
    let schema = &table.schema;
    let cols: Vec<(usize, Slot)> = schema
        .columns
        .iter()
        .zip(schema.slots())
        .enumerate()
        .filter(|(_, (c, _))| Some(c.name.as_str()) != skip)
        .map(|(j, (_, s))| (j, s))
        .collect();
    let width: usize = cols
        .iter()
        .map(|&(j, s)| match s {
            Slot::Numeric(_) => 1,
            Slot::Categorical(_) => schema.columns[j].cardinality(),
        })
        .sum();
    let mut x = Array2::zeros((table.n_rows(), width));
    let mut at = 0;
    for &(j, slot) in &cols {
        match slot {
            Slot::Numeric(i) => {
                let (m, s) = stats[i];
                for (r, &v) in table.numeric.column(i).iter().enumerate() {
                    x[[r, at]] = (v - m) / s;
                }
                at += 1;
            }
            Slot::Categorical(i) => {
                for (r, &c) in table.categorical.column(i).iter().enumerate() {
                    x[[r, at + c]] = onehot_scale;
                }
                at += schema.columns[j].cardinality();
            }
        }
    }
    x
}

/// Mean and standard deviation of every numeric column (sd floored at 1e-12).
pub(crate) fn numeric_stats(tables: &[&Table]) -> Vec<(f64, f64)> {
    let n_num = tables[0].schema.n_numeric();
    (0..n_num)
        .map(|i| {
            let vals: Vec<f64> = tables.iter().flat_map(|t| t.numeric.column(i).to_vec()).collect();
            let n = vals.len().max(1) as f64;
            let m = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            (m, var.sqrt().max(1e-12))
        })
        .collect()
}

/// Real data a synthetic table is judged against.
#[derive(Debug, Clone, Copy)]
pub struct RealData<'a> {
    /// Rows the generator was trained on (fidelity reference, MIA members).
    pub train: &'a Table,
    /// Held-out real rows (MIA non-members, MLE test set); `None` skips both.
    pub holdout: Option<&'a Table>,
}

/// Options for [`full_report`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReportConfig {
    pub binning: BinningSpec,
    pub c2st: C2stConfig,
    pub gbdt: GbdtConfig,
    pub exec: Exec,
}

/// Metric directions used in reports.
pub fn metric_directions() -> BTreeMap<String, Direction> {
    [
        ("cde", Direction::Higher),
        ("pcc", Direction::Higher),
        ("c2st", Direction::Higher),
        ("mia_precision", Direction::Half),
        ("mia_recall", Direction::Half),
        ("mle_auc", Direction::Higher),
        ("mle_macro_f1", Direction::Higher),
        ("mle_rmse", Direction::Lower),
    ]
    .into_iter()
    .map(|(k, d)| (k.to_string(), d))
    .collect()
}

/// All metrics for one synthetic table under one seed.
pub fn seed_metrics(real: RealData, syn: &Table, seed: u64, cfg: &ReportConfig) -> Result<BTreeMap<String, f64>> {
    let mut m = BTreeMap::new();
    m.insert("cde".to_string(), cde(real.train, syn)?);
    m.insert("pcc".to_string(), pcc(real.train, syn, cfg.binning)?);
    m.insert("c2st".to_string(), c2st(real.train, syn, seed, &cfg.c2st)?);
    if let Some(holdout) = real.holdout {
        let r = mia(real.train, holdout, syn, seed, cfg.exec)?;
        m.insert("mia_precision".to_string(), r.precision);
        m.insert("mia_recall".to_string(), r.recall);
        let s = mle(syn, holdout, &cfg.gbdt)?;
        m.insert(s.metric_name().to_string(), s.value);
    }
    Ok(m)
}

/// Metrics for one synthetic table per seed, aggregated to mean ± stderr.
pub fn full_report(real: RealData, syn: &[(u64, &Table)], cfg: &ReportConfig) -> Result<MetricReport> {
    if syn.is_empty() {
        return Err(Error::invalid("no seeds to evaluate"));
    }
    let rows = cfg
        .exec
        .map_slice(syn, |(seed, table)| {
            seed_metrics(real, table, *seed, &ReportConfig { exec: Exec::Sequential, ..*cfg })
                .map(|values| SeedRow { seed: *seed, values })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_rows(rows, &metric_directions())
}

/// Name of the MLE metric for a task.
pub fn mle_metric_name(task: TaskKind) -> &'static str {
    match task {
        TaskKind::BinaryClassification => "mle_auc",
        TaskKind::MulticlassClassification => "mle_macro_f1",
        TaskKind::Regression => "mle_rmse",
    }
}

/// Schemas must agree column for column.
pub fn ensure_same_schema(a: &TableSchema, b: &TableSchema) -> Result<()> {
    if a != b {
        return Err(Error::Schema("schemas differ".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn kst_examples() {
        let a = [0.1, 0.5, 0.9];
        assert_eq!(kst(&a, &a).unwrap(), 0.0);
        assert_eq!(kst(&[0.0, 1.0], &[2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(kst(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]).unwrap(), 1.0 / 3.0);
        assert!(kst(&[], &a).is_err());
    }

    #[test]
    fn tvd_examples() {
        assert_eq!(tvd(&[0, 1], &[1, 0]).unwrap(), 0.0);
        assert_eq!(tvd(&[0, 0], &[1, 2]).unwrap(), 1.0);
        let p2 = [0, 0, 0, 0, 0, 0, 0, 0, 1, 1];
        assert_abs_diff_eq!(tvd(&[0, 1], &p2).unwrap(), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn pearson_examples() {
        assert_eq!(pearson_dissimilarity(1.0, -1.0), 1.0);
        assert_abs_diff_eq!(pearson_dissimilarity(0.6, 0.2), 0.2, epsilon = 1e-15);
        let x = array![1.0, 2.0, 3.0];
        assert_abs_diff_eq!(pearson(x.view(), (-&x).view()), -1.0, epsilon = 1e-15);
        assert_eq!(pearson(x.view(), array![5.0, 5.0, 5.0].view()), 0.0);
    }

    #[test]
    fn contingency_examples() {
        let ind = ([0, 0, 1, 1], [0, 1, 0, 1]);
        let cor = ([0, 1], [0, 1]);
        assert_abs_diff_eq!(contingency((&ind.0, &ind.1), (&cor.0, &cor.1)).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(contingency((&ind.0, &ind.1), (&ind.0, &ind.1)).unwrap(), 0.0);
        // syn lacks cell (1, 1)
        let d = contingency((&[1], &[1]), (&[0], &[0])).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn binning_edges_increase() {
        let data: Vec<f64> = (0..100).map(|i| (i / 10) as f64).collect();
        let b = BinningSpec::default().fit(&data).unwrap();
        assert!(b.edges.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(b.bin(-1.0), 0);
        assert_eq!(b.bin(100.0), b.edges.len());
        assert!(BinningSpec { bins: 1 }.fit(&data).is_err());
    }
}
