use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{design, numeric_stats};
use crate::dataset::Table;
use crate::rng::{self, Domain};
use crate::{Error, Result};

/// Area under the ROC curve by the Mann–Whitney rank statistic, midranks for ties.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 || scores.len() != labels.len() {
        return Err(Error::invalid("auc needs both classes and matching lengths"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mid;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C2stConfig {
    pub iterations: usize,
    pub l2: f64,
    pub folds: usize,
}

impl Default for C2stConfig {
    fn default() -> Self {
        C2stConfig {
            iterations: 500,
            l2: 1e-3,
            folds: 5,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Full-batch gradient descent on the L2-regularised logistic loss.
/// The last column of `x` is the intercept and is not penalised.
fn fit_logistic(x: &Array2<f64>, y: &Array1<f64>, cfg: &C2stConfig) -> Array1<f64> {
    let n = x.nrows() as f64;
    let d = x.ncols();
    // 1/L with L = ¼·tr(XᵀX)/n + λ bounding the Hessian
    let trace = x.iter().map(|v| v * v).sum::<f64>() / n;
    let lr = 1.0 / (0.25 * trace + cfg.l2);
    let mut w = Array1::zeros(d);
    for _ in 0..cfg.iterations {
        let p = x.dot(&w).mapv(sigmoid);
        let mut g = x.t().dot(&(p - y)) / n;
        for k in 0..d - 1 {
            g[k] += cfg.l2 * w[k];
        }
        w.scaled_add(-lr, &g);
    }
    w
}

/// Detection score `max(0, 1 − 2·(AUC − 0.5))` of a cross-validated logistic
/// classifier separating real (label 1) from synthetic (label 0) rows.
pub fn c2st(real: &Table, syn: &Table, seed: u64, cfg: &C2stConfig) -> Result<f64> {
    if real.schema != syn.schema {
        return Err(Error::Schema("real and synthetic tables have different schemas".into()));
    }
    if real.n_rows() < 50 || syn.n_rows() < 50 {
        return Err(Error::invalid("c2st needs at least 50 rows per side"));
    }
    if cfg.folds < 2 {
        return Err(Error::invalid("c2st needs at least 2 folds"));
    }
    let stats = numeric_stats(&[real, syn]);
    let both = Table::concat(&[real, syn])?;
    let feats = design(&both, &stats, 1.0, None);
    let n = feats.nrows();
    let x = ndarray::concatenate(Axis(1), &[feats.view(), Array2::ones((n, 1)).view()]).expect("same rows");
    let labels: Vec<bool> = (0..n).map(|i| i < real.n_rows()).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, Domain::Eval, 0xC257));
    let mut aucs = Vec::with_capacity(cfg.folds);
    for f in 0..cfg.folds {
        let (test, train): (Vec<usize>, Vec<usize>) = order.iter().enumerate().fold(
            (Vec::new(), Vec::new()),
            |(mut te, mut tr), (pos, &i)| {
                if pos % cfg.folds == f {
                    te.push(i)
                } else {
                    tr.push(i)
                }
                (te, tr)
            },
        );
        let y: Array1<f64> = train.iter().map(|&i| if labels[i] { 1.0 } else { 0.0 }).collect();
        let w = fit_logistic(&x.select(Axis(0), &train), &y, cfg);
        let scores = x.select(Axis(0), &test).dot(&w).to_vec();
        let test_labels: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
        aucs.push(auc(&scores, &test_labels)?);
    }
    let mean_auc = aucs.iter().sum::<f64>() / aucs.len() as f64;
    Ok((1.0 - 2.0 * (mean_auc - 0.5)).clamp(0.0, 1.0))
}
