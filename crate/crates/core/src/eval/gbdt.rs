use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{auc, design, mle_metric_name, numeric_stats};
use crate::dataset::{Slot, Table, TaskKind};
use crate::{Error, Result};

/// Gradient-boosted trees for the utility (MLE) harness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub rounds: usize,
    pub depth: usize,
    pub learning_rate: f64,
    /// Candidate thresholds per feature, taken at training quantiles.
    pub max_bins: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    pub min_leaf: usize,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            rounds: 200,
            depth: 3,
            learning_rate: 0.1,
            max_bins: 32,
            lambda: 1.0,
            min_leaf: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: ArrayView1<f64>) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

struct Builder<'a> {
    thresholds: &'a [Vec<f64>],
    /// `codes[f][row]`: index of the first threshold `>= x`.
    codes: &'a [Vec<u16>],
    g: &'a [f64],
    h: &'a [f64],
    cfg: &'a GbdtConfig,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let g: f64 = rows.iter().map(|&r| self.g[r]).sum();
        let h: f64 = rows.iter().map(|&r| self.h[r]).sum();
        self.nodes.push(Node::Leaf(-g / (h + self.cfg.lambda)));
        self.nodes.len() - 1
    }

    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        if depth == 0 || rows.len() < 2 * self.cfg.min_leaf {
            return self.leaf(rows);
        }
        let gt: f64 = rows.iter().map(|&r| self.g[r]).sum();
        let ht: f64 = rows.iter().map(|&r| self.h[r]).sum();
        let lambda = self.cfg.lambda;
        let parent = gt * gt / (ht + lambda);
        let mut best: Option<(f64, usize, usize)> = None;
        for (f, thr) in self.thresholds.iter().enumerate() {
            if thr.is_empty() {
                continue;
            }
            let bins = thr.len() + 1;
            let mut gs = vec![0.0; bins];
            let mut hs = vec![0.0; bins];
            let mut cs = vec![0usize; bins];
            for &r in rows.iter() {
                let b = self.codes[f][r] as usize;
                gs[b] += self.g[r];
                hs[b] += self.h[r];
                cs[b] += 1;
            }
            let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0);
            for b in 0..thr.len() {
                gl += gs[b];
                hl += hs[b];
                cl += cs[b];
                let cr = rows.len() - cl;
                if cl < self.cfg.min_leaf || cr < self.cfg.min_leaf {
                    continue;
                }
                let (gr, hr) = (gt - gl, ht - hl);
                let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
                if gain > 1e-12 && best.is_none_or(|(bg, _, _)| gain > bg) {
                    best = Some((gain, f, b));
                }
            }
        }
        let Some((_, f, b)) = best else {
            return self.leaf(rows);
        };
        let mut mid = 0;
        for i in 0..rows.len() {
            if (self.codes[f][rows[i]] as usize) <= b {
                rows.swap(i, mid);
                mid += 1;
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(0.0));
        let (l, r) = rows.split_at_mut(mid);
        let left = self.build(l, depth - 1);
        let right = self.build(r, depth - 1);
        self.nodes[id] = Node::Split {
            feature: f,
            threshold: self.thresholds[f][b],
            left,
            right,
        };
        id
    }
}

/// A fitted boosted ensemble with one output per class (one for binary and
/// regression).
#[derive(Debug, Clone, PartialEq)]
pub struct Gbdt {
    base: Vec<f64>,
    trees: Vec<Vec<Tree>>,
    learning_rate: f64,
    task: TaskKind,
}

fn thresholds(column: ArrayView1<f64>, max_bins: usize) -> Vec<f64> {
    let mut v = column.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    if v.len() <= 1 {
        return Vec::new();
    }
    if v.len() <= max_bins {
        // midpoints between distinct values
        return v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    let mut out: Vec<f64> = (1..max_bins).map(|i| v[i * v.len() / max_bins]).collect();
    out.dedup();
    out
}

fn softmax_row(f: &[f64]) -> Vec<f64> {
    let m = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = f.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Gbdt {
    /// `y` holds class indices (classification) or target values.
    pub fn fit(x: &Array2<f64>, y: &[f64], task: TaskKind, n_classes: usize, cfg: &GbdtConfig) -> Result<Self> {
        let n = x.nrows();
        if n == 0 || y.len() != n {
            return Err(Error::invalid("boosting needs matching, non-empty rows and targets"));
        }
        let thr: Vec<Vec<f64>> = x.columns().into_iter().map(|c| thresholds(c, cfg.max_bins)).collect();
        let codes: Vec<Vec<u16>> = x
            .columns()
            .into_iter()
            .zip(&thr)
            .map(|(c, t)| c.iter().map(|&v| t.partition_point(|&e| e < v) as u16).collect())
            .collect();
        let outputs = if task == TaskKind::MulticlassClassification { n_classes } else { 1 };
        let base: Vec<f64> = match task {
            TaskKind::Regression => vec![y.iter().sum::<f64>() / n as f64],
            TaskKind::BinaryClassification => {
                let p = (y.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
                vec![(p / (1.0 - p)).ln()]
            }
            TaskKind::MulticlassClassification => (0..n_classes)
                .map(|k| {
                    let c = y.iter().filter(|&&v| v as usize == k).count() as f64;
                    ((c + 1.0) / (n as f64 + n_classes as f64)).ln()
                })
                .collect(),
        };
        let mut f: Vec<Vec<f64>> = vec![base.clone(); n];
        let mut trees: Vec<Vec<Tree>> = Vec::with_capacity(cfg.rounds);
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n];
        let mut rows: Vec<usize> = (0..n).collect();
        for _ in 0..cfg.rounds {
            let probs: Vec<Vec<f64>> = match task {
                TaskKind::MulticlassClassification => f.iter().map(|r| softmax_row(r)).collect(),
                _ => Vec::new(),
            };
            let mut round = Vec::with_capacity(outputs);
            for k in 0..outputs {
                for i in 0..n {
                    let (gi, hi) = match task {
                        TaskKind::Regression => (f[i][0] - y[i], 1.0),
                        TaskKind::BinaryClassification => {
                            let p = sigmoid(f[i][0]);
                            (p - y[i], (p * (1.0 - p)).max(1e-12))
                        }
                        TaskKind::MulticlassClassification => {
                            let p = probs[i][k];
                            let t = if y[i] as usize == k { 1.0 } else { 0.0 };
                            (p - t, (p * (1.0 - p)).max(1e-12))
                        }
                    };
                    g[i] = gi;
                    h[i] = hi;
                }
                let mut b = Builder {
                    thresholds: &thr,
                    codes: &codes,
                    g: &g,
                    h: &h,
                    cfg,
                    nodes: Vec::new(),
                };
                b.build(&mut rows, cfg.depth);
                let tree = Tree { nodes: b.nodes };
                for (i, fi) in f.iter_mut().enumerate() {
                    fi[k] += cfg.learning_rate * tree.predict(x.row(i));
                }
                round.push(tree);
            }
            trees.push(round);
        }
        Ok(Gbdt {
            base,
            trees,
            learning_rate: cfg.learning_rate,
            task,
        })
    }

    /// Raw margins, one vector per row.
    pub fn decision(&self, x: &Array2<f64>) -> Vec<Vec<f64>> {
        x.outer_iter()
            .map(|row| {
                let mut f = self.base.clone();
                for round in &self.trees {
                    for (k, t) in round.iter().enumerate() {
                        f[k] += self.learning_rate * t.predict(row);
                    }
                }
                f
            })
            .collect()
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }
}

/// Utility of synthetic rows for the schema's prediction task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleScore {
    pub task: TaskKind,
    /// AUC (binary), macro-F1 (multiclass) or RMSE on the standardised target.
    pub value: f64,
}

impl MleScore {
    pub fn metric_name(&self) -> &'static str {
        mle_metric_name(self.task)
    }
}

fn targets(t: &Table) -> Vec<f64> {
    match t.schema.slot_of(&t.schema.target.name).expect("validated target") {
        Slot::Numeric(i) => t.numeric.column(i).to_vec(),
        Slot::Categorical(i) => t.categorical.column(i).iter().map(|&c| c as f64).collect(),
    }
}

pub(crate) fn macro_f1(truth: &[usize], pred: &[usize]) -> f64 {
    let mut labels: Vec<usize> = truth.iter().chain(pred).copied().collect();
    labels.sort_unstable();
    labels.dedup();
    let f1: f64 = labels
        .iter()
        .map(|&c| {
            let tp = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p == c).count() as f64;
            let fp = truth.iter().zip(pred).filter(|&(&t, &p)| t != c && p == c).count() as f64;
            let fn_ = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p != c).count() as f64;
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fn_)
            }
        })
        .sum();
    f1 / labels.len() as f64
}

/// Train on `train` (typically synthetic), score on `test` (real).
pub fn mle(train: &Table, test: &Table, cfg: &GbdtConfig) -> Result<MleScore> {
    if train.schema != test.schema {
        return Err(Error::Schema("train and test tables have different schemas".into()));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyTable("no rows to evaluate".into()));
    }
    let schema = &train.schema;
    let task = schema.target.task;
    let stats = numeric_stats(&[train]);
    let target = schema.target.name.as_str();
    let xtr = design(train, &stats, 1.0, Some(target));
    let xte = design(test, &stats, 1.0, Some(target));
    let (ytr, yte) = (targets(train), targets(test));
    let n_classes = schema
        .columns
        .iter()
        .find(|c| c.name == target)
        .map_or(1, |c| c.cardinality().max(1));
    if task != TaskKind::Regression {
        let first = ytr[0];
        if ytr.iter().all(|&v| v == first) {
            return Err(Error::invalid("training target has a single class"));
        }
    }
    let value = match task {
        TaskKind::Regression => {
            let n = yte.len() as f64;
            let m = yte.iter().sum::<f64>() / n;
            let sd = (yte.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
            let z = |v: &f64| (v - m) / sd;
            let ytr_z: Vec<f64> = ytr.iter().map(z).collect();
            let model = Gbdt::fit(&xtr, &ytr_z, task, 1, cfg)?;
            let pred = model.decision(&xte);
            let mse = pred.iter().zip(&yte).map(|(p, y)| (p[0] - z(y)).powi(2)).sum::<f64>() / n;
            mse.sqrt()
        }
        TaskKind::BinaryClassification => {
            let model = Gbdt::fit(&xtr, &ytr, task, 2, cfg)?;
            let scores: Vec<f64> = model.decision(&xte).into_iter().map(|f| f[0]).collect();
            let labels: Vec<bool> = yte.iter().map(|&v| v >= 0.5).collect();
            auc(&scores, &labels)?
        }
        TaskKind::MulticlassClassification => {
            let model = Gbdt::fit(&xtr, &ytr, task, n_classes, cfg)?;
            let pred: Vec<usize> = model
                .decision(&xte)
                .iter()
                .map(|f| (0..f.len()).fold(0, |b, k| if f[k] > f[b] { k } else { b }))
                .collect();
            let truth: Vec<usize> = yte.iter().map(|&v| v as usize).collect();
            macro_f1(&truth, &pred)
        }
    };
    Ok(MleScore { task, value })
}
