use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{design, numeric_stats};
use crate::dataset::Table;
use crate::par::{blocks, Exec};
use crate::rng::{self, Domain};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiaResult {
    pub precision: f64,
    pub recall: f64,
    /// Members and non-members queried (each).
    pub n_per_side: usize,
}

/// Distance-threshold membership attack.
///
/// Each query row (train ∪ holdout) is scored by its standardised distance
/// to the nearest synthetic row; the closer half of the queries is predicted
/// to be members. Ties in distance are broken by a seeded random key. If the
/// two sides differ in size, the larger is subsampled to the smaller.
pub fn mia(train: &Table, holdout: &Table, syn: &Table, seed: u64, exec: Exec) -> Result<MiaResult> {
    if train.schema != syn.schema || holdout.schema != syn.schema {
        return Err(Error::Schema("membership attack needs one shared schema".into()));
    }
    if syn.is_empty() {
        return Err(Error::EmptyTable("no rows to evaluate".into()));
    }
    let n = train.n_rows().min(holdout.n_rows());
    if n == 0 {
        return Err(Error::EmptyTable("no rows to evaluate".into()));
    }
    let mut pick = rng::stream(seed, Domain::Eval, 0x3141);
    let mut balance = |t: &Table| -> Table {
        if t.n_rows() == n {
            t.clone()
        } else {
            let mut idx = index::sample(&mut pick, t.n_rows(), n).into_vec();
            idx.sort_unstable();
            t.take(&idx)
        }
    };
    let members = balance(train);
    let others = balance(holdout);

    let stats = numeric_stats(&[&members]);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let queries = Table::concat(&[&members, &others])?;
    let q = design(&queries, &stats, scale, None);
    let s = design(syn, &stats, scale, None);

    let per_block = exec.map_slice(&blocks(q.nrows(), 256), |&(lo, hi)| {
        (lo..hi)
            .map(|i| {
                let row = q.row(i);
                s.outer_iter()
                    .map(|srow| row.iter().zip(srow).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect::<Vec<f64>>()
    });
    let dist: Vec<f64> = per_block.concat();
    let ties: Vec<u64> = (0..dist.len()).map(|_| pick.random()).collect();
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(ties[a].cmp(&ties[b])));

    let predicted = dist.len() / 2;
    let tp = order[..predicted].iter().filter(|&&i| i < n).count();
    Ok(MiaResult {
        precision: tp as f64 / predicted.max(1) as f64,
        recall: tp as f64 / n as f64,
        n_per_side: n,
    })
}
