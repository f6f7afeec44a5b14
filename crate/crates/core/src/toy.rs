//! Small generated tables with known structure, used by tests and benches.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::{ColumnSpec, Table, TableSchema, TargetSpec, TaskKind};
use crate::rng::{self, Domain};

/// Two standard normal columns `x`, `y` with correlation `rho`, and a
/// three-way categorical `c` whose distribution depends on the sign of `x`.
pub fn correlated_mixed(n: usize, rho: f64, seed: u64) -> Table {
    let schema = TableSchema::new(
        vec![
            ColumnSpec::numeric("x"),
            ColumnSpec::numeric("y"),
            ColumnSpec::categorical("c", ["a", "b", "c"]),
        ],
        TargetSpec {
            name: "c".into(),
            task: TaskKind::MulticlassClassification,
        },
    )
    .expect("valid toy schema");
    let mut rng = rng::stream(seed, Domain::Eval, 0x70E);
    let mut numeric = Array2::zeros((n, 2));
    let mut categorical = Array2::zeros((n, 1));
    let tail = (1.0 - rho * rho).sqrt();
    for i in 0..n {
        let x: f64 = rng.sample(StandardNormal);
        let e: f64 = rng.sample(StandardNormal);
        numeric[[i, 0]] = x;
        numeric[[i, 1]] = rho * x + tail * e;
        let probs = if x > 0.0 { [0.7, 0.2, 0.1] } else { [0.1, 0.2, 0.7] };
        let u: f64 = rng.random();
        categorical[[i, 0]] = if u < probs[0] {
            0
        } else if u < probs[0] + probs[1] {
            1
        } else {
            2
        };
    }
    Table::new(schema, numeric, categorical).expect("consistent toy table")
}

/// One numeric column and one categorical column with `k` categories drawn
/// from a fixed skewed distribution (weights `1/(1 + c)` shifted by `x`).
pub fn wide_categorical(n: usize, k: usize, seed: u64) -> Table {
    let vocab: Vec<String> = (0..k).map(|c| format!("v{c:02}")).collect();
    let schema = TableSchema::new(
        vec![ColumnSpec::numeric("x"), ColumnSpec::categorical("c", vocab)],
        TargetSpec {
            name: "c".into(),
            task: TaskKind::MulticlassClassification,
        },
    )
    .expect("valid toy schema");
    let weights: Vec<f64> = (0..k).map(|c| 1.0 / (1.0 + c as f64)).collect();
    let total: f64 = weights.iter().sum();
    let mut rng = rng::stream(seed, Domain::Eval, 0x70F);
    let mut numeric = Array2::zeros((n, 1));
    let mut categorical = Array2::zeros((n, 1));
    for i in 0..n {
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut c = k - 1;
        for (j, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                c = j;
                break;
            }
        }
        let e: f64 = rng.sample(StandardNormal);
        categorical[[i, 0]] = c;
        numeric[[i, 0]] = c as f64 / k as f64 + 0.3 * e;
    }
    Table::new(schema, numeric, categorical).expect("consistent toy table")
}

/// The categorical column of [`wide_categorical`] on its own.
pub fn single_categorical(n: usize, k: usize, seed: u64) -> Table {
    let wide = wide_categorical(n, k, seed);
    let column = wide.schema.columns[1].clone();
    let schema = TableSchema::new(vec![column], wide.schema.target.clone()).expect("valid toy schema");
    Table::new(schema, Array2::zeros((n, 0)), wide.categorical).expect("consistent toy table")
}
