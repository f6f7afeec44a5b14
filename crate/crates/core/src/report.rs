//! Named metrics aggregated over seeds, with JSON and wide-CSV serialisation.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::format_f64;
use crate::{Error, Result};

/// Which way a metric improves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Higher,
    Lower,
    /// Ideal value is 0.5 (membership-inference precision/recall).
    Half,
    /// Descriptive value with no preferred direction.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub mean: f64,
    /// Standard error of the mean; 0 when `n < 2`.
    pub stderr: f64,
    pub n: usize,
    pub direction: Direction,
}

impl MetricValue {
    pub fn from_samples(values: &[f64], direction: Direction) -> Self {
        let n = values.len();
        if n == 0 {
            return MetricValue {
                mean: f64::NAN,
                stderr: 0.0,
                n,
                direction,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        MetricValue {
            mean,
            stderr,
            n,
            direction,
        }
    }
}

/// One row of per-seed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub datasets: Vec<String>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, MetricValue>,
    pub per_seed: Vec<SeedRow>,
    pub provenance: Provenance,
}

impl MetricReport {
    /// Aggregate per-seed rows; every row must carry the same metric names.
    pub fn from_rows(rows: Vec<SeedRow>, directions: &BTreeMap<String, Direction>) -> Result<Self> {
        let names: Vec<&String> = rows.first().map(|r| r.values.keys().collect()).unwrap_or_default();
        if rows.iter().any(|r| r.values.len() != names.len() || !names.iter().all(|n| r.values.contains_key(*n))) {
            return Err(Error::invalid("seed rows disagree on metric names"));
        }
        let mut metrics = BTreeMap::new();
        for name in names {
            let values: Vec<f64> = rows.iter().map(|r| r.values[name]).collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("metric `{name}`")));
            }
            let dir = directions.get(name).copied().unwrap_or(Direction::None);
            metrics.insert(name.clone(), MetricValue::from_samples(&values, dir));
        }
        let seeds = rows.iter().map(|r| r.seed).collect();
        Ok(MetricReport {
            metrics,
            per_seed: rows,
            provenance: Provenance {
                datasets: Vec::new(),
                seeds,
            },
        })
    }

    /// A report of single values (n = 1).
    pub fn single(values: impl IntoIterator<Item = (String, f64, Direction)>) -> Self {
        let mut metrics = BTreeMap::new();
        let mut row = BTreeMap::new();
        for (name, v, dir) in values {
            metrics.insert(name.clone(), MetricValue::from_samples(&[v], dir));
            row.insert(name, v);
        }
        MetricReport {
            metrics,
            per_seed: vec![SeedRow { seed: 0, values: row }],
            provenance: Provenance::default(),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).map(|m| m.mean)
    }

    /// Fewer than two seeds: standard errors are 0 by convention.
    pub fn single_seed(&self) -> bool {
        self.per_seed.len() < 2
    }

    /// `{metric: {mean, stderr, n, direction}}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.metrics).expect("metrics serialise")
    }

    pub fn from_json(text: &str) -> Result<BTreeMap<String, MetricValue>> {
        Ok(serde_json::from_str(text)?)
    }

    /// Wide CSV: `seed,<metric>...`, one row per seed.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let names: Vec<&String> = self.metrics.keys().collect();
        let mut header = vec!["seed".to_string()];
        header.extend(names.iter().map(|n| n.to_string()));
        out.write_record(&header)?;
        for row in &self.per_seed {
            let mut rec = vec![row.seed.to_string()];
            rec.extend(names.iter().map(|n| row.values.get(*n).map_or(String::new(), |v| format_f64(*v))));
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| Error::io("<report csv>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8")
    }

    /// Parse the wide CSV back into seed rows.
    pub fn read_csv_rows<R: Read>(reader: R) -> Result<Vec<SeedRow>> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header.first().map(String::as_str) != Some("seed") {
            return Err(Error::invalid("report csv must start with a seed column"));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let seed = rec[0].parse().map_err(|_| Error::invalid("bad seed"))?;
            let mut values = BTreeMap::new();
            for (name, cell) in header.iter().zip(rec.iter()).skip(1) {
                let v: f64 = cell.parse().map_err(|_| Error::invalid(format!("bad value `{cell}`")))?;
                values.insert(name.clone(), v);
            }
            rows.push(SeedRow { seed, values });
        }
        Ok(rows)
    }

    pub fn directions(&self) -> BTreeMap<String, Direction> {
        self.metrics.iter().map(|(k, v)| (k.clone(), v.direction)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> MetricReport {
        let dirs: BTreeMap<String, Direction> =
            [("cde".to_string(), Direction::Higher), ("mia_recall".to_string(), Direction::Half)].into();
        let rows = (0..20)
            .map(|s| SeedRow {
                seed: s,
                values: [
                    ("cde".to_string(), 0.9 + s as f64 * 1e-3 + 1.0 / 3.0 * 1e-7),
                    ("mia_recall".to_string(), 0.5 - s as f64 * 7e-4),
                ]
                .into(),
            })
            .collect();
        MetricReport::from_rows(rows, &dirs).unwrap()
    }

    #[test]
    fn aggregates_with_stderr() {
        let r = sample_report();
        assert_eq!(r.metrics["cde"].n, 20);
        assert!(r.metrics["cde"].stderr > 0.0);
        assert!(!r.single_seed());
        let one = MetricValue::from_samples(&[0.7], Direction::Higher);
        assert_eq!(one.stderr, 0.0);
        assert_eq!(one.n, 1);
    }

    #[test]
    fn json_and_csv_are_lossless() {
        let r = sample_report();
        assert_eq!(MetricReport::from_json(&r.to_json()).unwrap(), r.metrics);
        let rows = MetricReport::read_csv_rows(r.to_csv_string().as_bytes()).unwrap();
        assert_eq!(rows, r.per_seed);
        let back = MetricReport::from_rows(rows, &r.directions()).unwrap();
        assert_eq!(back.metrics, r.metrics);
    }

    #[test]
    fn rejects_ragged_rows() {
        let rows = vec![
            SeedRow {
                seed: 0,
                values: [("a".to_string(), 1.0)].into(),
            },
            SeedRow {
                seed: 1,
                values: [("b".to_string(), 1.0)].into(),
            },
        ];
        assert!(MetricReport::from_rows(rows, &BTreeMap::new()).is_err());
    }
}
