//! Typed tables, schemas, CSV ingestion and deterministic splits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Domain};
use crate::{Error, Result};

/// Default distinct-value threshold below which a column is inferred categorical.
pub const DEFAULT_CATEGORICAL_THRESHOLD: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    BinaryClassification,
    MulticlassClassification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
}

impl ColumnSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Numeric,
            vocabulary: None,
        }
    }

    /// Categorical column; the vocabulary is sorted and deduplicated.
    pub fn categorical<I, S>(name: impl Into<String>, vocabulary: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let vocab: BTreeSet<String> = vocabulary.into_iter().map(Into::into).collect();
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Categorical,
            vocabulary: Some(vocab.into_iter().collect()),
        }
    }

    /// Number of categories, zero for numeric columns.
    pub fn cardinality(&self) -> usize {
        self.vocabulary.as_ref().map_or(0, Vec::len)
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == ColumnKind::Categorical
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub name: String,
    pub task: TaskKind,
}

/// Ordered column descriptors plus the downstream prediction target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct TableSchema {
    pub columns: Vec<ColumnSpec>,
    pub target: TargetSpec,
}

#[derive(Deserialize)]
struct RawSchema {
    columns: Vec<ColumnSpec>,
    target: TargetSpec,
}

impl TryFrom<RawSchema> for TableSchema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        TableSchema::new(raw.columns, raw.target)
    }
}

/// Where a schema column lives inside a [`Table`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Numeric(usize),
    Categorical(usize),
}

impl TableSchema {
    pub fn new(columns: Vec<ColumnSpec>, target: TargetSpec) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for col in &columns {
            if col.name.is_empty() {
                return Err(Error::Schema("empty column name".into()));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", col.name)));
            }
            match (col.kind, &col.vocabulary) {
                (ColumnKind::Numeric, Some(_)) => {
                    return Err(Error::Schema(format!(
                        "numeric column `{}` has a vocabulary",
                        col.name
                    )))
                }
                (ColumnKind::Categorical, None) => {
                    return Err(Error::Schema(format!(
                        "categorical column `{}` has no vocabulary",
                        col.name
                    )))
                }
                (ColumnKind::Categorical, Some(vocab)) => {
                    if vocab.len() < 2 {
                        return Err(Error::Schema(format!(
                            "categorical column `{}` needs at least 2 categories",
                            col.name
                        )));
                    }
                    if vocab.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(Error::Schema(format!(
                            "vocabulary of `{}` must be sorted with no duplicates",
                            col.name
                        )));
                    }
                }
                (ColumnKind::Numeric, None) => {}
            }
        }
        let target_col = columns
            .iter()
            .find(|c| c.name == target.name)
            .ok_or_else(|| Error::Schema(format!("target `{}` is not a column", target.name)))?;
        let consistent = match target.task {
            TaskKind::Regression => target_col.kind == ColumnKind::Numeric,
            TaskKind::BinaryClassification => target_col.cardinality() == 2,
            TaskKind::MulticlassClassification => target_col.cardinality() >= 2,
        };
        if !consistent {
            return Err(Error::Schema(format!(
                "target `{}` does not fit task {:?}",
                target.name, target.task
            )));
        }
        Ok(TableSchema { columns, target })
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serialises")
    }

    pub fn numeric_columns(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(|c| !c.is_categorical())
    }

    pub fn categorical_columns(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(|c| c.is_categorical())
    }

    pub fn n_numeric(&self) -> usize {
        self.numeric_columns().count()
    }

    pub fn n_categorical(&self) -> usize {
        self.categorical_columns().count()
    }

    /// Category counts K_j of the categorical columns, in schema order.
    pub fn cardinalities(&self) -> Vec<usize> {
        self.categorical_columns().map(ColumnSpec::cardinality).collect()
    }

    /// Block position of every schema column.
    pub fn slots(&self) -> Vec<Slot> {
        let (mut n, mut c) = (0, 0);
        self.columns
            .iter()
            .map(|col| {
                if col.is_categorical() {
                    c += 1;
                    Slot::Categorical(c - 1)
                } else {
                    n += 1;
                    Slot::Numeric(n - 1)
                }
            })
            .collect()
    }

    pub fn slot_of(&self, name: &str) -> Option<Slot> {
        let idx = self.columns.iter().position(|c| c.name == name)?;
        Some(self.slots()[idx])
    }
}

/// Rows of a schema-typed table: numerics and category indices in separate blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: TableSchema,
    /// N × D_cont, columns in schema order of the numeric columns.
    pub numeric: Array2<f64>,
    /// N × D_cat category indices into each column's vocabulary.
    pub categorical: Array2<usize>,
    /// Rows dropped during ingestion because of missing or unparseable cells.
    pub dropped_rows: usize,
}

impl Table {
    pub fn new(schema: TableSchema, numeric: Array2<f64>, categorical: Array2<usize>) -> Result<Self> {
        let n = numeric.nrows();
        if numeric.ncols() != schema.n_numeric() || categorical.ncols() != schema.n_categorical() {
            return Err(Error::Shape(format!(
                "table blocks {}x{} / {}x{} do not match schema ({} numeric, {} categorical)",
                numeric.nrows(),
                numeric.ncols(),
                categorical.nrows(),
                categorical.ncols(),
                schema.n_numeric(),
                schema.n_categorical()
            )));
        }
        if categorical.nrows() != n {
            return Err(Error::Shape("numeric and categorical row counts differ".into()));
        }
        if numeric.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("numeric block".into()));
        }
        for (j, k) in schema.cardinalities().into_iter().enumerate() {
            if let Some(bad) = categorical.column(j).iter().find(|&&c| c >= k) {
                return Err(Error::Shape(format!(
                    "category index {bad} out of range for column {j} (K={k})"
                )));
            }
        }
        Ok(Table {
            schema,
            numeric,
            categorical,
            dropped_rows: 0,
        })
    }

    /// A table with no rows.
    pub fn empty(schema: TableSchema) -> Self {
        let (dn, dc) = (schema.n_numeric(), schema.n_categorical());
        Table {
            schema,
            numeric: Array2::zeros((0, dn)),
            categorical: Array2::zeros((0, dc)),
            dropped_rows: 0,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.numeric.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows() == 0
    }

    /// Rows at `indices`, in that order.
    pub fn take(&self, indices: &[usize]) -> Table {
        Table {
            schema: self.schema.clone(),
            numeric: self.numeric.select(Axis(0), indices),
            categorical: self.categorical.select(Axis(0), indices),
            dropped_rows: 0,
        }
    }

    /// Stack rows of tables sharing one schema.
    pub fn concat(parts: &[&Table]) -> Result<Table> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tables"))?;
        if parts.iter().any(|t| t.schema != first.schema) {
            return Err(Error::Schema("concat of tables with different schemas".into()));
        }
        let nums: Vec<_> = parts.iter().map(|t| t.numeric.view()).collect();
        let cats: Vec<_> = parts.iter().map(|t| t.categorical.view()).collect();
        Ok(Table {
            schema: first.schema.clone(),
            numeric: ndarray::concatenate(Axis(0), &nums).map_err(|e| Error::Shape(e.to_string()))?,
            categorical: ndarray::concatenate(Axis(0), &cats)
                .map_err(|e| Error::Shape(e.to_string()))?,
            dropped_rows: 0,
        })
    }

    /// Write the table as CSV with the schema's column order as header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))?;
        let slots = self.schema.slots();
        let vocabs: Vec<&Vec<String>> = self
            .schema
            .categorical_columns()
            .map(|c| c.vocabulary.as_ref().expect("validated"))
            .collect();
        let mut record = Vec::with_capacity(slots.len());
        for i in 0..self.n_rows() {
            record.clear();
            for slot in &slots {
                record.push(match *slot {
                    Slot::Numeric(j) => format_f64(self.numeric[[i, j]]),
                    Slot::Categorical(j) => vocabs[j][self.categorical[[i, j]]].clone(),
                });
            }
            out.write_record(&record)?;
        }
        out.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8 csv")
    }
}

/// Shortest text form that parses back to the identical `f64`.
pub fn format_f64(x: f64) -> String {
    format!("{x:?}")
}

fn is_missing(cell: &str) -> bool {
    cell.trim().is_empty()
}

/// Load a CSV file against a declared schema.
pub fn load_csv(path: impl AsRef<Path>, schema: &TableSchema) -> Result<Table> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Parse CSV from any reader against a declared schema.
///
/// Rows with an empty cell or an unparseable numeric are dropped and counted
/// in [`Table::dropped_rows`]; a category string missing from the vocabulary
/// is an error.
pub fn read_csv<R: Read>(reader: R, schema: &TableSchema) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let positions = match_header(&header, schema)?;

    let slots = schema.slots();
    let lookups: Vec<HashMap<&str, usize>> = schema
        .categorical_columns()
        .map(|c| {
            c.vocabulary
                .as_ref()
                .expect("validated")
                .iter()
                .enumerate()
                .map(|(i, v)| (v.as_str(), i))
                .collect()
        })
        .collect();
    let cat_names: Vec<&str> = schema.categorical_columns().map(|c| c.name.as_str()).collect();

    let (dn, dc) = (schema.n_numeric(), schema.n_categorical());
    let mut numeric = Vec::new();
    let mut categorical = Vec::new();
    let mut unseen: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    let mut dropped = 0usize;
    let mut row_num = vec![0.0; dn];
    let mut row_cat = vec![0usize; dc];

    for record in rdr.records() {
        let record = record?;
        let mut ok = true;
        for (slot, &pos) in slots.iter().zip(&positions) {
            let cell = record.get(pos).unwrap_or("");
            if is_missing(cell) {
                ok = false;
                continue;
            }
            match *slot {
                Slot::Numeric(j) => match cell.trim().parse::<f64>() {
                    Ok(v) if v.is_finite() => row_num[j] = v,
                    _ => ok = false,
                },
                Slot::Categorical(j) => match lookups[j].get(cell) {
                    Some(&idx) => row_cat[j] = idx,
                    None => {
                        unseen.entry(j).or_default().insert(cell.to_owned());
                        ok = false;
                    }
                },
            }
        }
        if ok {
            numeric.extend_from_slice(&row_num);
            categorical.extend_from_slice(&row_cat);
        } else {
            dropped += 1;
        }
    }

    if let Some((j, values)) = unseen.into_iter().next() {
        return Err(Error::UnseenCategory {
            column: cat_names[j].to_owned(),
            values: values.into_iter().collect(),
        });
    }
    let n = if dn > 0 {
        numeric.len() / dn
    } else {
        categorical.len() / dc.max(1)
    };
    if n == 0 {
        return Err(Error::EmptyTable(format!("no complete rows ({dropped} dropped)")));
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} rows with missing or unparseable cells");
    }
    let mut table = Table::new(
        schema.clone(),
        Array2::from_shape_vec((n, dn), numeric).expect("row-major shape"),
        Array2::from_shape_vec((n, dc), categorical).expect("row-major shape"),
    )?;
    table.dropped_rows = dropped;
    Ok(table)
}

/// For each schema column, its index in the CSV header.
fn match_header(header: &[String], schema: &TableSchema) -> Result<Vec<usize>> {
    let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let missing: Vec<&str> = schema
        .columns
        .iter()
        .map(|c| c.name.as_str())
        .filter(|n| !index.contains_key(n))
        .collect();
    let known: BTreeSet<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    let extra: Vec<&str> = header
        .iter()
        .map(String::as_str)
        .filter(|h| !known.contains(h))
        .collect();
    if !missing.is_empty() || !extra.is_empty() || index.len() != header.len() {
        return Err(Error::HeaderMismatch(format!(
            "missing {missing:?}, unexpected {extra:?}"
        )));
    }
    Ok(schema.columns.iter().map(|c| index[c.name.as_str()]).collect())
}

/// Infer a schema from a CSV file; see [`infer_schema_from_reader`].
pub fn infer_schema(path: impl AsRef<Path>, categorical_threshold: usize) -> Result<TableSchema> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    infer_schema_from_reader(file, categorical_threshold)
}

/// A column is categorical iff some value does not parse as a number or it
/// has at most `categorical_threshold` distinct values. The last column
/// becomes the target.
pub fn infer_schema_from_reader<R: Read>(reader: R, categorical_threshold: usize) -> Result<TableSchema> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::EmptyTable("no header".into()));
    }
    let mut distinct: Vec<BTreeSet<String>> = vec![BTreeSet::new(); header.len()];
    let mut all_numeric = vec![true; header.len()];
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record?;
        rows += 1;
        for (j, cell) in record.iter().enumerate().take(header.len()) {
            if is_missing(cell) {
                continue;
            }
            if all_numeric[j] && !cell.trim().parse::<f64>().is_ok_and(f64::is_finite) {
                all_numeric[j] = false;
            }
            if distinct[j].len() <= categorical_threshold || !all_numeric[j] {
                distinct[j].insert(cell.to_owned());
            }
        }
    }
    if rows == 0 {
        return Err(Error::EmptyTable("no data rows".into()));
    }
    let mut columns = Vec::with_capacity(header.len());
    for (j, name) in header.iter().enumerate() {
        if distinct[j].is_empty() {
            return Err(Error::EmptyTable(format!("column `{name}` has no values")));
        }
        let categorical = !all_numeric[j] || distinct[j].len() <= categorical_threshold;
        if categorical {
            if distinct[j].len() < 2 {
                return Err(Error::Schema(format!(
                    "column `{name}` has a single value and cannot be modelled"
                )));
            }
            columns.push(ColumnSpec::categorical(name.clone(), std::mem::take(&mut distinct[j])));
        } else {
            columns.push(ColumnSpec::numeric(name.clone()));
        }
    }
    let last = columns.last().expect("non-empty header");
    let task = match last.cardinality() {
        0 => TaskKind::Regression,
        2 => TaskKind::BinaryClassification,
        _ => TaskKind::MulticlassClassification,
    };
    let target = TargetSpec {
        name: last.name.clone(),
        task,
    };
    TableSchema::new(columns, target)
}

/// Disjoint train/validation/test row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Shuffle `0..n_rows` under `seed` and cut it by `ratio`.
///
/// Sizes are `round(n * r_train)`, `round(n * r_val)` and the remainder.
/// A zero test ratio is allowed for tables with a separately supplied test set.
pub fn split(n_rows: usize, ratio: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    let (rt, rv, rs) = ratio;
    let valid = [rt, rv, rs].iter().all(|r| r.is_finite() && *r >= 0.0)
        && rt > 0.0
        && rv > 0.0
        && ((rt + rv + rs) - 1.0).abs() <= 1e-9;
    if !valid {
        return Err(Error::invalid(format!("degenerate split ratio {ratio:?}")));
    }
    if n_rows < 10 {
        return Err(Error::invalid(format!("table too small to split ({n_rows} rows)")));
    }
    let n_train = ((n_rows as f64) * rt).round() as usize;
    let mut n_val = ((n_rows as f64) * rv).round() as usize;
    if rs == 0.0 {
        n_val = n_rows - n_train;
    }
    if n_train + n_val > n_rows || n_train == 0 || n_val == 0 {
        return Err(Error::invalid(format!("ratio {ratio:?} leaves an empty split")));
    }
    let mut perm: Vec<usize> = (0..n_rows).collect();
    perm.shuffle(&mut rng::stream(seed, Domain::Split, n_rows as u64));
    let test = perm.split_off(n_train + n_val);
    let validation = perm.split_off(n_train);
    Ok(SplitIndices {
        train: perm,
        validation,
        test,
        seed,
    })
}

/// Train/validation/test tables.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Table,
    pub validation: Table,
    pub test: Table,
}

impl Splits {
    pub fn from_indices(table: &Table, idx: &SplitIndices) -> Self {
        Splits {
            train: table.take(&idx.train),
            validation: table.take(&idx.validation),
            test: table.take(&idx.test),
        }
    }

    /// Split `table` three ways, or, when `test` is supplied, split `table`
    /// into train/validation using the first two ratio components rescaled.
    pub fn build(table: &Table, test: Option<Table>, ratio: (f64, f64, f64), seed: u64) -> Result<Self> {
        match test {
            None => Ok(Splits::from_indices(table, &split(table.n_rows(), ratio, seed)?)),
            Some(test) => {
                if test.schema != table.schema {
                    return Err(Error::Schema("test file schema differs".into()));
                }
                let s = ratio.0 + ratio.1;
                let idx = split(table.n_rows(), (ratio.0 / s, ratio.1 / s, 0.0), seed)?;
                Ok(Splits {
                    train: table.take(&idx.train),
                    validation: table.take(&idx.validation),
                    test,
                })
            }
        }
    }
}
