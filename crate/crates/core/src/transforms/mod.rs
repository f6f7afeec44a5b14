//! Bidirectional map between a [`Table`] and the unified continuous space.
//!
//! Numeric columns go through a [`QuantileMap`]; categorical columns through a
//! [`CategoricalCodec`]. The encoded row is the numeric block followed by one
//! block per categorical column.

mod codec;
mod quantile;

pub use codec::{
    bits_for, cat_decode, cat_encode, cat_encode_into, phase_point, width, Codec, CodecKind,
    Decoded, OneHotRelaxation,
};
pub use quantile::{
    fit_quantile, fit_quantile_columns, normal_cdf, normal_quantile, quantile_forward,
    quantile_inverse, ColumnQuantiles, QuantileMap, DEFAULT_CLIP, DEFAULT_N_QUANTILES,
};

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::{Table, TableSchema};
use crate::{Error, Result};

/// A categorical codec laid out over a schema's categorical columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalCodec {
    pub codec: Codec,
    pub cardinalities: Vec<usize>,
    pub widths: Vec<usize>,
    /// Offsets relative to the start of the categorical block.
    pub offsets: Vec<usize>,
}

impl CategoricalCodec {
    pub fn new(codec: impl Into<Codec>, cardinalities: Vec<usize>) -> Result<Self> {
        let codec = codec.into();
        if let Some(k) = cardinalities.iter().find(|&&k| k < 2) {
            return Err(Error::invalid(format!("categorical column with K={k}")));
        }
        let widths: Vec<usize> = cardinalities.iter().map(|&k| width(codec.kind, k)).collect();
        let offsets = widths
            .iter()
            .scan(0, |acc, &w| {
                let o = *acc;
                *acc += w;
                Some(o)
            })
            .collect();
        Ok(CategoricalCodec {
            codec,
            cardinalities,
            widths,
            offsets,
        })
    }

    pub fn for_schema(codec: impl Into<Codec>, schema: &TableSchema) -> Result<Self> {
        Self::new(codec, schema.cardinalities())
    }

    pub fn kind(&self) -> CodecKind {
        self.codec.kind
    }

    /// Total width of the categorical block.
    pub fn total_width(&self) -> usize {
        self.widths.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Numeric,
    Categorical(CodecKind),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub column: String,
    pub offset: usize,
    pub width: usize,
    pub kind: BlockKind,
}

/// Rows in the unified continuous space plus the layout back to columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub data: Array2<f64>,
    pub layout: Vec<LayoutEntry>,
}

impl EncodedMatrix {
    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }
}

/// Column layout of the encoded space for `schema` under `codec`.
pub fn layout_for(schema: &TableSchema, codec: &CategoricalCodec) -> Vec<LayoutEntry> {
    let mut layout: Vec<LayoutEntry> = schema
        .numeric_columns()
        .enumerate()
        .map(|(j, c)| LayoutEntry {
            column: c.name.clone(),
            offset: j,
            width: 1,
            kind: BlockKind::Numeric,
        })
        .collect();
    let base = layout.len();
    layout.extend(schema.categorical_columns().enumerate().map(|(j, c)| LayoutEntry {
        column: c.name.clone(),
        offset: base + codec.offsets[j],
        width: codec.widths[j],
        kind: BlockKind::Categorical(codec.kind()),
    }));
    layout
}

fn check_compat(schema: &TableSchema, qmap: Option<&QuantileMap>, codec: &CategoricalCodec) -> Result<()> {
    if let Some(q) = qmap {
        if q.n_columns() != schema.n_numeric() {
            return Err(Error::Shape(format!(
                "quantile map has {} columns, schema {} numeric",
                q.n_columns(),
                schema.n_numeric()
            )));
        }
    } else if schema.n_numeric() > 0 {
        return Err(Error::Shape("numeric columns without a quantile map".into()));
    }
    if codec.cardinalities != schema.cardinalities() {
        return Err(Error::Shape("codec cardinalities differ from schema".into()));
    }
    Ok(())
}

/// Encode every row of `table`.
pub fn encode_table(table: &Table, qmap: Option<&QuantileMap>, codec: &CategoricalCodec) -> Result<EncodedMatrix> {
    check_compat(&table.schema, qmap, codec)?;
    let dn = table.schema.n_numeric();
    let d = dn + codec.total_width();
    let mut data = Array2::zeros((table.n_rows(), d));
    if let Some(q) = qmap {
        data.slice_mut(s![.., ..dn]).assign(&quantile_forward(q, &table.numeric));
    }
    for (i, mut row) in data.outer_iter_mut().enumerate() {
        let row = row.as_slice_mut().expect("standard layout");
        for (j, &k) in codec.cardinalities.iter().enumerate() {
            let o = dn + codec.offsets[j];
            cat_encode_into(&codec.codec, table.categorical[[i, j]], k, &mut row[o..o + codec.widths[j]])?;
        }
    }
    Ok(EncodedMatrix {
        data,
        layout: layout_for(&table.schema, codec),
    })
}

/// Decoded table plus per-column out-of-index cast counts.
#[derive(Debug, Clone)]
pub struct DecodeOutcome {
    pub table: Table,
    pub cast_counts: Vec<usize>,
}

pub fn decode_matrix(
    m: &EncodedMatrix,
    qmap: Option<&QuantileMap>,
    codec: &CategoricalCodec,
    schema: &TableSchema,
) -> Result<Table> {
    decode_matrix_with_stats(m, qmap, codec, schema).map(|o| o.table)
}

pub fn decode_matrix_with_stats(
    m: &EncodedMatrix,
    qmap: Option<&QuantileMap>,
    codec: &CategoricalCodec,
    schema: &TableSchema,
) -> Result<DecodeOutcome> {
    check_compat(schema, qmap, codec)?;
    if m.layout != layout_for(schema, codec) {
        return Err(Error::Shape("encoded layout does not match schema".into()));
    }
    let dn = schema.n_numeric();
    let numeric = match qmap {
        Some(q) => quantile_inverse(q, &m.data.slice(s![.., ..dn]).to_owned()),
        None => Array2::zeros((m.n_rows(), 0)),
    };
    let dc = codec.cardinalities.len();
    let mut categorical = Array2::zeros((m.n_rows(), dc));
    let mut cast_counts = vec![0; dc];
    for (i, row) in m.data.outer_iter().enumerate() {
        for (j, &k) in codec.cardinalities.iter().enumerate() {
            let o = dn + codec.offsets[j];
            let v: Vec<f64> = row.slice(s![o..o + codec.widths[j]]).to_vec();
            let d = cat_decode(&codec.codec, &v, k);
            categorical[[i, j]] = d.index;
            cast_counts[j] += usize::from(d.cast);
        }
    }
    let table = Table::new(schema.clone(), numeric, categorical)?;
    Ok(DecodeOutcome { table, cast_counts })
}

/// Per categorical column, the fraction of rows whose decode was cast to index 0.
pub fn ooi_rate(m: &EncodedMatrix, codec: &CategoricalCodec) -> Vec<f64> {
    let dn = m.width() - codec.total_width();
    let n = m.n_rows();
    codec
        .cardinalities
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            if n == 0 {
                return 0.0;
            }
            let o = dn + codec.offsets[j];
            let casts = m
                .data
                .outer_iter()
                .filter(|row| {
                    let v: Vec<f64> = row.slice(s![o..o + codec.widths[j]]).to_vec();
                    cat_decode(&codec.codec, &v, k).cast
                })
                .count();
            casts as f64 / n as f64
        })
        .collect()
}

/// Fitted quantile map and codec for one schema.
#[derive(Debug, Clone, PartialEq)]
pub struct TableEncoder {
    pub schema: TableSchema,
    pub quantiles: Option<QuantileMap>,
    pub codec: CategoricalCodec,
}

impl TableEncoder {
    pub fn fit(table: &Table, codec: impl Into<Codec>, n_quantiles: usize, seed: u64) -> Result<Self> {
        let quantiles = if table.schema.n_numeric() > 0 {
            Some(fit_quantile(table, n_quantiles, seed)?)
        } else {
            None
        };
        Ok(TableEncoder {
            schema: table.schema.clone(),
            quantiles,
            codec: CategoricalCodec::for_schema(codec, &table.schema)?,
        })
    }

    pub fn width(&self) -> usize {
        self.schema.n_numeric() + self.codec.total_width()
    }

    pub fn layout(&self) -> Vec<LayoutEntry> {
        layout_for(&self.schema, &self.codec)
    }

    pub fn encode(&self, table: &Table) -> Result<EncodedMatrix> {
        if table.schema != self.schema {
            return Err(Error::Schema("table schema differs from encoder schema".into()));
        }
        encode_table(table, self.quantiles.as_ref(), &self.codec)
    }

    pub fn decode(&self, m: &EncodedMatrix) -> Result<DecodeOutcome> {
        decode_matrix_with_stats(m, self.quantiles.as_ref(), &self.codec, &self.schema)
    }

    /// Wrap raw rows in this encoder's layout.
    pub fn wrap(&self, data: Array2<f64>) -> Result<EncodedMatrix> {
        if data.ncols() != self.width() {
            return Err(Error::Shape(format!(
                "expected width {}, got {}",
                self.width(),
                data.ncols()
            )));
        }
        Ok(EncodedMatrix {
            data,
            layout: self.layout(),
        })
    }
}
