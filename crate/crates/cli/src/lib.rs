//! Subcommand implementations behind the `tabsynth` binary.
//!
//! Each `cmd_*` function takes fully resolved inputs; argument parsing and
//! config-file merging live in [`args`].

pub mod args;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tabsynth::dataset::{infer_schema, load_csv, Splits, Table, TableSchema, TargetSpec, TaskKind};
use tabsynth::eval::{ensure_same_schema, full_report, RealData, ReportConfig};
use tabsynth::generative::{sample_table, train, LogRow, ModelCheckpoint, TrainConfig};
use tabsynth::geometry::{singular_report, MAX_REPORT_K};
use tabsynth::report::MetricReport;
use tabsynth::Exec;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "TABREP_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] tabsynth::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// Short machine-readable category for the error line.
    pub fn kind(&self) -> &'static str {
        use tabsynth::Error as E;
        match self {
            CliError::Config(_) => "config",
            CliError::Usage(_) => "usage",
            CliError::Core(e) => match e {
                E::Io { .. } => "io",
                E::Csv(_) => "csv",
                E::Json(_) => "json",
                E::Schema(_) | E::HeaderMismatch(_) | E::UnseenCategory { .. } => "schema",
                E::EmptyTable(_) => "empty_table",
                E::InvalidArgument(_) | E::Shape(_) => "invalid_argument",
                E::Diverged { .. } | E::NonFinite(_) => "diverged",
                E::Checkpoint(_) => "checkpoint",
            },
        }
    }

    /// `{"error": kind, "message": ...}` on one line.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    tabsynth::Error::io(path, e).into()
}

/// Write through a temporary file in the target directory, then rename over
/// `path`, so readers never see a partial file.
pub fn write_atomic<F>(path: &Path, fill: F) -> CliResult<()>
where
    F: FnOnce(&mut dyn Write) -> CliResult<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush().map_err(|e| io_err(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    write_atomic(path, |w| w.write_all(bytes).map_err(|e| io_err(path, e)))
}

fn write_table(path: &Path, table: &Table) -> CliResult<()> {
    write_atomic(path, |w| Ok(table.write_csv(w)?))
}

/// Worker policy from `TABREP_THREADS`: unset leaves the default pool,
/// `1` runs sequentially, `n > 1` caps the pool at `n` threads.
pub fn exec_from_env() -> CliResult<Exec> {
    let raw = match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v,
        _ => return Ok(Exec::default()),
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    if n == 1 {
        return Ok(Exec::Sequential);
    }
    #[cfg(feature = "parallel")]
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        log::debug!("thread pool already configured: {e}");
    }
    Ok(Exec::default())
}

pub fn cmd_infer(data: &Path, out: &Path, threshold: usize, target: Option<&str>) -> CliResult<TableSchema> {
    let mut schema = infer_schema(data, threshold)?;
    if let Some(name) = target {
        let col = schema
            .columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| CliError::Usage(format!("no column named `{name}`")))?;
        let task = match col.cardinality() {
            0 => TaskKind::Regression,
            2 => TaskKind::BinaryClassification,
            _ => TaskKind::MulticlassClassification,
        };
        schema = TableSchema::new(
            schema.columns.clone(),
            TargetSpec {
                name: name.to_string(),
                task,
            },
        )?;
    }
    write_bytes(out, schema.to_json_pretty().as_bytes())?;
    Ok(schema)
}

#[derive(Debug, Clone)]
pub struct TrainJob {
    pub data: PathBuf,
    pub schema: PathBuf,
    pub checkpoint: PathBuf,
    pub log: Option<PathBuf>,
    /// Separate real test file; otherwise the data is split three ways.
    pub test: Option<PathBuf>,
    /// Directory receiving `train.csv`, `validation.csv`, `test.csv`.
    pub splits_out: Option<PathBuf>,
    pub ratio: (f64, f64, f64),
    pub split_seed: u64,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub best_iteration: usize,
    pub val_score: Option<f64>,
    pub final_loss: f64,
    pub skipped_steps: u64,
    pub train_rows: usize,
}

pub fn write_log(path: &Path, log: &[LogRow]) -> CliResult<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "loss", "val_score"]).map_err(tabsynth::Error::from)?;
        for row in log {
            out.write_record([
                row.iteration.to_string(),
                format!("{:?}", row.loss),
                row.val_score.map_or(String::new(), |v| format!("{v:?}")),
            ])
            .map_err(tabsynth::Error::from)?;
        }
        out.flush().map_err(|e| io_err(path, e))
    })
}

pub fn cmd_train(job: &TrainJob) -> CliResult<TrainSummary> {
    let schema = TableSchema::from_json_file(&job.schema)?;
    let table = load_csv(&job.data, &schema)?;
    let test = job.test.as_ref().map(|p| load_csv(p, &schema)).transpose()?;
    let splits = Splits::build(&table, test, job.ratio, job.split_seed)?;
    if let Some(dir) = &job.splits_out {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_table(&dir.join("train.csv"), &splits.train)?;
        write_table(&dir.join("validation.csv"), &splits.validation)?;
        write_table(&dir.join("test.csv"), &splits.test)?;
    }
    let outcome = train(&splits, &job.config)?;
    write_bytes(&job.checkpoint, &outcome.checkpoint.to_bytes()?)?;
    if let Some(log) = &job.log {
        write_log(log, &outcome.log)?;
    }
    let meta = &outcome.checkpoint.meta;
    Ok(TrainSummary {
        checkpoint: job.checkpoint.clone(),
        best_iteration: meta.best_iteration,
        val_score: meta.val_score,
        final_loss: meta.final_loss,
        skipped_steps: meta.skipped_steps,
        train_rows: splits.train.n_rows(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleSummary {
    pub rows: usize,
    /// Per categorical column, fraction of cells cast to the first category.
    pub ooi_rate: BTreeMap<String, f64>,
}

pub fn cmd_sample(checkpoint: &Path, n_rows: usize, seed: u64, out: &Path, exec: Exec) -> CliResult<SampleSummary> {
    let ckpt = ModelCheckpoint::load(checkpoint)?;
    let s = sample_table(&ckpt, n_rows, seed, exec)?;
    write_table(out, &s.table)?;
    let names = ckpt.schema().categorical_columns().map(|c| c.name.clone());
    Ok(SampleSummary {
        rows: s.table.n_rows(),
        ooi_rate: names.zip(s.ooi_rate).collect(),
    })
}

/// Where the synthetic tables come from.
#[derive(Debug, Clone)]
pub enum SynSource {
    /// CSV files. One file is scored under every seed; several files are
    /// paired with seeds `0, 1, ...`.
    Files(Vec<PathBuf>),
    /// Draw `rows` rows per seed from a checkpoint (`None`: as many as the
    /// real table).
    Checkpoint { path: PathBuf, rows: Option<usize> },
}

#[derive(Debug, Clone)]
pub struct EvalJob {
    pub real: PathBuf,
    pub holdout: Option<PathBuf>,
    pub schema: PathBuf,
    pub syn: SynSource,
    pub seeds: usize,
    pub out_json: PathBuf,
    pub out_csv: PathBuf,
    pub exec: Exec,
}

pub fn cmd_eval(job: &EvalJob) -> CliResult<MetricReport> {
    if job.seeds == 0 {
        return Err(CliError::Usage("need at least one seed".into()));
    }
    let schema = TableSchema::from_json_file(&job.schema)?;
    let real = load_csv(&job.real, &schema)?;
    let holdout = job.holdout.as_ref().map(|p| load_csv(p, &schema)).transpose()?;
    let tables: Vec<(u64, Table)> = match &job.syn {
        SynSource::Files(files) if files.is_empty() => {
            return Err(CliError::Usage("no synthetic table given".into()));
        }
        SynSource::Files(files) if files.len() == 1 => {
            let t = load_csv(&files[0], &schema)?;
            (0..job.seeds as u64).map(|s| (s, t.clone())).collect()
        }
        SynSource::Files(files) => files
            .iter()
            .enumerate()
            .map(|(i, p)| Ok((i as u64, load_csv(p, &schema)?)))
            .collect::<CliResult<_>>()?,
        SynSource::Checkpoint { path, rows } => {
            let ckpt = ModelCheckpoint::load(path)?;
            ensure_same_schema(ckpt.schema(), &schema)?;
            let n = rows.unwrap_or(real.n_rows());
            (0..job.seeds as u64)
                .map(|s| Ok((s, sample_table(&ckpt, n, s, job.exec)?.table)))
                .collect::<CliResult<_>>()?
        }
    };
    let pairs: Vec<(u64, &Table)> = tables.iter().map(|(s, t)| (*s, t)).collect();
    let cfg = ReportConfig {
        exec: job.exec,
        ..ReportConfig::default()
    };
    let mut report = full_report(
        RealData {
            train: &real,
            holdout: holdout.as_ref(),
        },
        &pairs,
        &cfg,
    )?;
    report.provenance.datasets = std::iter::once(&job.real)
        .chain(job.holdout.iter())
        .map(|p| p.display().to_string())
        .collect();
    write_bytes(&job.out_json, report.to_json().as_bytes())?;
    write_atomic(&job.out_csv, |w| Ok(report.write_csv(w)?))?;
    Ok(report)
}

pub fn cmd_geometry(k: usize, alpha: f64, sigma: f64, out: &Path) -> CliResult<MetricReport> {
    if !(2..=MAX_REPORT_K).contains(&k) {
        return Err(CliError::Usage(format!(
            "K={k} not supported: the report enumerates 2^K subsets, K must be in 2..={MAX_REPORT_K}"
        )));
    }
    let mut buf = Vec::new();
    let report = singular_report(k, alpha, sigma, &mut buf)?;
    write_bytes(out, &buf)?;
    Ok(report)
}
