//! Per-client metrics rows and their CSV form.
//!
//! Floats are written in scientific notation with 17 significant digits, which
//! round-trips every `f64` exactly. Fields that do not apply to a run are
//! written as the sentinel `-1`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "round,step,client_id,train_loss,test_loss,fro_dist_sq,eff_rank,hypergrad_norm,current_rank_k";

const SENTINEL: &str = "-1";

/// One row: the state of one client right after a synchronization.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub round: usize,
    /// Local steps completed so far.
    pub step: usize,
    pub client_id: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    /// `‖Ŵ_k − W_k*‖_F²` when the ground truth is known.
    pub fro_dist_sq: Option<f64>,
    pub eff_rank: Option<usize>,
    pub hypergrad_norm: Option<f64>,
    /// HETLoRA's current local rank.
    pub current_rank_k: Option<usize>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| SENTINEL.to_string(), fmt_f64)
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map_or_else(|| SENTINEL.to_string(), |v| v.to_string())
}

impl MetricsRecord {
    pub fn to_csv_row(&self) -> String {
        [
            self.round.to_string(),
            self.step.to_string(),
            self.client_id.to_string(),
            fmt_f64(self.train_loss),
            fmt_f64(self.test_loss),
            fmt_opt_f64(self.fro_dist_sq),
            fmt_opt_usize(self.eff_rank),
            fmt_opt_f64(self.hypergrad_norm),
            fmt_opt_usize(self.current_rank_k),
        ]
        .join(",")
    }

    pub fn parse_csv_row(line: &str) -> std::result::Result<Self, String> {
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 9 {
            return Err(format!("expected 9 fields, found {}", fields.len()));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| format!("{s:?}: {e}"));
        let float = |s: &str| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
        let opt_int = |s: &str| if s == SENTINEL { Ok(None) } else { int(s).map(Some) };
        let opt_float = |s: &str| if s == SENTINEL { Ok(None) } else { float(s).map(Some) };
        Ok(Self {
            round: int(fields[0])?,
            step: int(fields[1])?,
            client_id: int(fields[2])?,
            train_loss: float(fields[3])?,
            test_loss: float(fields[4])?,
            fro_dist_sq: opt_float(fields[5])?,
            eff_rank: opt_int(fields[6])?,
            hypergrad_norm: opt_float(fields[7])?,
            current_rank_k: opt_int(fields[8])?,
        })
    }
}

fn sort_key(r: &MetricsRecord) -> (usize, usize) {
    (r.round, r.client_id)
}

/// Streams rows to a CSV file one round at a time.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
    last_round: Option<usize>,
}

impl MetricsWriter {
    /// Creates (truncates) the file and writes the header.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut writer = Self {
            out: BufWriter::new(file),
            path,
            last_round: None,
        };
        writer.write_line(METRICS_HEADER)?;
        writer.flush()?;
        Ok(writer)
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }

    /// Appends the rows of one round (sorted by client) and flushes, so an
    /// interrupted run leaves only whole rounds on disk.
    pub fn append_round(&mut self, records: &[MetricsRecord]) -> Result<()> {
        let mut rows: Vec<&MetricsRecord> = records.iter().collect();
        rows.sort_by_key(|r| sort_key(r));
        if let (Some(first), Some(last)) = (rows.first(), self.last_round) {
            if first.round < last {
                return Err(Error::invalid(format!(
                    "round {} appended after round {last}",
                    first.round
                )));
            }
        }
        for r in &rows {
            self.write_line(&r.to_csv_row())?;
        }
        if let Some(r) = rows.last() {
            self.last_round = Some(r.round);
        }
        self.flush()
    }
}

/// Writes all records, sorted by `(round, client_id)`.
pub fn write_metrics(records: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut sorted = records.to_vec();
    sorted.sort_by_key(sort_key);
    let mut writer = MetricsWriter::create(path)?;
    for r in &sorted {
        writer.write_line(&r.to_csv_row())?;
    }
    writer.flush()
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end() == METRICS_HEADER => {}
        Some(Err(e)) => return Err(Error::io(path, e)),
        _ => return Err(parse_err(1, "missing or wrong header".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(MetricsRecord::parse_csv_row(&line).map_err(|m| parse_err(i + 2, m))?);
    }
    Ok(out)
}
