//! Per-epoch metrics as CSV, and a wall-clock training monitor.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use mrcae_core::trainer::{MetricsRow, TrainMonitor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER: &str = "level,phase,op,epoch,train_total,train_mse,train_max,val_total,val_global_total,val_global_mse,val_global_max,params,encoding_size,wall_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub level: usize,
    pub phase: usize,
    pub op: String,
    pub epoch: usize,
    pub train_total: f64,
    pub train_mse: f64,
    pub train_max: f64,
    pub val_total: f64,
    pub val_global_total: f64,
    pub val_global_mse: f64,
    pub val_global_max: f64,
    pub params: usize,
    pub encoding_size: usize,
    pub wall_ms: u64,
}

impl From<&MetricsRow> for MetricsRecord {
    fn from(r: &MetricsRow) -> Self {
        MetricsRecord {
            level: r.level,
            phase: r.phase,
            op: r.op.as_str().to_string(),
            epoch: r.epoch,
            train_total: r.train.total,
            train_mse: r.train.mse_part,
            train_max: r.train.max_part,
            val_total: r.val.total,
            val_global_total: r.val_global.total,
            val_global_mse: r.val_global.mse_part,
            val_global_max: r.val_global.max_part,
            params: r.params,
            encoding_size: r.encoding_size,
            wall_ms: r.wall_ms,
        }
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        // the serializer only writes the header alongside a first record
        let mut out = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        writeln!(out, "{HEADER}").expect("writing to a Vec");
        return Ok(out);
    }
    w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
}

pub fn write_metrics(records: &[MetricsRecord], path: &Path) -> Result<()> {
    std::fs::write(path, metrics_csv(records)?).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Csv(e),
    })?;
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != HEADER {
        return Err(Error::Format { what: "metrics", reason: format!("unexpected header {header:?}") });
    }
    Ok(r.deserialize().collect::<Result<Vec<MetricsRecord>, _>>()?)
}

/// Stamps rows with elapsed milliseconds, keeps them, and optionally
/// reports each finished phase on stderr.
pub struct WallClock {
    start: Instant,
    verbose: bool,
    pub rows: Vec<MetricsRecord>,
    last: Option<MetricsRecord>,
}

impl WallClock {
    pub fn new(verbose: bool) -> Self {
        WallClock { start: Instant::now(), verbose, rows: Vec::new(), last: None }
    }

    fn report_phase_end(&self) {
        if let (true, Some(r)) = (self.verbose, &self.last) {
            eprintln!(
                "level {} phase {} ({}): {} epochs, val global {:.4e}, params {}, encoding {}",
                r.level, r.phase, r.op, r.epoch, r.val_global_total, r.params, r.encoding_size
            );
        }
    }

    /// Flush the summary of the last phase.
    pub fn finish(&mut self) {
        self.report_phase_end();
        self.last = None;
    }
}

impl TrainMonitor for WallClock {
    fn now_ms(&mut self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    fn on_row(&mut self, row: &MetricsRow) {
        let rec = MetricsRecord::from(row);
        if rec.epoch == 0 {
            self.report_phase_end();
        }
        self.last = Some(rec.clone());
        self.rows.push(rec);
    }
}
