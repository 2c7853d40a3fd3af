//! Training log: JSON-lines with one record per episode, plus a CSV export
//! with a stable column order.
//!
//! The first line of a log file is a meta record carrying the schema version
//! and the master seed (the seed is what lets diagnostics replay an
//! episode's reference later). Every field except `wall_time_s` is a
//! deterministic function of the configuration and seed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogMeta {
    pub schema: u32,
    pub seed: u64,
}

/// Per-episode scalars. Fields that are undefined for an episode (no oracle
/// scheduled, first episode's drift, faulted rollout) serialize as null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    /// Episode cost g_t (sum of per-step costs; truncated sum if faulted).
    pub g_t: f64,
    /// Model one-step MSE on this episode's own transitions, post-update.
    pub probe_loss: Option<f64>,
    /// ‖∇̂_φ g‖.
    pub grad_norm: Option<f64>,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    /// Energy-distance proxy between this and the previous episode's data.
    pub drift_proxy: Option<f64>,
    /// ‖∇̂_φ g − ∇_φ g‖ when the oracle ran this episode.
    pub delta_t: Option<f64>,
    /// Payload mass in effect.
    pub payload: f64,
    pub faulted: bool,
    pub wall_time_s: f64,
}

impl EpisodeRecord {
    /// The record's deterministic scalar content: serialized JSON with the
    /// timing field removed. Two same-seed runs must agree on this
    /// byte-for-byte.
    pub fn scalar_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("record serializes");
        v.as_object_mut().unwrap().remove("wall_time_s");
        serde_json::to_string(&v).expect("record serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub meta: LogMeta,
    pub records: Vec<EpisodeRecord>,
}

impl TrainingLog {
    pub fn new(seed: u64) -> Self {
        Self {
            meta: LogMeta {
                schema: LOG_SCHEMA_VERSION,
                seed,
            },
            records: Vec::new(),
        }
    }
}

/// Incremental JSONL writer; one line per record, flushed per episode.
pub struct LogWriter {
    out: BufWriter<File>,
}

impl LogWriter {
    pub fn create(path: &Path, meta: &LogMeta) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, meta).map_err(|e| EngineError::Log(e.to_string()))?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn append(&mut self, record: &EpisodeRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record).map_err(|e| EngineError::Log(e.to_string()))?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_log(path: &Path) -> Result<TrainingLog> {
    let file = File::open(path)
        .map_err(|e| EngineError::Log(format!("cannot open log {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let meta_line = lines
        .next()
        .ok_or_else(|| EngineError::Log("log file is empty".into()))?
        .map_err(EngineError::Io)?;
    let meta: LogMeta = serde_json::from_str(&meta_line)
        .map_err(|e| EngineError::Log(format!("bad log header: {e}")))?;
    if meta.schema != LOG_SCHEMA_VERSION {
        return Err(EngineError::Log(format!(
            "unsupported log schema {}",
            meta.schema
        )));
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line.map_err(EngineError::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EpisodeRecord = serde_json::from_str(&line)
            .map_err(|e| EngineError::Log(format!("bad log record: {e}")))?;
        records.push(rec);
    }
    Ok(TrainingLog { meta, records })
}

pub const CSV_HEADER: &str =
    "episode,g_t,probe_loss,grad_norm,lambda_min,lambda_max,drift_proxy,delta_t,payload";

fn csv_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Serializes records to the fixed-column CSV. Optional fields become empty
/// cells; floats use shortest round-trip formatting so a re-parse recovers
/// the exact values.
pub fn to_csv(records: &[EpisodeRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.episode,
            r.g_t,
            csv_cell(r.probe_loss),
            csv_cell(r.grad_norm),
            csv_cell(r.lambda_min),
            csv_cell(r.lambda_max),
            csv_cell(r.drift_proxy),
            csv_cell(r.delta_t),
            r.payload,
        ));
    }
    out
}

/// Parses the CSV back into scalar tuples, for round-trip verification.
pub fn parse_csv(text: &str) -> Result<Vec<EpisodeRecord>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| EngineError::Log("empty csv".into()))?;
    if header != CSV_HEADER {
        return Err(EngineError::Log("unexpected csv header".into()));
    }
    let cell = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse::<f64>()
                .map(Some)
                .map_err(|e| EngineError::Log(format!("bad csv cell {s:?}: {e}")))
        }
    };
    let mut out = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(EngineError::Log(format!("bad csv row: {line:?}")));
        }
        out.push(EpisodeRecord {
            episode: f[0]
                .parse()
                .map_err(|e| EngineError::Log(format!("bad episode: {e}")))?,
            g_t: f[1]
                .parse()
                .map_err(|e| EngineError::Log(format!("bad g_t: {e}")))?,
            probe_loss: cell(f[2])?,
            grad_norm: cell(f[3])?,
            lambda_min: cell(f[4])?,
            lambda_max: cell(f[5])?,
            drift_proxy: cell(f[6])?,
            delta_t: cell(f[7])?,
            payload: f[8]
                .parse()
                .map_err(|e| EngineError::Log(format!("bad payload: {e}")))?,
            faulted: false,
            wall_time_s: 0.0,
        });
    }
    Ok(out)
}
