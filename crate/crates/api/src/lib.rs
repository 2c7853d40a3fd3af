//! Wire types for the ombrl HTTP service. The server and the client both
//! speak these; heavyweight domain types (config, reports, metrics) are the
//! engine's own serde-enabled structs.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

pub use ombrl_engine::config::TrainerConfig;
pub use ombrl_engine::diagnostics::{GradCheckReport, RegretReport};
pub use ombrl_engine::logging::EpisodeRecord;
pub use ombrl_engine::trainer::{EvalMetrics, TrainSummary};

pub const API_BASE: &str = "/api/v1";

/// Uniform error body for non-2xx responses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    /// Coarse classification mirroring the engine's error kinds:
    /// "config", "contract", "numeric", "checkpoint", "log", "io", "internal".
    pub kind: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub version: String,
}

/// Starts a training job. The config is sent in full; the server writes all
/// artifacts (log, checkpoints, summary) under the config's output dir on
/// its own filesystem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRequest {
    pub config: TrainerConfig,
    /// Resume from this checkpoint instead of a fresh initialization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume_from: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainStarted {
    pub job_id: Uuid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: Uuid,
    pub state: JobState,
    pub episodes_done: u64,
    pub episodes_total: u64,
    /// Most recent episode record, for progress display.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_record: Option<EpisodeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<TrainSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Evaluates the policy stored in a checkpoint on the standard reference
/// suite of the given config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRequest {
    pub config: TrainerConfig,
    pub checkpoint: PathBuf,
    /// Evaluate the best-by-eval policy stored in the checkpoint instead of
    /// the current one.
    #[serde(default)]
    pub use_best: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResponse {
    pub metrics: EvalMetrics,
}

/// One gradient cross-check: oracle mode (true plant Jacobians) always runs;
/// a learned-model check runs when a checkpoint is supplied.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckRequest {
    pub config: TrainerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Test hook: negate the policy feedback blocks (negative control).
    #[serde(default)]
    pub corrupt_k: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckResponse {
    pub oracle: GradCheckReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learned: Option<GradCheckReport>,
    /// Whether the oracle-mode relative error met the 1e-5 gate.
    pub oracle_pass: bool,
}

/// Policy-regret report for an existing training log against a comparator
/// checkpoint (its best-by-eval policy when available).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegretRequest {
    pub config: TrainerConfig,
    pub log_path: PathBuf,
    pub comparator_checkpoint: PathBuf,
    /// Episode window (1-based, inclusive) for the slope fit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<[u64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegretResponse {
    pub report: RegretReport,
}

/// Exports a training log to the fixed-column CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportRequest {
    pub log_path: PathBuf,
    pub out_path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportResponse {
    pub rows: usize,
    pub out_path: PathBuf,
}
