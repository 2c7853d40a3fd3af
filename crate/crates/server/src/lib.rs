//! Axum service wrapping the engine: training runs as background jobs with
//! polling, evaluation and diagnostics as request/response calls. All file
//! artifacts (logs, checkpoints, CSV exports) are written on the server's
//! filesystem at the paths named in the request.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use uuid::Uuid;

use ombrl_api as api;
use ombrl_engine::checkpoint::checkpoint_load;
use ombrl_engine::diagnostics;
use ombrl_engine::gradient::PlantLinearization;
use ombrl_engine::logging::read_log;
use ombrl_engine::policy::MlpPolicy;
use ombrl_engine::reference::sample_reference;
use ombrl_engine::seed::{self, Stream};
use ombrl_engine::trainer::{evaluate_policy_on_suite, init_state, resume_state, run_training};
use ombrl_engine::EngineError;

/// Relative-error gate for oracle-mode gradient checks.
pub const ORACLE_GATE: f64 = 1e-5;

struct JobEntry {
    state: api::JobState,
    episodes_done: u64,
    episodes_total: u64,
    last_record: Option<api::EpisodeRecord>,
    summary: Option<api::TrainSummary>,
    error: Option<String>,
}

#[derive(Default)]
pub struct AppState {
    jobs: Mutex<HashMap<Uuid, Arc<Mutex<JobEntry>>>>,
}

/// Service error carrying the HTTP status and the engine's error kind.
struct ServiceError {
    status: StatusCode,
    body: api::ErrorBody,
}

impl ServiceError {
    fn internal(msg: String) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: api::ErrorBody {
                error: msg,
                kind: "internal".into(),
            },
        }
    }
}

impl From<EngineError> for ServiceError {
    fn from(e: EngineError) -> Self {
        let (status, kind) = match &e {
            EngineError::Config(_) => (StatusCode::BAD_REQUEST, "config"),
            EngineError::Contract(_) => (StatusCode::BAD_REQUEST, "contract"),
            EngineError::Numeric(_) => (StatusCode::UNPROCESSABLE_ENTITY, "numeric"),
            EngineError::Checkpoint { .. } => (StatusCode::BAD_REQUEST, "checkpoint"),
            EngineError::Log(_) => (StatusCode::BAD_REQUEST, "log"),
            EngineError::Io(_) => (StatusCode::BAD_REQUEST, "io"),
        };
        Self {
            status,
            body: api::ErrorBody {
                error: e.to_string(),
                kind: kind.into(),
            },
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type Result<T> = std::result::Result<T, ServiceError>;

async fn health() -> Json<api::HealthResponse> {
    Json(api::HealthResponse {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn start_train(
    State(app): State<Arc<AppState>>,
    Json(req): Json<api::TrainRequest>,
) -> Result<Json<api::TrainStarted>> {
    req.config.validate().map_err(ServiceError::from)?;
    let mut state = match &req.resume_from {
        Some(ckpt) => resume_state(&req.config, ckpt).map_err(ServiceError::from)?,
        None => init_state(&req.config).map_err(ServiceError::from)?,
    };
    let job_id = Uuid::new_v4();
    let entry = Arc::new(Mutex::new(JobEntry {
        state: api::JobState::Running,
        episodes_done: state.episode,
        episodes_total: req.config.trainer.episodes,
        last_record: None,
        summary: None,
        error: None,
    }));
    app.jobs.lock().unwrap().insert(job_id, entry.clone());

    tokio::task::spawn_blocking(move || {
        let progress = entry.clone();
        let mut observer = |rec: &api::EpisodeRecord| {
            let mut e = progress.lock().unwrap();
            e.episodes_done = rec.episode + 1;
            e.last_record = Some(rec.clone());
        };
        let result = run_training(&req.config, &mut state, Some(&mut observer));
        let mut e = entry.lock().unwrap();
        match result {
            Ok((_, summary)) => {
                e.summary = Some(summary);
                e.state = api::JobState::Done;
            }
            Err(err) => {
                e.error = Some(err.to_string());
                e.state = api::JobState::Failed;
            }
        }
    });
    Ok(Json(api::TrainStarted { job_id }))
}

async fn job_status(
    State(app): State<Arc<AppState>>,
    Path(job_id): Path<Uuid>,
) -> Result<Json<api::JobStatus>> {
    let entry = app.jobs.lock().unwrap().get(&job_id).cloned();
    let Some(entry) = entry else {
        return Err(ServiceError {
            status: StatusCode::NOT_FOUND,
            body: api::ErrorBody {
                error: format!("no such job {job_id}"),
                kind: "contract".into(),
            },
        });
    };
    let e = entry.lock().unwrap();
    Ok(Json(api::JobStatus {
        job_id,
        state: e.state,
        episodes_done: e.episodes_done,
        episodes_total: e.episodes_total,
        last_record: e.last_record.clone(),
        summary: e.summary.clone(),
        error: e.error.clone(),
    }))
}

/// Rebuilds a controller from a checkpoint, optionally preferring the
/// best-by-eval parameters.
fn policy_from_checkpoint(
    ckpt: &std::path::Path,
    use_best: bool,
) -> ombrl_engine::Result<(MlpPolicy, ombrl_engine::trainer::TrainerState)> {
    let state = checkpoint_load(ckpt)?;
    let mut policy = state.policy.clone();
    if use_best {
        if let Some(best) = &state.best_eval {
            policy.net.set_params(best.policy_params.clone())?;
        }
    }
    Ok((policy, state))
}

async fn eval(Json(req): Json<api::EvalRequest>) -> Result<Json<api::EvalResponse>> {
    let out = tokio::task::spawn_blocking(move || -> ombrl_engine::Result<api::EvalMetrics> {
        req.config.validate()?;
        let (policy, state) = policy_from_checkpoint(&req.checkpoint, req.use_best)?;
        let plant = req.config.plant_at_episode(state.episode)?;
        evaluate_policy_on_suite(&req.config, &plant, &policy)
    })
    .await
    .map_err(|e| ServiceError::internal(e.to_string()))?
    .map_err(ServiceError::from)?;
    Ok(Json(api::EvalResponse { metrics: out }))
}

async fn grad_check(Json(req): Json<api::GradCheckRequest>) -> Result<Json<api::GradCheckResponse>> {
    let out = tokio::task::spawn_blocking(move || -> ombrl_engine::Result<api::GradCheckResponse> {
        req.config.validate()?;
        if req.config.horizon() < 2 {
            return Err(EngineError::config(
                "grad-check needs a horizon of at least 2 steps",
            ));
        }
        if req.config.plant.noise_sigma > 0.0 {
            return Err(EngineError::config("grad-check requires a noise-free plant"));
        }
        let plant = req.config.plant_at_episode(0)?;
        let (policy, model) = match &req.checkpoint {
            Some(ckpt) => {
                let state = checkpoint_load(ckpt)?;
                (state.policy.clone(), Some(state.model))
            }
            None => (init_state(&req.config)?.policy, None),
        };
        let mut ref_rng =
            seed::rng_for_episode(req.config.trainer.seed, Stream::Reference, 0);
        let reference = sample_reference(
            &plant,
            req.config.horizon(),
            req.config.trainer.steps_per_trajectory,
            &mut ref_rng,
        )?;
        let fd_step = req.config.diagnostics.fd_step;
        let cap = req.config.diagnostics.fd_param_cap;
        let gamma = req.config.policy.gamma_discount;
        let oracle = diagnostics::grad_check(
            &plant,
            &policy,
            &PlantLinearization(&plant),
            &reference,
            gamma,
            fd_step,
            cap,
            req.corrupt_k,
        )?;
        let learned = match &model {
            Some(m) => Some(diagnostics::grad_check(
                &plant,
                &policy,
                m,
                &reference,
                gamma,
                fd_step,
                cap,
                req.corrupt_k,
            )?),
            None => None,
        };
        let oracle_pass = oracle.rel_error <= ORACLE_GATE;
        Ok(api::GradCheckResponse {
            oracle,
            learned,
            oracle_pass,
        })
    })
    .await
    .map_err(|e| ServiceError::internal(e.to_string()))?
    .map_err(ServiceError::from)?;
    Ok(Json(out))
}

async fn regret(Json(req): Json<api::RegretRequest>) -> Result<Json<api::RegretResponse>> {
    let out = tokio::task::spawn_blocking(move || -> ombrl_engine::Result<api::RegretReport> {
        req.config.validate()?;
        let log = read_log(&req.log_path)?;
        let (comparator, _) = policy_from_checkpoint(&req.comparator_checkpoint, true)?;
        let fit = req.fit_window.unwrap_or_else(|| {
            let t = req.config.trainer.episodes;
            [20.min(t), t]
        });
        diagnostics::policy_regret(
            &log,
            &req.config,
            &comparator,
            "best-by-eval policy from comparator checkpoint",
            fit,
        )
    })
    .await
    .map_err(|e| ServiceError::internal(e.to_string()))?
    .map_err(ServiceError::from)?;
    Ok(Json(api::RegretResponse { report: out }))
}

async fn export(Json(req): Json<api::ExportRequest>) -> Result<Json<api::ExportResponse>> {
    let out = tokio::task::spawn_blocking(move || -> ombrl_engine::Result<api::ExportResponse> {
        let log = read_log(&req.log_path)?;
        let csv = ombrl_engine::logging::to_csv(&log.records);
        if let Some(parent) = req.out_path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(&req.out_path, csv)?;
        Ok(api::ExportResponse {
            rows: log.records.len(),
            out_path: req.out_path.clone(),
        })
    })
    .await
    .map_err(|e| ServiceError::internal(e.to_string()))?
    .map_err(ServiceError::from)?;
    Ok(Json(out))
}

pub fn router() -> Router {
    let state = Arc::new(AppState::default());
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/train", post(start_train))
        .route("/api/v1/jobs/{id}", get(job_status))
        .route("/api/v1/eval", post(eval))
        .route("/api/v1/grad-check", post(grad_check))
        .route("/api/v1/regret", post(regret))
        .route("/api/v1/export", post(export))
        .with_state(state)
}

/// Binds the listener and serves until the task is dropped. Returns the
/// bound address (useful with port 0).
pub async fn bind(addr: SocketAddr) -> std::io::Result<(SocketAddr, tokio::net::TcpListener)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, listener))
}

pub async fn serve(listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router()).await
}
