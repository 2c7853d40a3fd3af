//! Thin blocking client for the ombrl service. One method per endpoint;
//! non-2xx responses surface the server's error body.

use std::time::Duration;

use ombrl_api as api;
use uuid::Uuid;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),
    /// The server answered with an error body.
    #[error("{kind}: {message}")]
    Service { kind: String, message: String },
}

pub type Result<T> = std::result::Result<T, ClientError>;

pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(base_url: &str) -> Result<Self> {
        Ok(Self {
            base: base_url.trim_end_matches('/').to_string(),
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(3600))
                .build()?,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}{}", self.base, api::API_BASE, path)
    }

    fn check<T: serde::de::DeserializeOwned>(resp: reqwest::blocking::Response) -> Result<T> {
        if resp.status().is_success() {
            Ok(resp.json()?)
        } else {
            let body: api::ErrorBody = resp.json().unwrap_or(api::ErrorBody {
                error: "malformed error body".into(),
                kind: "internal".into(),
            });
            Err(ClientError::Service {
                kind: body.kind,
                message: body.error,
            })
        }
    }

    pub fn health(&self) -> Result<api::HealthResponse> {
        Self::check(self.http.get(self.url("/health")).send()?)
    }

    pub fn start_train(&self, req: &api::TrainRequest) -> Result<api::TrainStarted> {
        Self::check(self.http.post(self.url("/train")).json(req).send()?)
    }

    pub fn job_status(&self, job_id: Uuid) -> Result<api::JobStatus> {
        Self::check(self.http.get(self.url(&format!("/jobs/{job_id}"))).send()?)
    }

    /// Polls a job to completion, forwarding each fresh record to `on_record`.
    pub fn wait_for_job(
        &self,
        job_id: Uuid,
        poll: Duration,
        mut on_record: impl FnMut(&api::EpisodeRecord),
    ) -> Result<api::JobStatus> {
        let mut seen = 0u64;
        loop {
            let status = self.job_status(job_id)?;
            if let Some(rec) = &status.last_record {
                if rec.episode + 1 > seen {
                    seen = rec.episode + 1;
                    on_record(rec);
                }
            }
            match status.state {
                api::JobState::Running => std::thread::sleep(poll),
                _ => return Ok(status),
            }
        }
    }

    pub fn eval(&self, req: &api::EvalRequest) -> Result<api::EvalResponse> {
        Self::check(self.http.post(self.url("/eval")).json(req).send()?)
    }

    pub fn grad_check(&self, req: &api::GradCheckRequest) -> Result<api::GradCheckResponse> {
        Self::check(self.http.post(self.url("/grad-check")).json(req).send()?)
    }

    pub fn regret(&self, req: &api::RegretRequest) -> Result<api::RegretResponse> {
        Self::check(self.http.post(self.url("/regret")).json(req).send()?)
    }

    pub fn export(&self, req: &api::ExportRequest) -> Result<api::ExportResponse> {
        Self::check(self.http.post(self.url("/export")).json(req).send()?)
    }
}
