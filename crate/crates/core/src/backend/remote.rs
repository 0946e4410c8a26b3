//! HTTP client for an external model server.
//!
//! `POST /v1/predict` with a JSON body carrying the prompt, the generation
//! region (mask sentinel written explicitly), the mask id and a run id. The
//! server answers with one entry per generation position, sorted by index.
//! Non-2xx replies carry `{"error": "..."}`.

use std::io::Read;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, PositionPrediction, PredictionSet};
use crate::error::BackendError;
use crate::state::{SequenceState, TokenId};

/// Environment variable holding an optional bearer token for the server.
pub const AUTH_TOKEN_ENV: &str = "SABER_REMOTE_TOKEN";

const MAX_RESPONSE_BYTES: u64 = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub prompt: Vec<TokenId>,
    pub gen: Vec<TokenId>,
    pub mask_id: TokenId,
    pub run_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WirePosition {
    pub index: usize,
    pub top_token: TokenId,
    pub top_prob: f64,
    pub cur_prob: Option<f64>,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictResponse {
    pub positions: Vec<WirePosition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub error: String,
}

impl PredictRequest {
    pub fn from_state(state: &SequenceState, run_id: impl Into<String>) -> Self {
        Self {
            prompt: state.prompt().to_vec(),
            gen: state.gen().to_vec(),
            mask_id: state.vocab().mask_id(),
            run_id: run_id.into(),
        }
    }
}

impl PredictResponse {
    pub fn from_predictions(preds: &PredictionSet) -> Self {
        Self {
            positions: preds
                .iter()
                .enumerate()
                .map(|(index, p)| WirePosition {
                    index,
                    top_token: p.top_token,
                    top_prob: p.top_prob,
                    cur_prob: p.cur_prob,
                    entropy: p.entropy,
                })
                .collect(),
        }
    }

    /// Decodes a response body and checks it against the state it answers.
    pub fn decode(body: &str, state: &SequenceState) -> Result<PredictionSet, BackendError> {
        let resp: PredictResponse =
            serde_json::from_str(body).map_err(|e| BackendError::Schema(e.to_string()))?;
        resp.into_predictions(state)
    }

    pub fn into_predictions(self, state: &SequenceState) -> Result<PredictionSet, BackendError> {
        if let Some((expected, p)) = self
            .positions
            .iter()
            .enumerate()
            .find(|(i, p)| p.index != *i)
        {
            return Err(BackendError::Schema(format!(
                "positions must be sorted and contiguous: expected index {expected}, got {}",
                p.index
            )));
        }
        let set = PredictionSet::new(
            self.positions
                .into_iter()
                .map(|p| PositionPrediction {
                    top_token: p.top_token,
                    top_prob: p.top_prob,
                    cur_prob: p.cur_prob,
                    entropy: p.entropy,
                })
                .collect(),
        );
        set.validate(state)?;
        Ok(set)
    }
}

/// Blocking client for the predict endpoint.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    agent: ureq::Agent,
    endpoint: String,
    run_id: String,
    auth_token: Option<String>,
}

impl RemoteBackend {
    /// `base_url` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self {
            agent,
            endpoint: format!("{}/v1/predict", base_url.trim_end_matches('/')),
            run_id: String::new(),
            auth_token: std::env::var(AUTH_TOKEN_ENV).ok().filter(|t| !t.is_empty()),
        }
    }

    pub fn with_run_id(mut self, run_id: impl Into<String>) -> Self {
        self.run_id = run_id.into();
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn remote_predict(&self, state: &SequenceState) -> Result<PredictionSet, BackendError> {
        let body = serde_json::to_string(&PredictRequest::from_state(state, &self.run_id))
            .map_err(|e| BackendError::Input(e.to_string()))?;
        let mut req = self
            .agent
            .post(&self.endpoint)
            .set("Content-Type", "application/json");
        if let Some(token) = &self.auth_token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        match req.send_string(&body) {
            Ok(resp) => {
                let text = read_body(resp)?;
                PredictResponse::decode(&text, state)
            }
            Err(ureq::Error::Status(status, resp)) => {
                let text = read_body(resp).unwrap_or_default();
                let message = serde_json::from_str::<WireError>(&text)
                    .map(|e| e.error)
                    .unwrap_or(text);
                Err(BackendError::Status { status, message })
            }
            Err(ureq::Error::Transport(t)) => Err(transport_error(&t)),
        }
    }
}

impl Backend for RemoteBackend {
    fn predict(&self, state: &SequenceState) -> Result<PredictionSet, BackendError> {
        self.remote_predict(state)
    }
}

fn read_body(resp: ureq::Response) -> Result<String, BackendError> {
    let mut text = String::new();
    resp.into_reader()
        .take(MAX_RESPONSE_BYTES)
        .read_to_string(&mut text)
        .map_err(|e| io_error(&e))?;
    Ok(text)
}

fn io_error(e: &std::io::Error) -> BackendError {
    match e.kind() {
        std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => BackendError::Timeout,
        std::io::ErrorKind::InvalidData => BackendError::Schema(e.to_string()),
        _ => BackendError::Transport(e.to_string()),
    }
}

fn transport_error(t: &ureq::Transport) -> BackendError {
    let mut source = std::error::Error::source(t);
    while let Some(err) = source {
        if let Some(io) = err.downcast_ref::<std::io::Error>() {
            if matches!(
                io.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            ) {
                return BackendError::Timeout;
            }
        }
        source = err.source();
    }
    BackendError::Transport(t.to_string())
}
