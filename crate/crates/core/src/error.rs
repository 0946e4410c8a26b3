use thiserror::Error;

use crate::telemetry::Trace;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("position {0} is already unmasked")]
    AlreadyUnmasked(usize),
    #[error("position {0} is not unmasked")]
    NotUnmasked(usize),
    #[error("no masked positions remain")]
    NothingMasked,
}

/// Failures surfaced by a prediction backend. Each variant is a distinct
/// category so callers can tell a dead server from a bad payload.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("server returned status {status}: {message}")]
    Status { status: u16, message: String },
    #[error("request timed out")]
    Timeout,
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("invalid backend input: {0}")]
    Input(String),
    #[error("backend cannot report probabilities for committed tokens")]
    Incapable,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

impl ConfigError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Self::Invalid {
            field,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("event for step {got} recorded after step {last}")]
    OutOfOrder { last: u64, got: u64 },
    #[error("trace already carries a run_meta event")]
    DuplicateMeta,
    #[error("corrupt trace at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A generation run that could not finish normally.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("backend failure at step {step}: {source}")]
    Backend {
        step: u64,
        #[source]
        source: BackendError,
        /// Everything recorded up to and including the abort event.
        partial: Box<Trace>,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Failure inside a single sampler step.
#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}
