//! Sampling engine for masked diffusion language models.
//!
//! The headline sampler drafts every masked position whose confidence
//! reaches the running mean confidence of the tokens committed so far, so
//! decoding grows more parallel as context accumulates, and then reverts the
//! committed tokens whose probability fell the most once the new drafts are
//! in place. One-token baselines, top-k and static-threshold parallel
//! decoding and semi-autoregressive blocks are provided for comparison.
//!
//! Models sit behind [`backend::Backend`]. A deterministic synthetic
//! [`backend::OracleBackend`] makes every behaviour testable on a laptop and
//! [`backend::RemoteBackend`] speaks a small JSON protocol to a real model
//! server. Every decision is written to a replayable JSON Lines trace.
//!
//! ```
//! use saber::backend::{OracleBackend, OracleParams};
//! use saber::sampler::{generate, RunContext, SaberConfig, Strategy};
//! use saber::state::{SequenceState, VocabSpec};
//!
//! let vocab = VocabSpec::new(1024, 1023).unwrap();
//! let params = OracleParams::fixture(32, 0.1, 7, vocab);
//! let backend = OracleBackend::new(params).unwrap();
//! let state = SequenceState::new(vec![], 32, vocab).unwrap();
//! let result = generate(
//!     state,
//!     &backend,
//!     &SaberConfig::default(),
//!     &"saber".parse::<Strategy>().unwrap(),
//!     &RunContext::new("doc", 7),
//! )
//! .unwrap();
//! assert!(result.completed);
//! assert!(result.steps_used < 32);
//! ```

pub mod backend;
pub mod cli;
pub mod error;
pub mod sampler;
pub mod state;
pub mod telemetry;

pub use error::{BackendError, ConfigError, RunError, StateError, StepError, TraceError};
