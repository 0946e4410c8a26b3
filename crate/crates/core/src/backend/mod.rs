//! The prediction contract every sampler consumes.
//!
//! A backend sees the whole partially masked sequence and answers, for every
//! generation position, with its top token, that token's probability, the
//! probability of whatever token is currently written there (committed
//! positions only) and the entropy of the position's distribution. That tuple
//! is all any sampler in this crate needs, so full vocabulary distributions
//! never cross the boundary.

mod oracle;
mod remote;
mod scripted;

pub use oracle::{OracleBackend, OracleParams};
pub use remote::{
    PredictRequest, PredictResponse, RemoteBackend, WireError, WirePosition, AUTH_TOKEN_ENV,
};
pub use scripted::ScriptedBackend;

use serde::{Deserialize, Serialize};

use crate::error::BackendError;
use crate::state::{SequenceState, TokenId};

/// Model output at a single generation position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionPrediction {
    pub top_token: TokenId,
    pub top_prob: f64,
    /// Probability of the token currently committed at this position.
    /// Absent for masked positions.
    pub cur_prob: Option<f64>,
    /// Shannon entropy in nats.
    pub entropy: f64,
}

/// One prediction per generation position, indexed by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    positions: Vec<PositionPrediction>,
}

impl PredictionSet {
    pub fn new(positions: Vec<PositionPrediction>) -> Self {
        Self { positions }
    }

    pub fn get(&self, index: usize) -> &PositionPrediction {
        &self.positions[index]
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PositionPrediction> {
        self.positions.iter()
    }

    pub fn into_inner(self) -> Vec<PositionPrediction> {
        self.positions
    }

    /// Checks the set against the state it was produced for: full coverage,
    /// probabilities in range, `cur_prob` only on committed positions and no
    /// top token equal to the mask sentinel.
    pub fn validate(&self, state: &SequenceState) -> Result<(), BackendError> {
        if self.positions.len() != state.len() {
            return Err(BackendError::Schema(format!(
                "expected {} positions, got {}",
                state.len(),
                self.positions.len()
            )));
        }
        let vocab = state.vocab();
        for (i, p) in self.positions.iter().enumerate() {
            if !(p.top_prob > 0.0 && p.top_prob <= 1.0) {
                return Err(BackendError::Schema(format!(
                    "top_prob {} at position {i} outside (0, 1]",
                    p.top_prob
                )));
            }
            if !(p.entropy >= 0.0 && p.entropy.is_finite()) {
                return Err(BackendError::Schema(format!(
                    "entropy {} at position {i} is negative or not finite",
                    p.entropy
                )));
            }
            if p.top_token == vocab.mask_id() || !vocab.contains(p.top_token) {
                return Err(BackendError::Schema(format!(
                    "top_token {} at position {i} is not a generatable token",
                    p.top_token
                )));
            }
            match (state.is_masked(i), p.cur_prob) {
                (true, Some(_)) => {
                    return Err(BackendError::Schema(format!(
                        "cur_prob present for masked position {i}"
                    )))
                }
                (false, Some(c)) if !(0.0..=1.0).contains(&c) => {
                    return Err(BackendError::Schema(format!(
                        "cur_prob {c} at position {i} outside [0, 1]"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for PredictionSet {
    type Output = PositionPrediction;

    fn index(&self, index: usize) -> &PositionPrediction {
        &self.positions[index]
    }
}

/// Something that can score a partially masked sequence.
///
/// Implementations must tolerate concurrent calls from independent runs; a
/// single run always calls sequentially.
pub trait Backend: Send + Sync {
    fn predict(&self, state: &SequenceState) -> Result<PredictionSet, BackendError>;

    /// Whether `cur_prob` is reported for committed positions. Backtracking
    /// refuses to run on backends that answer `false`.
    fn reevaluates_committed(&self) -> bool {
        true
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn predict(&self, state: &SequenceState) -> Result<PredictionSet, BackendError> {
        (**self).predict(state)
    }

    fn reevaluates_committed(&self) -> bool {
        (**self).reevaluates_committed()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn predict(&self, state: &SequenceState) -> Result<PredictionSet, BackendError> {
        (**self).predict(state)
    }

    fn reevaluates_committed(&self) -> bool {
        (**self).reevaluates_committed()
    }
}

/// Entropy of a two-mass distribution `{p, 1 - p}` in nats.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}
