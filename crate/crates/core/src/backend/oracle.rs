//! Deterministic synthetic model.
//!
//! The oracle knows the intended completion and grows more confident at a
//! position as more of its neighbours are correctly filled in. A seeded
//! subset of positions is deceptive: while their neighbourhood is mostly
//! unresolved they confidently predict a wrong token, and they only turn
//! honest once at least half of the neighbourhood is correct. A wrong token
//! that has been committed looks progressively worse as correct context
//! accumulates around it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{binary_entropy, Backend, PositionPrediction, PredictionSet};
use crate::error::BackendError;
use crate::state::{SequenceState, TokenId, VocabSpec};

const DECEIVE_SALT: u64 = 0x6465_6365_6976_6521;
const WRONG_TOKEN_SALT: u64 = 0x7772_6f6e_6721_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    /// Ground-truth completion, one token per generation position.
    pub target: Vec<TokenId>,
    /// Context radius.
    pub window: usize,
    pub base_conf: f64,
    pub deceive_rate: f64,
    pub deceive_conf: f64,
    pub seed: u64,
}

impl OracleParams {
    pub const DEFAULT_WINDOW: usize = 12;
    pub const DEFAULT_BASE_CONF: f64 = 0.15;
    pub const DEFAULT_DECEIVE_CONF: f64 = 0.35;

    /// Standard fixture: a seeded random target over `vocab` (never the mask
    /// id) with the default window and confidence levels.
    pub fn fixture(gen_length: usize, deceive_rate: f64, seed: u64, vocab: VocabSpec) -> Self {
        Self {
            target: random_target(gen_length, seed, vocab),
            window: Self::DEFAULT_WINDOW,
            base_conf: Self::DEFAULT_BASE_CONF,
            deceive_rate,
            deceive_conf: Self::DEFAULT_DECEIVE_CONF,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::Input(m));
        if self.target.is_empty() {
            return bad("oracle target is empty".into());
        }
        if self.window == 0 {
            return bad("oracle window must be positive".into());
        }
        if !(self.base_conf > 0.0 && self.base_conf < 1.0) {
            return bad(format!("base_conf {} outside (0, 1)", self.base_conf));
        }
        if !(0.0..1.0).contains(&self.deceive_rate) {
            return bad(format!("deceive_rate {} outside [0, 1)", self.deceive_rate));
        }
        if !(self.deceive_conf > self.base_conf && self.deceive_conf < 1.0) {
            return bad(format!(
                "deceive_conf {} must lie in (base_conf, 1)",
                self.deceive_conf
            ));
        }
        Ok(())
    }

    /// Whether `index` is a deceptive position for this seed.
    pub fn is_deceptive(&self, index: usize) -> bool {
        unit_hash(self.seed, index as u64, DECEIVE_SALT) < self.deceive_rate
    }
}

/// Seeded completion of `len` tokens drawn uniformly from the non-mask ids.
pub(crate) fn random_target(len: usize, seed: u64, vocab: VocabSpec) -> Vec<TokenId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            let t = rng.gen_range(0..vocab.size() - 1);
            if t >= vocab.mask_id() {
                t + 1
            } else {
                t
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct OracleBackend {
    params: OracleParams,
}

impl OracleBackend {
    pub fn new(params: OracleParams) -> Result<Self, BackendError> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &OracleParams {
        &self.params
    }

    /// Number of correctly filled neighbours and in-range neighbour slots.
    fn context(&self, state: &SequenceState, index: usize) -> (usize, usize) {
        let gen = state.gen();
        let lo = index.saturating_sub(self.params.window);
        let hi = (index + self.params.window).min(gen.len() - 1);
        let mut correct = 0;
        let mut slots = 0;
        for j in (lo..=hi).filter(|&j| j != index) {
            slots += 1;
            if !state.is_masked(j) && gen[j] == self.params.target[j] {
                correct += 1;
            }
        }
        (correct, slots)
    }

    fn wrong_token(&self, index: usize, vocab: VocabSpec) -> TokenId {
        let target = self.params.target[index];
        // Candidates are every id except the mask and the target.
        let mut excluded = [vocab.mask_id(), target];
        excluded.sort_unstable();
        let span = u64::from(vocab.size() - 2);
        let mut tok = (mix(self.params.seed ^ WRONG_TOKEN_SALT, index as u64) % span) as TokenId;
        for e in excluded {
            if tok >= e {
                tok += 1;
            }
        }
        tok
    }

    pub fn oracle_predict(&self, state: &SequenceState) -> Result<PredictionSet, BackendError> {
        let p = &self.params;
        if state.len() != p.target.len() {
            return Err(BackendError::Input(format!(
                "state has {} positions but oracle target has {}",
                state.len(),
                p.target.len()
            )));
        }
        let vocab = state.vocab();
        if let Some(&t) = p
            .target
            .iter()
            .find(|&&t| t == vocab.mask_id() || !vocab.contains(t))
        {
            return Err(BackendError::Input(format!(
                "oracle target token {t} is not generatable"
            )));
        }
        if p.deceive_rate > 0.0 && vocab.size() < 3 {
            return Err(BackendError::Input(
                "deceptive positions need a vocabulary with at least 3 ids".into(),
            ));
        }

        let positions = (0..state.len())
            .map(|i| {
                let (k, n) = self.context(state, i);
                let ratio = if n == 0 { 0.0 } else { k as f64 / n as f64 };
                let honest = p.base_conf + (1.0 - p.base_conf) * ratio;
                let (top_token, top_prob) = if p.is_deceptive(i) && ratio < 0.5 {
                    (self.wrong_token(i, vocab), p.deceive_conf)
                } else {
                    (p.target[i], honest)
                };
                let cur_prob = (!state.is_masked(i)).then(|| {
                    if state.gen()[i] == p.target[i] {
                        honest
                    } else {
                        (1.0 - honest) / (k as f64 + 1.0)
                    }
                });
                PositionPrediction {
                    top_token,
                    top_prob,
                    cur_prob,
                    entropy: binary_entropy(top_prob),
                }
            })
            .collect();
        Ok(PredictionSet::new(positions))
    }
}

impl Backend for OracleBackend {
    fn predict(&self, state: &SequenceState) -> Result<PredictionSet, BackendError> {
        self.oracle_predict(state)
    }
}

fn mix(seed: u64, value: u64) -> u64 {
    // splitmix64 finalizer over the combined input
    let mut z = seed
        .wrapping_add(value.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit_hash(seed: u64, value: u64, salt: u64) -> f64 {
    (mix(seed ^ salt, value) >> 11) as f64 / (1u64 << 53) as f64
}
