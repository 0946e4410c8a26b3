use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// How the dynamic threshold averages committed confidences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Mean of the ledger as it stands.
    #[default]
    RunningMean,
    /// Mean over currently committed positions of the confidence each had
    /// the first time it was ever committed in this run.
    InitMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaberConfig {
    /// Remask divisor: at most `max(1, drafts / mu)` tokens are reverted per step.
    pub mu: usize,
    /// Threshold used before anything has been committed.
    pub c_max: f64,
    /// Hard step limit is `ceil(step_cap_factor * L)`.
    pub step_cap_factor: f64,
    /// Backtracking is switched off after three consecutive steps whose net
    /// progress falls below this.
    pub min_net_progress: usize,
    pub backtracking_enabled: bool,
    pub adaptive_enabled: bool,
    pub threshold_mode: ThresholdMode,
    /// Also allow tokens whose confidence did not drop to be remasked.
    pub remask_nonpositive_drops: bool,
}

impl Default for SaberConfig {
    fn default() -> Self {
        Self {
            mu: 4,
            c_max: 0.9,
            step_cap_factor: 2.0,
            min_net_progress: 1,
            backtracking_enabled: true,
            adaptive_enabled: true,
            threshold_mode: ThresholdMode::RunningMean,
            remask_nonpositive_drops: false,
        }
    }
}

impl SaberConfig {
    /// Consecutive low-progress steps tolerated before backtracking stops.
    pub const STALL_LIMIT: u32 = 3;

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.mu == 0 {
            return Err(ConfigError::invalid("mu", "must be at least 1"));
        }
        if !(self.c_max > 0.0 && self.c_max <= 1.0) {
            return Err(ConfigError::invalid(
                "c_max",
                format!("{} is outside (0, 1]", self.c_max),
            ));
        }
        if !(self.step_cap_factor >= 1.0 && self.step_cap_factor.is_finite()) {
            return Err(ConfigError::invalid(
                "step_cap_factor",
                format!("{} is not a finite value >= 1", self.step_cap_factor),
            ));
        }
        Ok(())
    }

    pub fn step_cap(&self, gen_length: usize) -> u64 {
        (self.step_cap_factor * gen_length as f64).ceil() as u64
    }
}
