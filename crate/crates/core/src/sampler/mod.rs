//! Samplers and the generation loop.

mod baseline;
mod config;
mod generate;
mod saber;

pub use baseline::{BaselineOutcome, BaselineSampler, BaselineVariant};
pub use config::{SaberConfig, ThresholdMode};
pub use generate::{
    blocks, generate, sar_generate, GenerationResult, ParseStrategyError, RunContext, SaberVariant,
    StepRecord, StepSampler, Strategy, DEFAULT_BLOCK_LENGTH,
};
pub use saber::{
    compute_confidence_drops, compute_remask_budget, compute_threshold, most_confident_masked,
    saber_step, select_draft_set, select_remask_set, Draft, SaberSampler, StepOutcome,
};
