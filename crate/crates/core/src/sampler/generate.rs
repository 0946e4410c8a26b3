use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::baseline::{BaselineSampler, BaselineVariant};
use super::config::{SaberConfig, ThresholdMode};
use super::saber::{Draft, SaberSampler};
use crate::backend::Backend;
use crate::error::{BackendError, RunError, StepError};
use crate::state::{SequenceState, TokenId};
use crate::telemetry::{RunEnd, RunMeta, Trace, TraceEvent};

/// Default block length for semi-autoregressive decoding.
pub const DEFAULT_BLOCK_LENGTH: usize = 128;

/// Component ablations of the Saber sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaberVariant {
    Full,
    /// One token per step, backtracking kept.
    NoAccel,
    NoBacktrack,
    Neither,
    /// Threshold from first-commit confidences.
    InitMean,
}

impl SaberVariant {
    pub fn apply(self, cfg: &SaberConfig) -> SaberConfig {
        let mut cfg = cfg.clone();
        match self {
            SaberVariant::Full => {}
            SaberVariant::NoAccel => cfg.adaptive_enabled = false,
            SaberVariant::NoBacktrack => cfg.backtracking_enabled = false,
            SaberVariant::Neither => {
                cfg.adaptive_enabled = false;
                cfg.backtracking_enabled = false;
            }
            SaberVariant::InitMean => cfg.threshold_mode = ThresholdMode::InitMean,
        }
        cfg
    }
}

/// Which sampler drives a run.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Saber(SaberVariant),
    Baseline(BaselineVariant),
    /// Left-to-right blocks, each fully decoded by `inner`.
    Sar {
        block_length: usize,
        inner: Box<Strategy>,
    },
}

impl Strategy {
    /// Full sampler followed by its four ablations.
    pub fn ablation_suite() -> Vec<Strategy> {
        [
            SaberVariant::Full,
            SaberVariant::NoAccel,
            SaberVariant::NoBacktrack,
            SaberVariant::Neither,
            SaberVariant::InitMean,
        ]
        .into_iter()
        .map(Strategy::Saber)
        .collect()
    }

    pub fn with_block_length(self, block_length: usize) -> Self {
        match self {
            Strategy::Sar { inner, .. } => Strategy::Sar {
                block_length,
                inner,
            },
            other => other,
        }
    }

    fn uses_backtracking(&self, cfg: &SaberConfig) -> bool {
        match self {
            Strategy::Saber(v) => v.apply(cfg).backtracking_enabled,
            Strategy::Baseline(_) => false,
            Strategy::Sar { inner, .. } => inner.uses_backtracking(cfg),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Saber(v) => f.write_str(match v {
                SaberVariant::Full => "saber",
                SaberVariant::NoAccel => "saber-no-accel",
                SaberVariant::NoBacktrack => "saber-no-backtrack",
                SaberVariant::Neither => "saber-neither",
                SaberVariant::InitMean => "saber-init-mean",
            }),
            Strategy::Baseline(b) => match b {
                BaselineVariant::Random => f.write_str("random"),
                BaselineVariant::Entropy => f.write_str("entropy"),
                BaselineVariant::Confidence => f.write_str("confidence"),
                BaselineVariant::ConfidenceTopK(k) => write!(f, "confidence-p:{k}"),
                BaselineVariant::StaticThreshold(t) => write!(f, "static:{t}"),
            },
            Strategy::Sar { inner, .. } => write!(f, "sar:{inner}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown strategy `{0}`")]
pub struct ParseStrategyError(pub String);

impl FromStr for Strategy {
    type Err = ParseStrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseStrategyError(s.to_string());
        let s = s.trim();
        let strategy = match s {
            "saber" => Strategy::Saber(SaberVariant::Full),
            "saber-no-accel" => Strategy::Saber(SaberVariant::NoAccel),
            "saber-no-backtrack" => Strategy::Saber(SaberVariant::NoBacktrack),
            "saber-neither" => Strategy::Saber(SaberVariant::Neither),
            "saber-init-mean" => Strategy::Saber(SaberVariant::InitMean),
            "random" => Strategy::Baseline(BaselineVariant::Random),
            "entropy" => Strategy::Baseline(BaselineVariant::Entropy),
            "confidence" => Strategy::Baseline(BaselineVariant::Confidence),
            "sar" => Strategy::Sar {
                block_length: DEFAULT_BLOCK_LENGTH,
                inner: Box::new(Strategy::Baseline(BaselineVariant::Confidence)),
            },
            _ => {
                if let Some(k) = s.strip_prefix("confidence-p:") {
                    let k: usize = k.parse().map_err(|_| err())?;
                    if k == 0 {
                        return Err(err());
                    }
                    Strategy::Baseline(BaselineVariant::ConfidenceTopK(k))
                } else if let Some(t) = s.strip_prefix("static:") {
                    let t: f64 = t.parse().map_err(|_| err())?;
                    if !(0.0..=1.0).contains(&t) {
                        return Err(err());
                    }
                    Strategy::Baseline(BaselineVariant::StaticThreshold(t))
                } else if let Some(inner) = s.strip_prefix("sar:") {
                    let inner: Strategy = inner.parse()?;
                    if matches!(inner, Strategy::Sar { .. }) {
                        return Err(err());
                    }
                    Strategy::Sar {
                        block_length: DEFAULT_BLOCK_LENGTH,
                        inner: Box::new(inner),
                    }
                } else {
                    return Err(err());
                }
            }
        };
        Ok(strategy)
    }
}

impl Serialize for Strategy {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// What one sampler step did, in the form the run loop records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepRecord {
    pub threshold: Option<f64>,
    pub fallback: Option<usize>,
    pub unmasked: Vec<Draft>,
    /// `(index, drop)` pairs.
    pub remasked: Vec<(usize, f64)>,
    pub backend_calls: u32,
}

/// Common step contract for every sampler.
pub trait StepSampler {
    /// Performs one denoising step restricted to `region`. Does not advance
    /// the state's step counter.
    fn step_region(
        &mut self,
        state: &mut SequenceState,
        backend: &dyn Backend,
        region: Range<usize>,
    ) -> Result<StepRecord, StepError>;
}

impl StepSampler for SaberSampler {
    fn step_region(
        &mut self,
        state: &mut SequenceState,
        backend: &dyn Backend,
        region: Range<usize>,
    ) -> Result<StepRecord, StepError> {
        let out = self.step_in(state, backend, region)?;
        Ok(StepRecord {
            threshold: Some(out.threshold),
            fallback: out.fallback_used.then(|| out.drafted[0].index),
            remasked: out.remasked.iter().map(|j| (*j, out.drops[j])).collect(),
            unmasked: out.drafted,
            backend_calls: out.backend_calls,
        })
    }
}

impl StepSampler for BaselineSampler {
    fn step_region(
        &mut self,
        state: &mut SequenceState,
        backend: &dyn Backend,
        region: Range<usize>,
    ) -> Result<StepRecord, StepError> {
        let out = self.step_in(state, backend, region)?;
        Ok(StepRecord {
            threshold: None,
            fallback: out.fallback_used.then(|| out.unmasked[0].index),
            unmasked: out.unmasked,
            remasked: Vec::new(),
            backend_calls: 1,
        })
    }
}

/// Identity and provenance of a run, written into the trace header.
#[derive(Debug, Clone, Default)]
pub struct RunContext {
    pub run_id: String,
    /// Seeds the random baseline.
    pub seed: u64,
    pub target: Option<Vec<TokenId>>,
    pub config: serde_json::Value,
}

impl RunContext {
    pub fn new(run_id: impl Into<String>, seed: u64) -> Self {
        Self {
            run_id: run_id.into(),
            seed,
            ..Default::default()
        }
    }

    pub fn with_target(mut self, target: Vec<TokenId>) -> Self {
        self.target = Some(target);
        self
    }

    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = config;
        self
    }
}

#[derive(Debug, Clone)]
pub struct GenerationResult {
    pub run_id: String,
    pub final_state: SequenceState,
    pub steps_used: u64,
    pub backend_calls: u64,
    /// Every position unmasked.
    pub completed: bool,
    pub trace: Trace,
}

fn build_sampler(strategy: &Strategy, cfg: &SaberConfig, seed: u64) -> Box<dyn StepSampler> {
    match strategy {
        Strategy::Saber(v) => Box::new(SaberSampler::new(v.apply(cfg))),
        Strategy::Baseline(b) => Box::new(BaselineSampler::new(*b, seed)),
        Strategy::Sar { inner, .. } => build_sampler(inner, cfg, seed),
    }
}

/// Decodes `state` with `strategy` until every position is unmasked or the
/// step cap `ceil(step_cap_factor * L)` is reached.
pub fn generate(
    state: SequenceState,
    backend: &dyn Backend,
    cfg: &SaberConfig,
    strategy: &Strategy,
    ctx: &RunContext,
) -> Result<GenerationResult, RunError> {
    let regions = match strategy {
        Strategy::Sar { block_length, .. } => blocks(state.len(), *block_length)?,
        _ => std::iter::once(0..state.len()).collect(),
    };
    run(state, backend, cfg, strategy, ctx, regions)
}

/// Semi-autoregressive decoding: block `b` is fully decoded by `inner`
/// before any position of block `b + 1` is considered.
pub fn sar_generate(
    state: SequenceState,
    backend: &dyn Backend,
    cfg: &SaberConfig,
    block_length: usize,
    inner: &Strategy,
    ctx: &RunContext,
) -> Result<GenerationResult, RunError> {
    let strategy = Strategy::Sar {
        block_length,
        inner: Box::new(inner.clone()),
    };
    generate(state, backend, cfg, &strategy, ctx)
}

/// Consecutive blocks of `block_length` covering `0..len`; the last one may be shorter.
pub fn blocks(len: usize, block_length: usize) -> Result<Vec<Range<usize>>, RunError> {
    if block_length == 0 {
        return Err(
            crate::error::ConfigError::invalid("block_length", "must be at least 1").into(),
        );
    }
    Ok((0..len)
        .step_by(block_length)
        .map(|start| start..(start + block_length).min(len))
        .collect())
}

fn run(
    mut state: SequenceState,
    backend: &dyn Backend,
    cfg: &SaberConfig,
    strategy: &Strategy,
    ctx: &RunContext,
    regions: Vec<Range<usize>>,
) -> Result<GenerationResult, RunError> {
    cfg.validate()?;
    if let Strategy::Sar { inner, .. } = strategy {
        if matches!(**inner, Strategy::Sar { .. }) {
            return Err(
                crate::error::ConfigError::invalid("strategy", "SAR blocks cannot nest").into(),
            );
        }
    }

    let mut trace = Trace::new();
    let vocab = state.vocab();
    trace.record(TraceEvent::run_meta(RunMeta {
        run_id: ctx.run_id.clone(),
        strategy: strategy.to_string(),
        seed: ctx.seed,
        gen_length: state.len(),
        vocab_size: vocab.size(),
        mask_id: vocab.mask_id(),
        prompt: state.prompt().to_vec(),
        target: ctx.target.clone(),
        config: ctx.config.clone(),
    }))?;

    if strategy.uses_backtracking(cfg) && !backend.reevaluates_committed() {
        let step = state.step();
        trace.record(TraceEvent::abort(step, BackendError::Incapable.to_string()))?;
        return Err(RunError::Backend {
            step,
            source: BackendError::Incapable,
            partial: Box::new(trace),
        });
    }

    let mut sampler = build_sampler(strategy, cfg, ctx.seed);
    let cap = cfg.step_cap(state.len());
    let mut backend_calls = 0u64;

    'regions: for region in regions {
        while region.clone().any(|i| state.is_masked(i)) {
            if state.step() >= cap {
                break 'regions;
            }
            let step = state.step();
            let record = match sampler.step_region(&mut state, backend, region.clone()) {
                Ok(r) => r,
                Err(StepError::Backend(source)) => {
                    trace.record(TraceEvent::abort(step, source.to_string()))?;
                    return Err(RunError::Backend {
                        step,
                        source,
                        partial: Box::new(trace),
                    });
                }
                Err(StepError::State(e)) => return Err(e.into()),
            };
            backend_calls += u64::from(record.backend_calls);
            if let Some(t) = record.threshold {
                trace.record(TraceEvent::threshold(step, t))?;
            }
            if let Some(i) = record.fallback {
                trace.record(TraceEvent::fallback(step, i))?;
            }
            for d in &record.unmasked {
                trace.record(TraceEvent::unmask(step, d.index, d.token, d.confidence))?;
            }
            for &(j, drop) in &record.remasked {
                trace.record(TraceEvent::remask(step, j, drop))?;
            }
            state.advance_step();
        }
    }

    let completed = state.is_complete();
    let steps_used = state.step();
    trace.record(TraceEvent::run_end(
        steps_used,
        RunEnd {
            steps_used,
            backend_calls,
            completed,
        },
    ))?;
    Ok(GenerationResult {
        run_id: ctx.run_id.clone(),
        final_state: state,
        steps_used,
        backend_calls,
        completed,
        trace,
    })
}
