//! Adaptive parallel unmasking with backtracking remasking.
//!
//! Each step drafts every masked position whose top-prediction confidence
//! reaches the mean confidence of the tokens committed so far, then asks the
//! model to rescore the previously committed tokens in the new context and
//! reverts the few whose probability fell the most.

use std::collections::BTreeMap;
use std::ops::Range;

use super::config::{SaberConfig, ThresholdMode};
use crate::backend::{Backend, PredictionSet};
use crate::error::{BackendError, StateError, StepError};
use crate::state::{compensated_mean, SequenceState, TokenId};

/// A position committed in a step, with the confidence it was committed at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draft {
    pub index: usize,
    pub token: TokenId,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub threshold: f64,
    /// Draft set, ascending by index.
    pub drafted: Vec<Draft>,
    pub budget: usize,
    /// Confidence drop of each previously committed position that was rescored.
    pub drops: BTreeMap<usize, f64>,
    /// Remasked positions, largest drop first.
    pub remasked: Vec<usize>,
    pub fallback_used: bool,
    /// Whether the rescoring pass ran this step.
    pub backtracked: bool,
    pub backend_calls: u32,
}

impl StepOutcome {
    pub fn net_progress(&self) -> isize {
        self.drafted.len() as isize - self.remasked.len() as isize
    }
}

/// Threshold for the next draft: `c_max` while nothing is committed,
/// otherwise the mean committed confidence under `cfg.threshold_mode`.
/// `first_unmask` maps each position to the confidence it had when it was
/// first committed in this run.
pub fn compute_threshold(
    state: &SequenceState,
    cfg: &SaberConfig,
    first_unmask: &BTreeMap<usize, f64>,
) -> f64 {
    let mean = match cfg.threshold_mode {
        ThresholdMode::RunningMean => state.ledger_mean(),
        ThresholdMode::InitMean => compensated_mean(
            state
                .ledger()
                .iter()
                .map(|(i, c)| first_unmask.get(i).copied().unwrap_or(*c)),
        ),
    };
    mean.unwrap_or(cfg.c_max)
}

/// Masked positions in `region` whose top probability is at least `threshold`.
pub fn select_draft_set(
    preds: &PredictionSet,
    state: &SequenceState,
    region: Range<usize>,
    threshold: f64,
) -> Vec<Draft> {
    region
        .filter(|&i| state.is_masked(i) && preds[i].top_prob >= threshold)
        .map(|i| draft_at(preds, i))
        .collect()
}

/// Masked position in `region` with the highest top probability; lowest
/// index wins ties.
pub fn most_confident_masked(
    preds: &PredictionSet,
    state: &SequenceState,
    region: Range<usize>,
) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in region.filter(|&i| state.is_masked(i)) {
        if best.is_none_or(|b| preds[i].top_prob > preds[b].top_prob) {
            best = Some(i);
        }
    }
    best
}

pub(crate) fn draft_at(preds: &PredictionSet, index: usize) -> Draft {
    Draft {
        index,
        token: preds[index].top_token,
        confidence: preds[index].top_prob,
    }
}

/// `max(1, floor(draft_size / mu))`.
pub fn compute_remask_budget(draft_size: usize, mu: usize) -> usize {
    (draft_size / mu.max(1)).max(1)
}

/// `previous[j] - reeval[j].cur_prob` for every previously committed `j`.
/// Negative drops are kept.
pub fn compute_confidence_drops(
    previous: &BTreeMap<usize, f64>,
    reeval: &PredictionSet,
) -> Result<BTreeMap<usize, f64>, BackendError> {
    previous
        .iter()
        .map(|(&j, &c)| {
            let cur = reeval.get(j).cur_prob.ok_or(BackendError::Incapable)?;
            Ok((j, c - cur))
        })
        .collect()
}

/// The `budget` positions with the largest drop, lowest index first among
/// equals. Positions whose confidence did not drop are skipped unless
/// `allow_nonpositive`.
pub fn select_remask_set(
    drops: &BTreeMap<usize, f64>,
    budget: usize,
    allow_nonpositive: bool,
) -> Vec<usize> {
    let mut ranked: Vec<(usize, f64)> = drops
        .iter()
        .map(|(&j, &d)| (j, d))
        .filter(|&(_, d)| allow_nonpositive || d > 0.0)
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(budget).map(|(j, _)| j).collect()
}

/// Saber sampler for one run. Holds the per-run memory the step needs
/// beyond the sequence itself: first-commit confidences and the progress guard.
#[derive(Debug, Clone)]
pub struct SaberSampler {
    cfg: SaberConfig,
    first_unmask: BTreeMap<usize, f64>,
    stalled_steps: u32,
    guard_tripped: bool,
}

impl SaberSampler {
    pub fn new(cfg: SaberConfig) -> Self {
        Self {
            cfg,
            first_unmask: BTreeMap::new(),
            stalled_steps: 0,
            guard_tripped: false,
        }
    }

    pub fn config(&self) -> &SaberConfig {
        &self.cfg
    }

    /// True once the progress guard has switched backtracking off.
    pub fn guard_tripped(&self) -> bool {
        self.guard_tripped
    }

    pub fn first_unmask(&self) -> &BTreeMap<usize, f64> {
        &self.first_unmask
    }

    /// Runs one step over the whole generation region.
    pub fn step<B: Backend + ?Sized>(
        &mut self,
        state: &mut SequenceState,
        backend: &B,
    ) -> Result<StepOutcome, StepError> {
        let len = state.len();
        self.step_in(state, backend, 0..len)
    }

    /// Runs one step with drafting and remasking confined to `region`.
    /// Does not advance the state's step counter.
    pub fn step_in<B: Backend + ?Sized>(
        &mut self,
        state: &mut SequenceState,
        backend: &B,
        region: Range<usize>,
    ) -> Result<StepOutcome, StepError> {
        if !region.clone().any(|i| state.is_masked(i)) {
            return Err(StateError::NothingMasked.into());
        }
        let mut calls = 1;
        let preds = backend.predict(state)?;
        preds.validate(state)?;

        let threshold = compute_threshold(state, &self.cfg, &self.first_unmask);
        let mut drafted = if self.cfg.adaptive_enabled {
            select_draft_set(&preds, state, region.clone(), threshold)
        } else {
            Vec::new()
        };
        let mut fallback_used = false;
        if drafted.is_empty() {
            let best = most_confident_masked(&preds, state, region.clone())
                .expect("region has a masked position");
            drafted.push(draft_at(&preds, best));
            fallback_used = self.cfg.adaptive_enabled;
        }

        let previous: BTreeMap<usize, f64> = state
            .ledger()
            .range(region.clone())
            .map(|(&j, &c)| (j, c))
            .collect();
        for d in &drafted {
            state.apply_unmask(d.index, d.token, d.confidence)?;
            self.first_unmask.entry(d.index).or_insert(d.confidence);
        }

        let budget = compute_remask_budget(drafted.len(), self.cfg.mu);
        let backtrack =
            self.cfg.backtracking_enabled && !self.guard_tripped && !previous.is_empty();
        let mut drops = BTreeMap::new();
        let mut remasked = Vec::new();
        if backtrack {
            calls += 1;
            let reeval = backend.predict(state)?;
            reeval.validate(state)?;
            drops = compute_confidence_drops(&previous, &reeval)?;
            remasked = select_remask_set(&drops, budget, self.cfg.remask_nonpositive_drops);
            for &j in &remasked {
                state.apply_remask(j)?;
            }
        }

        let outcome = StepOutcome {
            threshold,
            drafted,
            budget,
            drops,
            remasked,
            fallback_used,
            backtracked: backtrack,
            backend_calls: calls,
        };
        if self.cfg.backtracking_enabled && !self.guard_tripped {
            if outcome.net_progress() < self.cfg.min_net_progress as isize {
                self.stalled_steps += 1;
            } else {
                self.stalled_steps = 0;
            }
            if self.stalled_steps >= SaberConfig::STALL_LIMIT {
                self.guard_tripped = true;
            }
        }
        Ok(outcome)
    }
}

/// One Saber step on the whole sequence with a fresh per-run memory.
/// Convenience for single-step use; loops should keep a [`SaberSampler`].
pub fn saber_step<B: Backend + ?Sized>(
    state: &mut SequenceState,
    backend: &B,
    cfg: &SaberConfig,
) -> Result<StepOutcome, StepError> {
    let mut sampler = SaberSampler::new(cfg.clone());
    sampler.first_unmask = state.ledger().clone();
    let outcome = sampler.step(state, backend)?;
    state.advance_step();
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{binary_entropy, PositionPrediction, ScriptedBackend};
    use crate::state::VocabSpec;

    fn vocab() -> VocabSpec {
        VocabSpec::new(100, 0).unwrap()
    }

    fn masked(p: f64) -> PositionPrediction {
        PositionPrediction {
            top_token: 10,
            top_prob: p,
            cur_prob: None,
            entropy: binary_entropy(p),
        }
    }

    fn set(probs: &[f64]) -> PredictionSet {
        PredictionSet::new(probs.iter().map(|&p| masked(p)).collect())
    }

    #[test]
    fn threshold_empty_and_mean() {
        let cfg = SaberConfig::default();
        let mut s = SequenceState::new(vec![], 4, vocab()).unwrap();
        assert_eq!(compute_threshold(&s, &cfg, &BTreeMap::new()), 0.9);
        s.apply_unmask(0, 1, 0.8).unwrap();
        s.apply_unmask(1, 1, 0.6).unwrap();
        s.apply_unmask(2, 1, 1.0).unwrap();
        let t = compute_threshold(&s, &cfg, &BTreeMap::new());
        assert!((t - 0.8).abs() < 1e-12);
    }

    #[test]
    fn draft_set_filter() {
        let s = SequenceState::new(vec![], 3, vocab()).unwrap();
        let p = set(&[0.95, 0.70, 0.91]);
        let d: Vec<usize> = select_draft_set(&p, &s, 0..3, 0.9)
            .iter()
            .map(|d| d.index)
            .collect();
        assert_eq!(d, vec![0, 2]);
        assert!(select_draft_set(&p, &s, 0..3, 1.0).is_empty());
        // equality is admitted
        assert_eq!(select_draft_set(&p, &s, 0..3, 0.91).len(), 2);
    }

    #[test]
    fn budget_cases() {
        assert_eq!(compute_remask_budget(7, 4), 1);
        assert_eq!(compute_remask_budget(8, 4), 2);
        assert_eq!(compute_remask_budget(0, 4), 1);
    }

    #[test]
    fn drops_and_remask_selection() {
        let prev = BTreeMap::from([(0, 0.9), (1, 0.3)]);
        let mut positions = vec![masked(0.5); 2];
        positions[0].cur_prob = Some(0.4);
        positions[1].cur_prob = Some(0.6);
        let drops = compute_confidence_drops(&prev, &PredictionSet::new(positions)).unwrap();
        assert!((drops[&0] - 0.5).abs() < 1e-12);
        assert!((drops[&1] + 0.3).abs() < 1e-12);

        let drops = BTreeMap::from([(3, 0.5), (7, 0.1), (9, 0.5)]);
        assert_eq!(select_remask_set(&drops, 2, false), vec![3, 9]);
        assert_eq!(select_remask_set(&drops, 5, false).len(), 3);

        let neg = BTreeMap::from([(1, -0.1), (2, 0.0)]);
        assert!(select_remask_set(&neg, 1, false).is_empty());
        assert_eq!(select_remask_set(&neg, 1, true), vec![2]);
    }

    #[test]
    fn missing_cur_prob_is_incapable() {
        let prev = BTreeMap::from([(0, 0.9)]);
        assert!(matches!(
            compute_confidence_drops(&prev, &set(&[0.5])),
            Err(BackendError::Incapable)
        ));
    }

    #[test]
    fn fallback_drafts_single_best() {
        let backend = ScriptedBackend::from_fn(|s| {
            Ok(PredictionSet::new(
                (0..s.len())
                    .map(|i| masked([0.3, 0.5, 0.5, 0.2][i]))
                    .collect(),
            ))
        });
        let mut s = SequenceState::new(vec![], 4, vocab()).unwrap();
        let out = saber_step(&mut s, &backend, &SaberConfig::default()).unwrap();
        assert!(out.fallback_used);
        assert_eq!(out.drafted.len(), 1);
        assert_eq!(out.drafted[0].index, 1);
        assert_eq!(out.backend_calls, 1);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn nothing_masked_is_a_state_violation() {
        let backend = ScriptedBackend::from_fn(|_| unreachable!());
        let mut s = SequenceState::new(vec![], 1, vocab()).unwrap();
        s.apply_unmask(0, 1, 0.5).unwrap();
        assert!(matches!(
            saber_step(&mut s, &backend, &SaberConfig::default()),
            Err(StepError::State(StateError::NothingMasked))
        ));
    }
}
