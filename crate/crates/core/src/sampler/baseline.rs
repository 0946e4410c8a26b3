//! Reference samplers: one token per step by random choice, lowest entropy
//! or highest confidence; the top-k confidence variant; and a fixed
//! threshold sampler that stands in for static-threshold parallel decoders.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::saber::{draft_at, most_confident_masked, Draft};
use crate::backend::{Backend, PredictionSet};
use crate::error::{StateError, StepError};
use crate::state::SequenceState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineVariant {
    Random,
    Entropy,
    Confidence,
    /// The `k` most confident masked positions per step.
    ConfidenceTopK(usize),
    /// Every masked position at or above the threshold, or the single most
    /// confident one when none qualify.
    StaticThreshold(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutcome {
    pub unmasked: Vec<Draft>,
    pub fallback_used: bool,
}

#[derive(Debug, Clone)]
pub struct BaselineSampler {
    variant: BaselineVariant,
    rng: ChaCha8Rng,
}

impl BaselineSampler {
    /// `seed` only matters for the random variant.
    pub fn new(variant: BaselineVariant, seed: u64) -> Self {
        Self {
            variant,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn variant(&self) -> BaselineVariant {
        self.variant
    }

    pub fn step<B: Backend + ?Sized>(
        &mut self,
        state: &mut SequenceState,
        backend: &B,
    ) -> Result<BaselineOutcome, StepError> {
        let len = state.len();
        self.step_in(state, backend, 0..len)
    }

    /// Unmasks according to the variant, choosing only among masked
    /// positions in `region`. Does not advance the step counter.
    pub fn step_in<B: Backend + ?Sized>(
        &mut self,
        state: &mut SequenceState,
        backend: &B,
        region: Range<usize>,
    ) -> Result<BaselineOutcome, StepError> {
        let candidates: Vec<usize> = region.clone().filter(|&i| state.is_masked(i)).collect();
        if candidates.is_empty() {
            return Err(StateError::NothingMasked.into());
        }
        let preds = backend.predict(state)?;
        preds.validate(state)?;
        let (chosen, fallback_used) = self.choose(&preds, state, region, &candidates);
        let unmasked: Vec<Draft> = chosen.into_iter().map(|i| draft_at(&preds, i)).collect();
        for d in &unmasked {
            state.apply_unmask(d.index, d.token, d.confidence)?;
        }
        Ok(BaselineOutcome {
            unmasked,
            fallback_used,
        })
    }

    fn choose(
        &mut self,
        preds: &PredictionSet,
        state: &SequenceState,
        region: Range<usize>,
        candidates: &[usize],
    ) -> (Vec<usize>, bool) {
        let best = || most_confident_masked(preds, state, region.clone()).expect("non-empty");
        match self.variant {
            BaselineVariant::Random => {
                let pick = candidates[self.rng.gen_range(0..candidates.len())];
                (vec![pick], false)
            }
            BaselineVariant::Entropy => {
                let mut pick = candidates[0];
                for &i in &candidates[1..] {
                    if preds[i].entropy < preds[pick].entropy {
                        pick = i;
                    }
                }
                (vec![pick], false)
            }
            BaselineVariant::Confidence => (vec![best()], false),
            BaselineVariant::ConfidenceTopK(k) => {
                let mut ranked = candidates.to_vec();
                ranked.sort_by(|&a, &b| {
                    preds[b]
                        .top_prob
                        .total_cmp(&preds[a].top_prob)
                        .then(a.cmp(&b))
                });
                ranked.truncate(k.max(1));
                ranked.sort_unstable();
                (ranked, false)
            }
            BaselineVariant::StaticThreshold(theta) => {
                let above: Vec<usize> = candidates
                    .iter()
                    .copied()
                    .filter(|&i| preds[i].top_prob >= theta)
                    .collect();
                if above.is_empty() {
                    (vec![best()], true)
                } else {
                    (above, false)
                }
            }
        }
    }
}
