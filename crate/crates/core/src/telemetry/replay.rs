use super::trace::{EventKind, Trace};
use crate::error::TraceError;
use crate::state::{SequenceState, VocabSpec};

/// Rebuilds the final state of a recorded run by applying its unmask and
/// remask events in order.
pub fn replay(
    trace: &Trace,
    gen_length: usize,
    vocab: VocabSpec,
) -> Result<SequenceState, TraceError> {
    let prompt = trace.meta().map(|m| m.prompt.clone()).unwrap_or_default();
    let corrupt = |line: usize, reason: String| TraceError::Corrupt { line, reason };
    let mut state =
        SequenceState::new(prompt, gen_length, vocab).map_err(|e| corrupt(1, e.to_string()))?;

    let mut last_step = None;
    for (n, event) in trace.events().iter().enumerate() {
        let line = n + 1;
        let need_index = || {
            event
                .index
                .ok_or_else(|| corrupt(line, "event is missing its index".into()))
        };
        match event.kind {
            EventKind::Unmask => {
                let index = need_index()?;
                let token = event
                    .token
                    .ok_or_else(|| corrupt(line, "unmask event is missing its token".into()))?;
                let confidence = event.confidence.ok_or_else(|| {
                    corrupt(line, "unmask event is missing its confidence".into())
                })?;
                state
                    .apply_unmask(index, token, confidence)
                    .map_err(|e| corrupt(line, e.to_string()))?;
                last_step = Some(event.step);
            }
            EventKind::Remask => {
                state
                    .apply_remask(need_index()?)
                    .map_err(|e| corrupt(line, e.to_string()))?;
                last_step = Some(event.step);
            }
            _ => {}
        }
    }
    let steps = match trace.end() {
        Some(end) => end.steps_used,
        None => last_step.map_or(0, |s| s + 1),
    };
    state.set_step(steps);
    Ok(state)
}

/// Replays using the generation length, vocabulary and prompt stored in the
/// trace's `run_meta` event.
pub fn replay_trace(trace: &Trace) -> Result<SequenceState, TraceError> {
    let meta = trace.meta().ok_or_else(|| TraceError::Corrupt {
        line: 1,
        reason: "trace has no run_meta event".into(),
    })?;
    let vocab = VocabSpec::new(meta.vocab_size, meta.mask_id).map_err(|e| TraceError::Corrupt {
        line: 1,
        reason: e.to_string(),
    })?;
    replay(trace, meta.gen_length, vocab)
}
