//! Plugging in your own model by implementing `Backend`, plus a scripted
//! backend for pinning exact step behaviour in tests.
//!
//! ```bash
//! cargo run -p saber --example custom_backend
//! ```

use saber::backend::{binary_entropy, Backend, PositionPrediction, PredictionSet, ScriptedBackend};
use saber::error::BackendError;
use saber::sampler::{generate, RunContext, SaberConfig, SaberSampler, Strategy};
use saber::state::{SequenceState, TokenId, VocabSpec};

/// A toy "copy the left neighbour plus one" model: each masked position
/// predicts `left + 1`, with confidence growing when the left neighbour is
/// known.
struct Counting;

impl Backend for Counting {
    fn predict(&self, s: &SequenceState) -> Result<PredictionSet, BackendError> {
        let mask = s.vocab().mask_id();
        let positions = (0..s.len())
            .map(|i| {
                let left: Option<TokenId> = match i {
                    0 => s.prompt().last().copied(),
                    _ if s.is_masked(i - 1) => None,
                    _ => Some(s.gen()[i - 1]),
                };
                let (token, p) = match left {
                    Some(t) => ((t + 1) % mask, 0.95),
                    None => (1, 0.2),
                };
                let cur = (!s.is_masked(i)).then(|| if s.gen()[i] == token { p } else { 0.05 });
                PositionPrediction {
                    top_token: token,
                    top_prob: p,
                    cur_prob: cur,
                    entropy: binary_entropy(p),
                }
            })
            .collect();
        Ok(PredictionSet::new(positions))
    }
}

fn main() {
    let vocab = VocabSpec::new(100, 99).unwrap();
    let state = SequenceState::new(vec![10], 12, vocab).unwrap();
    let strategy: Strategy = "saber".parse().unwrap();
    let r = generate(
        state,
        &Counting,
        &SaberConfig::default(),
        &strategy,
        &RunContext::new("count", 0),
    )
    .unwrap();
    println!(
        "custom model: {:?} in {} steps",
        r.final_state.gen(),
        r.steps_used
    );

    // One scripted step: four positions clear the 0.9 threshold, position 0
    // collapses when rescored and is sent back to the mask.
    let p = |top: f64, cur: Option<f64>| PositionPrediction {
        top_token: 5,
        top_prob: top,
        cur_prob: cur,
        entropy: binary_entropy(top),
    };
    let draft = PredictionSet::new(vec![
        p(0.9, Some(0.9)),
        p(0.95, None),
        p(0.95, None),
        p(0.95, None),
        p(0.95, None),
        p(0.2, None),
    ]);
    let rescore = PredictionSet::new(vec![
        p(0.9, Some(0.1)),
        p(0.95, Some(0.95)),
        p(0.95, Some(0.95)),
        p(0.95, Some(0.95)),
        p(0.95, Some(0.95)),
        p(0.2, None),
    ]);
    let scripted = ScriptedBackend::from_sequence([draft, rescore]);
    let mut state = SequenceState::new(vec![], 6, vocab).unwrap();
    state.apply_unmask(0, 5, 0.9).unwrap();
    let out = SaberSampler::new(SaberConfig::default())
        .step(&mut state, &scripted)
        .unwrap();
    println!(
        "scripted step: threshold {:.2}, drafted {:?}, budget {}, remasked {:?}, net {}",
        out.threshold,
        out.drafted.iter().map(|d| d.index).collect::<Vec<_>>(),
        out.budget,
        out.remasked,
        out.net_progress()
    );
}
