//! Decode one sequence with the default sampler on the synthetic oracle and
//! print what happened at every step.
//!
//! ```bash
//! cargo run -p saber --example quickstart
//! ```

use saber::backend::{OracleBackend, OracleParams};
use saber::sampler::{generate, RunContext, SaberConfig, Strategy};
use saber::state::{SequenceState, VocabSpec};
use saber::telemetry::{metrics, EventKind};

fn main() {
    let vocab = VocabSpec::new(1024, 1023).unwrap();
    let seed = 7;
    let params = OracleParams::fixture(48, 0.1, seed, vocab);
    let target = params.target.clone();
    let backend = OracleBackend::new(params).unwrap();

    let state = SequenceState::new(vec![], 48, vocab).unwrap();
    let strategy: Strategy = "saber".parse().unwrap();
    let ctx = RunContext::new("quickstart", seed).with_target(target.clone());
    let result = generate(state, &backend, &SaberConfig::default(), &strategy, &ctx).unwrap();

    for step in 0..result.steps_used {
        let events: Vec<_> = result
            .trace
            .events()
            .iter()
            .filter(|e| e.step == step)
            .collect();
        let tau = events
            .iter()
            .find(|e| e.kind == EventKind::Threshold)
            .and_then(|e| e.value)
            .unwrap();
        let unmasked: Vec<usize> = events
            .iter()
            .filter(|e| e.kind == EventKind::Unmask)
            .filter_map(|e| e.index)
            .collect();
        let remasked: Vec<usize> = events
            .iter()
            .filter(|e| e.kind == EventKind::Remask)
            .filter_map(|e| e.index)
            .collect();
        let fallback = events.iter().any(|e| e.kind == EventKind::Fallback);
        println!(
            "step {step:>2}  tau={tau:.3}  +{:<2} -{:<2}{}  remasked {:?}",
            unmasked.len(),
            remasked.len(),
            if fallback { "  (fallback)" } else { "" },
            remasked
        );
    }

    let m = metrics(&result.trace).unwrap();
    let marks: String = result
        .final_state
        .gen()
        .iter()
        .zip(&target)
        .map(|(g, t)| if g == t { '.' } else { 'x' })
        .collect();
    println!();
    println!(
        "completed in {} steps ({} backend calls)",
        result.steps_used, result.backend_calls
    );
    println!(
        "tokens/step {:.2}, remasks {}",
        m.mean_tokens_per_step, m.remask_count
    );
    println!("errors vs target: {marks}");
    println!("token error rate {:.4}", m.token_error_rate.unwrap());
}
