//! The two observations the sampler is built on, measured on the oracle:
//! confidence rises as context accumulates, and early commitments can turn
//! out badly once more of the sequence is known.
//!
//! ```bash
//! cargo run -p saber --example confidence_trend
//! ```

use saber::backend::{Backend, OracleBackend, OracleParams};
use saber::sampler::{compute_confidence_drops, BaselineSampler, BaselineVariant};
use saber::state::{SequenceState, VocabSpec};
use saber::telemetry::trend;

fn main() {
    let vocab = VocabSpec::new(1024, 1023).unwrap();
    let len = 64;

    println!("seed  rho    max-drop  wrong-commits");
    for seed in 0..10 {
        let params = OracleParams::fixture(len, 0.1, seed, vocab);
        let target = params.target.clone();
        let oracle = OracleBackend::new(params).unwrap();
        let mut state = SequenceState::new(vec![], len, vocab).unwrap();
        let mut sampler = BaselineSampler::new(BaselineVariant::Confidence, seed);

        let mut series = Vec::new();
        let mut max_drop = f64::NEG_INFINITY;
        while !state.is_complete() {
            let out = sampler.step(&mut state, &oracle).unwrap();
            series.push(
                out.unmasked.iter().map(|d| d.confidence).sum::<f64>() / out.unmasked.len() as f64,
            );
            // Rescore everything committed so far in the new context.
            let now = oracle.predict(&state).unwrap();
            let drops = compute_confidence_drops(state.ledger(), &now).unwrap();
            max_drop = drops.values().cloned().fold(max_drop, f64::max);
        }
        let wrong = state
            .gen()
            .iter()
            .zip(&target)
            .filter(|(g, t)| g != t)
            .count();
        println!(
            "{seed:>4}  {:.3}  {max_drop:>8.3}  {wrong:>13}",
            trend(&series).unwrap()
        );
    }
}
