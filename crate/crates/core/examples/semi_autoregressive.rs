//! Block-by-block decoding with the adaptive sampler inside each block.
//!
//! ```bash
//! cargo run -p saber --example semi_autoregressive
//! ```

use saber::backend::{OracleBackend, OracleParams};
use saber::sampler::{sar_generate, RunContext, SaberConfig, Strategy};
use saber::state::{SequenceState, VocabSpec};
use saber::telemetry::{metrics, EventKind};

fn main() {
    let vocab = VocabSpec::new(1024, 1023).unwrap();
    let len = 64;
    let inner: Strategy = "saber".parse().unwrap();

    println!(
        "{:>6} {:>7} {:>8}  order in which blocks finished",
        "block", "steps", "error"
    );
    for block_length in [4, 8, 16, 32, 64] {
        let params = OracleParams::fixture(len, 0.1, 3, vocab);
        let ctx = RunContext::new("sar", 3).with_target(params.target.clone());
        let backend = OracleBackend::new(params).unwrap();
        let state = SequenceState::new(vec![], len, vocab).unwrap();
        let r = sar_generate(
            state,
            &backend,
            &SaberConfig::default(),
            block_length,
            &inner,
            &ctx,
        )
        .unwrap();

        // Step at which each block received its last event.
        let last_step: Vec<u64> = (0..len.div_ceil(block_length))
            .map(|b| {
                r.trace
                    .events()
                    .iter()
                    .filter(|e| matches!(e.kind, EventKind::Unmask | EventKind::Remask))
                    .filter(|e| e.index.is_some_and(|i| i / block_length == b))
                    .map(|e| e.step)
                    .max()
                    .unwrap()
            })
            .collect();
        let m = metrics(&r.trace).unwrap();
        println!(
            "{block_length:>6} {:>7} {:>8.4}  {:?}",
            r.steps_used,
            m.token_error_rate.unwrap(),
            last_step
        );
    }
}
