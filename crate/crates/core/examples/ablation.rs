//! Full sampler against its ablations on the deceptive oracle suite.
//!
//! ```bash
//! cargo run --release -p saber --example ablation -- 100
//! ```

use saber::backend::{OracleBackend, OracleParams};
use saber::sampler::{generate, RunContext, SaberConfig, Strategy};
use saber::state::{SequenceState, VocabSpec};

const GEN_LENGTH: usize = 64;
const DECEIVE_RATE: f64 = 0.15;

fn main() {
    let seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(100);
    let vocab = VocabSpec::new(1024, 1023).unwrap();
    let cfg = SaberConfig::default();

    let mut strategies = Strategy::ablation_suite();
    strategies.push("confidence".parse().unwrap());

    println!(
        "{:<20} {:>10} {:>10} {:>10} {:>10}",
        "strategy", "error", "steps", "calls", "remasks"
    );
    for strategy in &strategies {
        let (mut err, mut steps, mut calls, mut remasks) = (0.0, 0.0, 0.0, 0.0);
        for seed in 0..seeds {
            let params = OracleParams::fixture(GEN_LENGTH, DECEIVE_RATE, seed, vocab);
            let target = params.target.clone();
            let backend = OracleBackend::new(params).unwrap();
            let state = SequenceState::new(vec![], GEN_LENGTH, vocab).unwrap();
            let ctx =
                RunContext::new(format!("{strategy}-{seed}"), seed).with_target(target.clone());
            let r = generate(state, &backend, &cfg, strategy, &ctx).unwrap();
            let m = saber::telemetry::metrics(&r.trace).unwrap();
            err += m.token_error_rate.unwrap();
            steps += r.steps_used as f64;
            calls += r.backend_calls as f64;
            remasks += m.remask_count as f64;
        }
        let n = seeds as f64;
        println!(
            "{:<20} {:>10.4} {:>10.2} {:>10.2} {:>10.2}",
            strategy.to_string(),
            err / n,
            steps / n,
            calls / n,
            remasks / n
        );
    }
}
