//! Every built-in strategy on the same oracle instances.
//!
//! ```bash
//! cargo run --release -p saber --example baselines -- 20
//! ```

use saber::backend::{OracleBackend, OracleParams};
use saber::sampler::{generate, RunContext, SaberConfig, Strategy};
use saber::state::{SequenceState, VocabSpec};
use saber::telemetry::metrics;

const GEN_LENGTH: usize = 64;

fn main() {
    let seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(20);
    let vocab = VocabSpec::new(1024, 1023).unwrap();
    let names = [
        "random",
        "entropy",
        "confidence",
        "confidence-p:2",
        "confidence-p:4",
        "static:0.5",
        "static:0.7",
        "sar:confidence",
        "sar:saber",
        "saber",
    ];

    println!(
        "{:<16} {:>8} {:>8} {:>10}",
        "strategy", "error", "steps", "tok/step"
    );
    for name in names {
        let strategy = name.parse::<Strategy>().unwrap().with_block_length(16);
        let (mut err, mut steps, mut tps) = (0.0, 0.0, 0.0);
        for seed in 0..seeds {
            let params = OracleParams::fixture(GEN_LENGTH, 0.1, seed, vocab);
            let ctx = RunContext::new(name, seed).with_target(params.target.clone());
            let backend = OracleBackend::new(params).unwrap();
            let state = SequenceState::new(vec![], GEN_LENGTH, vocab).unwrap();
            let r = generate(state, &backend, &SaberConfig::default(), &strategy, &ctx).unwrap();
            let m = metrics(&r.trace).unwrap();
            err += m.token_error_rate.unwrap();
            steps += r.steps_used as f64;
            tps += m.mean_tokens_per_step;
        }
        let n = seeds as f64;
        println!(
            "{:<16} {:>8.4} {:>8.2} {:>10.2}",
            strategy.to_string(),
            err / n,
            steps / n,
            tps / n
        );
    }
}
