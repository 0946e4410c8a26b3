//! Write a run's trace as JSON Lines, read it back and rebuild the final
//! sequence from the events alone.
//!
//! ```bash
//! cargo run -p saber --example trace_replay
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter};

use saber::backend::{OracleBackend, OracleParams};
use saber::sampler::{generate, RunContext, SaberConfig, Strategy};
use saber::state::{SequenceState, VocabSpec};
use saber::telemetry::{metrics, replay_trace, Trace};

fn main() {
    let vocab = VocabSpec::new(1024, 1023).unwrap();
    let params = OracleParams::fixture(32, 0.2, 11, vocab);
    let ctx = RunContext::new("replay-demo", 11).with_target(params.target.clone());
    let backend = OracleBackend::new(params).unwrap();
    let state = SequenceState::new(vec![], 32, vocab).unwrap();
    let strategy: Strategy = "saber".parse().unwrap();
    let live = generate(state, &backend, &SaberConfig::default(), &strategy, &ctx).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("replay-demo.trace.jsonl");
    live.trace
        .write_jsonl(BufWriter::new(File::create(&path).unwrap()))
        .unwrap();

    let text = std::fs::read_to_string(&path).unwrap();
    println!("{} events; first three lines:", live.trace.len());
    for line in text.lines().take(3) {
        let shown: String = line.chars().take(160).collect();
        println!("  {shown}");
    }

    let trace = Trace::read_jsonl(BufReader::new(File::open(&path).unwrap())).unwrap();
    let replayed = replay_trace(&trace).unwrap();
    println!();
    println!(
        "final state identical: {}",
        replayed.matches(&live.final_state, 1e-6)
    );
    println!(
        "metrics identical:     {}",
        metrics(&trace).unwrap() == metrics(&live.trace).unwrap()
    );
    let m = metrics(&trace).unwrap();
    println!(
        "steps {}  unmasks {}  remasks {}  fallbacks {}",
        m.steps_used, m.unmask_count, m.remask_count, m.fallback_count
    );
}
