//! Replayable record of every sampling decision, plus the metrics derived
//! from it. Traces are JSON Lines with one event per line.

mod metrics;
mod replay;
mod trace;

pub use metrics::{metrics, spearman, trend, write_comparison_csv, ComparisonRow, RunMetrics};
pub use replay::{replay, replay_trace};
pub use trace::{round_sig9, EventKind, RunEnd, RunMeta, Trace, TraceEvent};
