use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::replay::replay_trace;
use super::trace::{EventKind, Trace};
use crate::error::TraceError;

/// Aggregates over one recorded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub steps_used: u64,
    pub backend_calls: u64,
    pub unmask_count: u64,
    pub remask_count: u64,
    pub fallback_count: u64,
    pub mean_tokens_per_step: f64,
    /// Mean draft confidence of each step's unmask events, in step order.
    pub per_step_mean_confidence: Vec<f64>,
    /// Fraction of final positions that differ from the oracle target.
    pub token_error_rate: Option<f64>,
}

pub fn metrics(trace: &Trace) -> Result<RunMetrics, TraceError> {
    let mut unmask_count = 0u64;
    let mut remask_count = 0u64;
    let mut fallback_count = 0u64;
    let mut by_step: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for e in trace.events() {
        match e.kind {
            EventKind::Unmask => {
                unmask_count += 1;
                let slot = by_step.entry(e.step).or_insert((0.0, 0));
                slot.0 += e.confidence.unwrap_or(0.0);
                slot.1 += 1;
            }
            EventKind::Remask => remask_count += 1,
            EventKind::Fallback => fallback_count += 1,
            _ => {}
        }
    }
    let (steps_used, backend_calls) = match trace.end() {
        Some(end) => (end.steps_used, end.backend_calls),
        None => (by_step.len() as u64, 0),
    };
    let mean_tokens_per_step = if steps_used == 0 {
        0.0
    } else {
        unmask_count as f64 / steps_used as f64
    };

    let token_error_rate = match trace.meta().and_then(|m| m.target.as_ref()) {
        Some(target) => {
            let state = replay_trace(trace)?;
            let wrong = state
                .gen()
                .iter()
                .zip(target)
                .enumerate()
                .filter(|(i, (g, t))| state.is_masked(*i) || g != t)
                .count();
            Some(wrong as f64 / target.len().max(1) as f64)
        }
        None => None,
    };

    Ok(RunMetrics {
        steps_used,
        backend_calls,
        unmask_count,
        remask_count,
        fallback_count,
        mean_tokens_per_step,
        per_step_mean_confidence: by_step.values().map(|(s, n)| s / *n as f64).collect(),
        token_error_rate,
    })
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either side is constant or the inputs are shorter than two.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    pearson(&rx, &ry)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Rank correlation of a per-step series against its step index.
pub fn trend(series: &[f64]) -> Option<f64> {
    let steps: Vec<f64> = (0..series.len()).map(|i| i as f64).collect();
    spearman(&steps, series)
}

/// One row of the strategy-by-seed comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub seed: u64,
    pub completed: bool,
    pub steps_used: u64,
    pub backend_calls: u64,
    pub mean_tokens_per_step: f64,
    pub remask_count: u64,
    pub fallback_count: u64,
    pub token_error_rate: Option<f64>,
    pub confidence_trend: Option<f64>,
}

impl ComparisonRow {
    pub fn new(strategy: impl Into<String>, seed: u64, completed: bool, m: &RunMetrics) -> Self {
        Self {
            strategy: strategy.into(),
            seed,
            completed,
            steps_used: m.steps_used,
            backend_calls: m.backend_calls,
            mean_tokens_per_step: m.mean_tokens_per_step,
            remask_count: m.remask_count,
            fallback_count: m.fallback_count,
            token_error_rate: m.token_error_rate,
            confidence_trend: trend(&m.per_step_mean_confidence),
        }
    }
}

pub fn write_comparison_csv<W: Write>(out: W, rows: &[ComparisonRow]) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
