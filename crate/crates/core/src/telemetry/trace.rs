use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::TraceError;
use crate::state::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Unmask,
    Remask,
    Threshold,
    Fallback,
    RunMeta,
    RunEnd,
    Abort,
}

/// Run provenance, carried by the single `run_meta` event at the head of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub strategy: String,
    pub seed: u64,
    pub gen_length: usize,
    pub vocab_size: u32,
    pub mask_id: TokenId,
    pub prompt: Vec<TokenId>,
    /// Ground truth for oracle runs; enables error-rate metrics from the trace alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<TokenId>>,
    /// Effective configuration the run was launched with.
    #[serde(default)]
    pub config: serde_json::Value,
}

/// Closing summary written once the loop stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunEnd {
    pub steps_used: u64,
    pub backend_calls: u64,
    pub completed: bool,
}

/// One line of a trace. Field order here is the serialized field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    pub step: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<TokenId>,
    /// Draft confidence for unmask events, triggering drop for remask events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    /// Threshold value for threshold events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<RunMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<RunEnd>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Rounds to 9 significant digits, the precision traces are written with.
pub fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

impl TraceEvent {
    fn bare(step: u64, kind: EventKind) -> Self {
        Self {
            step,
            kind,
            index: None,
            token: None,
            confidence: None,
            value: None,
            meta: None,
            end: None,
            message: None,
        }
    }

    pub fn unmask(step: u64, index: usize, token: TokenId, confidence: f64) -> Self {
        Self {
            index: Some(index),
            token: Some(token),
            confidence: Some(round_sig9(confidence)),
            ..Self::bare(step, EventKind::Unmask)
        }
    }

    pub fn remask(step: u64, index: usize, drop: f64) -> Self {
        Self {
            index: Some(index),
            confidence: Some(round_sig9(drop)),
            ..Self::bare(step, EventKind::Remask)
        }
    }

    pub fn threshold(step: u64, value: f64) -> Self {
        Self {
            value: Some(round_sig9(value)),
            ..Self::bare(step, EventKind::Threshold)
        }
    }

    pub fn fallback(step: u64, index: usize) -> Self {
        Self {
            index: Some(index),
            ..Self::bare(step, EventKind::Fallback)
        }
    }

    pub fn run_meta(meta: RunMeta) -> Self {
        Self {
            meta: Some(meta),
            ..Self::bare(0, EventKind::RunMeta)
        }
    }

    pub fn run_end(step: u64, end: RunEnd) -> Self {
        Self {
            end: Some(end),
            ..Self::bare(step, EventKind::RunEnd)
        }
    }

    pub fn abort(step: u64, message: impl Into<String>) -> Self {
        Self {
            message: Some(message.into()),
            ..Self::bare(step, EventKind::Abort)
        }
    }
}

/// Ordered event log of a single run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Appends an event. Steps may never go backwards and only one
    /// `run_meta` event is allowed.
    pub fn record(&mut self, event: TraceEvent) -> Result<(), TraceError> {
        if let Some(last) = self.events.last() {
            if event.step < last.step {
                return Err(TraceError::OutOfOrder {
                    last: last.step,
                    got: event.step,
                });
            }
        }
        if event.kind == EventKind::RunMeta && self.meta().is_some() {
            return Err(TraceError::DuplicateMeta);
        }
        self.events.push(event);
        Ok(())
    }

    pub fn meta(&self) -> Option<&RunMeta> {
        self.events.iter().find_map(|e| e.meta.as_ref())
    }

    pub fn end(&self) -> Option<&RunEnd> {
        self.events.iter().rev().find_map(|e| e.end.as_ref())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Parses a JSON Lines trace. Any malformed or out-of-order line is
    /// reported with its 1-based line number.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, TraceError> {
        let mut trace = Trace::new();
        for (n, line) in input.lines().enumerate() {
            let line_no = n + 1;
            let line = line.map_err(|e| TraceError::Corrupt {
                line: line_no,
                reason: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let event: TraceEvent =
                serde_json::from_str(&line).map_err(|e| TraceError::Corrupt {
                    line: line_no,
                    reason: e.to_string(),
                })?;
            trace.record(event).map_err(|e| TraceError::Corrupt {
                line: line_no,
                reason: e.to_string(),
            })?;
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_enforces_order_and_single_meta() {
        let mut t = Trace::new();
        t.record(TraceEvent::unmask(0, 3, 41, 0.9)).unwrap();
        assert_eq!(t.len(), 1);
        t.record(TraceEvent::unmask(5, 1, 2, 0.5)).unwrap();
        assert!(matches!(
            t.record(TraceEvent::unmask(2, 1, 2, 0.5)),
            Err(TraceError::OutOfOrder { last: 5, got: 2 })
        ));

        let meta = RunMeta {
            run_id: "r".into(),
            strategy: "saber".into(),
            seed: 1,
            gen_length: 4,
            vocab_size: 10,
            mask_id: 0,
            prompt: vec![],
            target: None,
            config: serde_json::json!({"mu": 4}),
        };
        let mut t = Trace::new();
        t.record(TraceEvent::run_meta(meta.clone())).unwrap();
        assert!(matches!(
            t.record(TraceEvent::run_meta(meta)),
            Err(TraceError::DuplicateMeta)
        ));
        assert_eq!(t.meta().unwrap().config["mu"], 4);
    }

    #[test]
    fn fixed_field_order_and_precision() {
        let e = TraceEvent::unmask(2, 3, 41, 0.123456789123);
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"step":2,"kind":"unmask","index":3,"token":41,"confidence":0.123456789}"#
        );
        let e = TraceEvent::threshold(0, 0.9);
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"step":0,"kind":"threshold","value":0.9}"#
        );
    }

    #[test]
    fn jsonl_round_trip_and_line_numbers() {
        let mut t = Trace::new();
        t.record(TraceEvent::threshold(0, 0.9)).unwrap();
        t.record(TraceEvent::unmask(0, 1, 7, 0.95)).unwrap();
        t.record(TraceEvent::remask(1, 1, 0.4)).unwrap();
        let text = t.to_jsonl();
        assert_eq!(Trace::read_jsonl(text.as_bytes()).unwrap(), t);

        let truncated = &text[..text.len() - 10];
        match Trace::read_jsonl(truncated.as_bytes()) {
            Err(TraceError::Corrupt { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
