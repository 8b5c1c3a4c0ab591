//! Execution traces: one JSON object per line, in a stable field order, so
//! identical runs serialize byte-identically.
//!
//! A trace records task execution intervals, inter-node transfers, heap and
//! registry activity, and fatal error events. Well-formedness (no overlapping
//! intervals per worker or per link, end ≥ start) is checkable after the
//! fact, and the summary aggregates busy time and moved bytes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::runtime::NodeId;

/// One trace event. Serialized with an `event` tag and fields in declaration
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum TraceEvent {
    Task { id: usize, codelet: String, worker: u32, start: f64, end: f64 },
    Transfer { handle: usize, from: NodeId, to: NodeId, bytes: u64, start: f64, end: f64 },
    Alloc { var: String, bytes: u64, pinned: bool, time: f64 },
    Free { var: String, time: f64 },
    Register { handle: usize, var: String, bytes: u64, time: f64 },
    Unregister { handle: usize, var: String, time: f64 },
    Error { message: String, file: String, line: u32 },
}

impl TraceEvent {
    /// The instant the event becomes visible (interval events: their start).
    pub fn sort_time(&self) -> f64 {
        match self {
            TraceEvent::Task { start, .. } | TraceEvent::Transfer { start, .. } => *start,
            TraceEvent::Alloc { time, .. }
            | TraceEvent::Free { time, .. }
            | TraceEvent::Register { time, .. }
            | TraceEvent::Unregister { time, .. } => *time,
            TraceEvent::Error { .. } => f64::INFINITY,
        }
    }

    pub fn end_time(&self) -> f64 {
        match self {
            TraceEvent::Task { end, .. } | TraceEvent::Transfer { end, .. } => *end,
            other => other.sort_time(),
        }
    }
}

/// An ordered event log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn push(&mut self, e: TraceEvent) {
        self.events.push(e);
    }

    /// Sort events by their visible time, keeping creation order for ties.
    /// Error events sort last — they terminate a run.
    pub fn normalize(&mut self) {
        let mut keyed: Vec<(f64, usize, TraceEvent)> = self
            .events
            .drain(..)
            .enumerate()
            .map(|(i, e)| (e.sort_time(), i, e))
            .collect();
        keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite times").then(a.1.cmp(&b.1)));
        self.events = keyed.into_iter().map(|(_, _, e)| e).collect();
    }

    /// Virtual completion time: the latest end over all events, 0 if empty.
    pub fn makespan(&self) -> f64 {
        self.events
            .iter()
            .filter(|e| !matches!(e, TraceEvent::Error { .. }))
            .map(|e| e.end_time())
            .fold(0.0, f64::max)
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace serialization"));
            out.push('\n');
        }
        out
    }

    pub fn from_json_lines(text: &str) -> Result<Trace, String> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: TraceEvent = serde_json::from_str(line)
                .map_err(|err| format!("line {}: {err}", i + 1))?;
            events.push(e);
        }
        Ok(Trace { events })
    }

    /// Check interval well-formedness: end ≥ start everywhere, task intervals
    /// per worker do not overlap, transfer intervals per directed link do not
    /// overlap.
    pub fn validate(&self) -> Result<(), String> {
        let mut worker_intervals: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
        let mut link_intervals: BTreeMap<(NodeId, NodeId), Vec<(f64, f64)>> = BTreeMap::new();
        for e in &self.events {
            match e {
                TraceEvent::Task { id, worker, start, end, .. } => {
                    if end < start {
                        return Err(format!("task {id}: end {end} before start {start}"));
                    }
                    worker_intervals.entry(*worker).or_default().push((*start, *end));
                }
                TraceEvent::Transfer { handle, from, to, start, end, .. } => {
                    if end < start {
                        return Err(format!(
                            "transfer of handle {handle}: end {end} before start {start}"
                        ));
                    }
                    link_intervals.entry((*from, *to)).or_default().push((*start, *end));
                }
                _ => {}
            }
        }
        for (worker, mut iv) in worker_intervals {
            iv.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
            for pair in iv.windows(2) {
                if pair[1].0 < pair[0].1 {
                    return Err(format!(
                        "worker {worker}: task intervals [{}, {}] and [{}, {}] overlap",
                        pair[0].0, pair[0].1, pair[1].0, pair[1].1
                    ));
                }
            }
        }
        for ((from, to), mut iv) in link_intervals {
            iv.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
            for pair in iv.windows(2) {
                if pair[1].0 < pair[0].1 {
                    return Err(format!(
                        "link {from}->{to}: transfer intervals [{}, {}] and [{}, {}] overlap",
                        pair[0].0, pair[0].1, pair[1].0, pair[1].1
                    ));
                }
            }
        }
        Ok(())
    }

    /// Aggregate counts for the summary command.
    pub fn summary(&self) -> TraceSummary {
        let mut s = TraceSummary::default();
        for e in &self.events {
            match e {
                TraceEvent::Task { worker, start, end, .. } => {
                    s.task_count += 1;
                    *s.worker_busy.entry(*worker).or_insert(0.0) += end - start;
                }
                TraceEvent::Transfer { from, to, bytes, .. } => {
                    *s.link_bytes.entry((*from, *to)).or_insert(0) += bytes;
                }
                _ => {}
            }
        }
        s.makespan = self.makespan();
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceSummary {
    pub task_count: usize,
    pub makespan: f64,
    pub worker_busy: BTreeMap<u32, f64>,
    pub link_bytes: BTreeMap<(NodeId, NodeId), u64>,
}

impl std::fmt::Display for TraceSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "tasks: {}", self.task_count)?;
        writeln!(f, "makespan: {}", self.makespan)?;
        for (w, busy) in &self.worker_busy {
            writeln!(f, "worker {w} busy: {busy}")?;
        }
        for ((from, to), bytes) in &self.link_bytes {
            writeln!(f, "link {from}->{to} bytes: {bytes}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trace {
        Trace {
            events: vec![
                TraceEvent::Register { handle: 0, var: "v".into(), bytes: 32, time: 0.0 },
                TraceEvent::Transfer {
                    handle: 0,
                    from: 0,
                    to: 1,
                    bytes: 32,
                    start: 0.0,
                    end: 1.5e-5,
                },
                TraceEvent::Task {
                    id: 0,
                    codelet: "scale".into(),
                    worker: 1,
                    start: 1.5e-5,
                    end: 1.000015,
                },
                TraceEvent::Unregister { handle: 0, var: "v".into(), time: 1.1 },
            ],
        }
    }

    #[test]
    fn json_lines_round_trip_byte_identically() {
        let t = sample();
        let text = t.to_json_lines();
        let back = Trace::from_json_lines(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_json_lines(), text);
    }

    #[test]
    fn event_tag_and_field_order_are_stable() {
        let t = sample();
        let first = t.to_json_lines().lines().next().unwrap().to_string();
        assert_eq!(first, r#"{"event":"register","handle":0,"var":"v","bytes":32,"time":0.0}"#);
    }

    #[test]
    fn empty_trace_has_zero_makespan() {
        let t = Trace::default();
        assert_eq!(t.makespan(), 0.0);
        assert_eq!(t.summary().task_count, 0);
        t.validate().unwrap();
    }

    #[test]
    fn makespan_is_latest_end() {
        assert_eq!(sample().makespan(), 1.1);
    }

    #[test]
    fn summary_counts_tasks_busy_time_and_link_bytes() {
        let s = sample().summary();
        assert_eq!(s.task_count, 1);
        assert_eq!(s.worker_busy[&1], 1.000015 - 1.5e-5);
        assert_eq!(s.link_bytes[&(0, 1)], 32);
    }

    #[test]
    fn overlapping_worker_intervals_fail_validation() {
        let mut t = sample();
        t.push(TraceEvent::Task {
            id: 1,
            codelet: "scale".into(),
            worker: 1,
            start: 0.5,
            end: 0.9,
        });
        let err = t.validate().unwrap_err();
        assert!(err.contains("worker 1"), "{err}");
    }

    #[test]
    fn reversed_interval_fails_validation() {
        let mut t = Trace::default();
        t.push(TraceEvent::Task { id: 0, codelet: "x".into(), worker: 0, start: 2.0, end: 1.0 });
        assert!(t.validate().is_err());
    }

    #[test]
    fn normalize_orders_by_time_then_creation() {
        let mut t = Trace::default();
        t.push(TraceEvent::Task { id: 1, codelet: "b".into(), worker: 1, start: 2.0, end: 3.0 });
        t.push(TraceEvent::Task { id: 0, codelet: "a".into(), worker: 0, start: 0.0, end: 1.0 });
        t.normalize();
        assert!(matches!(t.events[0], TraceEvent::Task { id: 0, .. }));
    }
}
