//! Run accounting: the global ledger, per-executor reports, and I/O
//! amplification factors.

use std::collections::BTreeMap;
use std::sync::Mutex;

use bytes::Bytes;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dag::{Constants, TaskId};

/// Time spent per category, in milliseconds. Categories are disjoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeBreakdown {
    pub exec: f64,
    pub io: f64,
    pub invoke: f64,
    pub publish: f64,
    pub serde: f64,
}

impl TimeBreakdown {
    pub fn total(&self) -> f64 {
        self.exec + self.io + self.invoke + self.publish + self.serde
    }

    pub fn add(&mut self, other: &TimeBreakdown) {
        self.exec += other.exec;
        self.io += other.io;
        self.invoke += other.invoke;
        self.publish += other.publish;
        self.serde += other.serde;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutorReport {
    pub executor_id: String,
    pub tasks: Vec<String>,
    pub t_breakdown: TimeBreakdown,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub invocations: u64,
    pub retries: u64,
    pub start_ms: f64,
    pub end_ms: f64,
}

impl ExecutorReport {
    pub fn lifetime_ms(&self) -> f64 {
        (self.end_ms - self.start_ms).max(0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub invocations: u64,
    pub invoke_ms: f64,
    pub invoke_rejections: u64,
    pub task_dispatches: u64,
    pub store_puts: u64,
    pub store_gets: u64,
    pub bytes_written: u64,
    pub bytes_read: u64,
    pub put_latency_ms: f64,
    pub get_latency_ms: f64,
    /// Puts and gets of objects strictly larger than the large-object threshold.
    pub large_puts: u64,
    pub large_bytes_written: u64,
    pub large_gets: u64,
    pub large_bytes_read: u64,
    pub counter_ops: u64,
    pub counter_ms: f64,
    pub schedule_reads: u64,
    pub schedule_bytes: u64,
    pub publishes: u64,
    pub bytes_published: u64,
    pub publish_ms: f64,
    pub proxy_messages: u64,
    pub tasks_executed: u64,
    pub retries: u64,
    pub failures: u64,
    pub executors: u64,
    pub t_breakdown: TimeBreakdown,
}

impl LedgerTotals {
    pub fn store_bytes(&self) -> u64 {
        self.bytes_read + self.bytes_written
    }

    pub fn large_store_bytes(&self) -> u64 {
        self.large_bytes_read + self.large_bytes_written
    }
}

/// Accepts concurrent appends from every actor in a run.
#[derive(Debug, Default)]
pub struct Ledger {
    large_threshold: u64,
    totals: Mutex<LedgerTotals>,
    executors: Mutex<Vec<ExecutorReport>>,
}

impl Ledger {
    pub fn new(large_threshold: u64) -> Self {
        Self {
            large_threshold,
            ..Default::default()
        }
    }

    pub fn large_threshold(&self) -> u64 {
        self.large_threshold
    }

    fn with<R>(&self, f: impl FnOnce(&mut LedgerTotals) -> R) -> R {
        f(&mut self.totals.lock().unwrap())
    }

    pub fn record_put(&self, size: u64, latency_ms: f64) {
        let large = size > self.large_threshold;
        self.with(|t| {
            t.store_puts += 1;
            t.bytes_written += size;
            t.put_latency_ms += latency_ms;
            if large {
                t.large_puts += 1;
                t.large_bytes_written += size;
            }
        });
    }

    pub fn record_get(&self, size: u64, latency_ms: f64) {
        let large = size > self.large_threshold;
        self.with(|t| {
            t.store_gets += 1;
            t.bytes_read += size;
            t.get_latency_ms += latency_ms;
            if large {
                t.large_gets += 1;
                t.large_bytes_read += size;
            }
        });
    }

    pub fn record_counter(&self, latency_ms: f64) {
        self.with(|t| {
            t.counter_ops += 1;
            t.counter_ms += latency_ms;
        });
    }

    pub fn record_schedule_read(&self, size: u64) {
        self.with(|t| {
            t.schedule_reads += 1;
            t.schedule_bytes += size;
        });
    }

    pub fn record_publish(&self, size: u64, latency_ms: f64) {
        self.with(|t| {
            t.publishes += 1;
            t.bytes_published += size;
            t.publish_ms += latency_ms;
        });
    }

    pub fn record_proxy_message(&self) {
        self.with(|t| t.proxy_messages += 1);
    }

    pub fn record_invocation(&self, latency_ms: f64) {
        self.with(|t| {
            t.invocations += 1;
            t.invoke_ms += latency_ms;
        });
    }

    pub fn record_rejection(&self) {
        self.with(|t| t.invoke_rejections += 1);
    }

    pub fn record_dispatch(&self) {
        self.with(|t| t.task_dispatches += 1);
    }

    pub fn record_task(&self, retries: u64) {
        self.with(|t| {
            t.tasks_executed += 1;
            t.retries += retries;
        });
    }

    pub fn record_failure(&self) {
        self.with(|t| t.failures += 1);
    }

    pub fn add_executor(&self, report: ExecutorReport) {
        self.with(|t| {
            t.executors += 1;
            t.t_breakdown.add(&report.t_breakdown);
        });
        self.executors.lock().unwrap().push(report);
    }

    pub fn totals(&self) -> LedgerTotals {
        self.totals.lock().unwrap().clone()
    }

    /// Executor reports sorted by id for stable output.
    pub fn executors(&self) -> Vec<ExecutorReport> {
        let mut v = self.executors.lock().unwrap().clone();
        v.sort_by(|a, b| natural_key(&a.executor_id).cmp(&natural_key(&b.executor_id)));
        v
    }
}

fn natural_key(id: &str) -> (String, u64) {
    let split = id.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    let (prefix, digits) = id.split_at(split);
    (prefix.to_string(), digits.parse().unwrap_or(0))
}

/// A ratio that serializes as the string `"inf"` when the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Factor(pub f64);

impl Factor {
    pub fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Factor(f64::INFINITY)
        } else {
            Factor(num as f64 / den as f64)
        }
    }

    pub fn is_infinite(&self) -> bool {
        self.0.is_infinite()
    }
}

impl Serialize for Factor {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str("inf")
        }
    }
}

impl<'de> Deserialize<'de> for Factor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Factor(v)),
            Raw::Str(s) if s == "inf" => Ok(Factor(f64::INFINITY)),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad factor {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Amplification {
    pub read_factor: Factor,
    pub write_factor: Factor,
    pub input_bytes: u64,
    pub output_bytes: u64,
}

pub fn input_bytes(constants: &Constants) -> u64 {
    constants.values().flatten().map(|b| b.len() as u64).sum()
}

pub fn output_bytes(finals: &BTreeMap<TaskId, Bytes>) -> u64 {
    finals.values().map(|b| b.len() as u64).sum()
}

/// Store bytes read over pure input size, and bytes written (intermediate
/// objects plus final publications) over pure output size.
pub fn amplification(totals: &LedgerTotals, input_bytes: u64, output_bytes: u64) -> Amplification {
    Amplification {
        read_factor: Factor::ratio(totals.bytes_read, input_bytes),
        write_factor: Factor::ratio(totals.bytes_written + totals.bytes_published, output_bytes),
        input_bytes,
        output_bytes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conservation_of_put_bytes() {
        let l = Ledger::new(100);
        for s in [10u64, 200, 0, 55] {
            l.record_put(s, 1.0);
        }
        let t = l.totals();
        assert_eq!(t.bytes_written, 265);
        assert_eq!(t.large_puts, 1);
        assert_eq!(t.large_bytes_written, 200);
    }

    #[test]
    fn clustered_chain_writes_only_the_final() {
        let mut t = LedgerTotals::default();
        t.bytes_published = 8;
        let a = amplification(&t, 16, 8);
        assert_eq!(a.write_factor, Factor(1.0));
        assert_eq!(a.read_factor, Factor(0.0));
    }

    #[test]
    fn zero_output_is_infinite() {
        let t = LedgerTotals {
            bytes_written: 5,
            ..Default::default()
        };
        let a = amplification(&t, 0, 0);
        assert!(a.write_factor.is_infinite());
        let json = serde_json::to_string(&a).unwrap();
        assert!(json.contains("\"inf\""));
        let back: Amplification = serde_json::from_str(&json).unwrap();
        assert!(back.read_factor.is_infinite());
    }

    #[test]
    fn executors_sorted_naturally() {
        let l = Ledger::new(0);
        for id in ["e10", "e2", "e1"] {
            l.add_executor(ExecutorReport {
                executor_id: id.into(),
                ..Default::default()
            });
        }
        let ids: Vec<String> = l.executors().into_iter().map(|e| e.executor_id).collect();
        assert_eq!(ids, vec!["e1", "e2", "e10"]);
    }
}
