//! Run reports (JSON and CSV), comparisons and the optimization ladder.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::{EngineConfig, SchedulerKind};
use crate::cost::CostReport;
use crate::job::RunOutcome;
use crate::metrics::{amplification, input_bytes, output_bytes, Amplification, ExecutorReport, LedgerTotals};
use crate::workloads::Workload;

pub const SCHEMA: u32 = 1;

/// Fingerprint of one final output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub fnv64: String,
    pub len: usize,
}

pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub workload: String,
    pub scheduler: SchedulerKind,
    pub mode: String,
    pub seed: u64,
    pub clustering: bool,
    pub delayed_io: bool,
    pub shard_count: usize,
    pub tasks: usize,
    pub makespan_ms: f64,
    pub quiescent_ms: f64,
    pub verified: Option<bool>,
    pub totals: LedgerTotals,
    pub amplification: Amplification,
    pub cost: CostReport,
    pub outputs: BTreeMap<String, OutputDigest>,
    pub executors: Vec<ExecutorReport>,
    /// Host time spent on the run; the only field that varies between
    /// identical virtual runs.
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReportError {
    #[error("report schema mismatch: {0} vs {1}")]
    SchemaMismatch(u32, u32),
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

impl From<std::io::Error> for ReportError {
    fn from(e: std::io::Error) -> Self {
        ReportError::Io(e.to_string())
    }
}

/// Column order of `report.csv`. Stable across releases of schema 1.
pub const CSV_COLUMNS: &[&str] = &[
    "schema",
    "workload",
    "scheduler",
    "mode",
    "seed",
    "clustering",
    "delayed_io",
    "shard_count",
    "tasks",
    "makespan_ms",
    "quiescent_ms",
    "verified",
    "invocations",
    "task_dispatches",
    "executors",
    "store_puts",
    "store_gets",
    "bytes_written",
    "bytes_read",
    "large_bytes_written",
    "large_bytes_read",
    "counter_ops",
    "publishes",
    "bytes_published",
    "proxy_messages",
    "retries",
    "failures",
    "read_factor",
    "write_factor",
    "billed_quanta",
    "total_usd",
];

fn factor(f: crate::metrics::Factor) -> String {
    if f.is_infinite() {
        "inf".into()
    } else {
        f.0.to_string()
    }
}

impl RunReport {
    pub fn new(workload: &Workload, cfg: &EngineConfig, out: &RunOutcome, verified: Option<bool>, wall_time_ms: f64) -> Self {
        let graph = &workload.graph;
        let amp = amplification(&out.totals, input_bytes(&workload.constants), output_bytes(&out.finals));
        let outputs = out
            .finals
            .iter()
            .map(|(t, b)| {
                (
                    graph.name(*t).to_string(),
                    OutputDigest {
                        fnv64: format!("{:016x}", fnv64(b)),
                        len: b.len(),
                    },
                )
            })
            .collect();
        Self {
            schema: SCHEMA,
            workload: workload.spec.to_string(),
            scheduler: cfg.scheduler,
            mode: cfg.mode.to_string(),
            seed: cfg.seed,
            clustering: cfg.cluster.clustering,
            delayed_io: cfg.cluster.delayed_io,
            shard_count: cfg.store.shard_count,
            tasks: graph.len(),
            makespan_ms: out.makespan_ms,
            quiescent_ms: out.quiescent_ms,
            verified,
            totals: out.totals.clone(),
            amplification: amp,
            cost: cfg.cost.bill(&out.executors, out.makespan_ms),
            outputs,
            executors: out.executors.clone(),
            wall_time_ms,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| ReportError::Parse(e.to_string()))?;
        let schema = v.get("schema").and_then(|s| s.as_u64()).unwrap_or(0) as u32;
        if schema != SCHEMA {
            return Err(ReportError::SchemaMismatch(schema, SCHEMA));
        }
        serde_json::from_value(v).map_err(|e| ReportError::Parse(e.to_string()))
    }

    fn csv_row(&self) -> Vec<String> {
        let t = &self.totals;
        vec![
            self.schema.to_string(),
            self.workload.clone(),
            self.scheduler.to_string(),
            self.mode.clone(),
            self.seed.to_string(),
            self.clustering.to_string(),
            self.delayed_io.to_string(),
            self.shard_count.to_string(),
            self.tasks.to_string(),
            self.makespan_ms.to_string(),
            self.quiescent_ms.to_string(),
            self.verified.map_or_else(String::new, |v| v.to_string()),
            t.invocations.to_string(),
            t.task_dispatches.to_string(),
            t.executors.to_string(),
            t.store_puts.to_string(),
            t.store_gets.to_string(),
            t.bytes_written.to_string(),
            t.bytes_read.to_string(),
            t.large_bytes_written.to_string(),
            t.large_bytes_read.to_string(),
            t.counter_ops.to_string(),
            t.publishes.to_string(),
            t.bytes_published.to_string(),
            t.proxy_messages.to_string(),
            t.retries.to_string(),
            t.failures.to_string(),
            factor(self.amplification.read_factor),
            factor(self.amplification.write_factor),
            self.cost.billed_quanta.to_string(),
            self.cost.total_usd.to_string(),
        ]
    }

    /// Writes a header row plus one row per report.
    pub fn write_csv<W: Write>(reports: &[&RunReport], w: W) -> Result<(), ReportError> {
        let mut wtr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| ReportError::Io(e.to_string());
        wtr.write_record(CSV_COLUMNS).map_err(io)?;
        for r in reports {
            wtr.write_record(r.csv_row()).map_err(io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRow {
    pub metric: &'static str,
    pub a: f64,
    pub b: f64,
    /// `(b - a) / a` in percent; zero when both are zero.
    pub delta_pct: f64,
}

fn pct(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else if a == 0.0 {
        f64::INFINITY
    } else {
        (b - a) / a * 100.0
    }
}

fn metrics(r: &RunReport) -> [(&'static str, f64); 7] {
    let t = &r.totals;
    [
        ("makespan_ms", r.makespan_ms),
        ("invocations", t.invocations as f64),
        ("bytes_written", t.bytes_written as f64),
        ("bytes_read", t.bytes_read as f64),
        ("store_bytes", t.store_bytes() as f64),
        ("large_store_bytes", t.large_store_bytes() as f64),
        ("total_usd", r.cost.total_usd),
    ]
}

/// Side-by-side metrics of two runs with percentage deltas.
pub fn compare(a: &RunReport, b: &RunReport) -> Result<Vec<DeltaRow>, ReportError> {
    if a.schema != b.schema {
        return Err(ReportError::SchemaMismatch(a.schema, b.schema));
    }
    Ok(metrics(a)
        .into_iter()
        .zip(metrics(b))
        .map(|((metric, x), (_, y))| DeltaRow {
            metric,
            a: x,
            b: y,
            delta_pct: pct(x, y),
        })
        .collect())
}

pub fn render_deltas(rows: &[DeltaRow]) -> String {
    let mut s = format!("{:<20} {:>16} {:>16} {:>10}\n", "metric", "a", "b", "delta%");
    for r in rows {
        s += &format!("{:<20} {:>16.3} {:>16.3} {:>10.2}\n", r.metric, r.a, r.b, r.delta_pct);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderRow {
    pub step: String,
    pub makespan_ms: f64,
    pub store_bytes: u64,
    /// Makespan of the baseline step over this step's makespan.
    pub speedup: f64,
    /// Store bytes of the baseline step over this step's store bytes.
    pub io_reduction: f64,
}

/// Improvement of each step relative to the first.
pub fn ladder(steps: &[(String, RunReport)]) -> Vec<LadderRow> {
    let Some((_, base)) = steps.first() else { return Vec::new() };
    let ratio = |a: f64, b: f64| if b == 0.0 { f64::INFINITY } else { a / b };
    steps
        .iter()
        .map(|(name, r)| LadderRow {
            step: name.clone(),
            makespan_ms: r.makespan_ms,
            store_bytes: r.totals.store_bytes(),
            speedup: ratio(base.makespan_ms, r.makespan_ms),
            io_reduction: ratio(base.totals.store_bytes() as f64, r.totals.store_bytes() as f64),
        })
        .collect()
}

pub fn render_ladder(rows: &[LadderRow]) -> String {
    let mut s = format!("{:<16} {:>14} {:>14} {:>9} {:>9}\n", "step", "makespan_ms", "store_bytes", "speedup", "io_red");
    for r in rows {
        s += &format!(
            "{:<16} {:>14.3} {:>14} {:>9.2} {:>9.2}\n",
            r.step, r.makespan_ms, r.store_bytes, r.speedup, r.io_reduction
        );
    }
    s
}

/// The three ladder configurations: no optimizations, clustering, then
/// clustering plus delayed I/O.
pub fn ladder_configs(base: &EngineConfig) -> Vec<(String, EngineConfig)> {
    let mut off = base.clone();
    off.cluster.clustering = false;
    off.cluster.delayed_io = false;
    let mut clustered = off.clone();
    clustered.cluster.clustering = true;
    let mut delayed = clustered.clone();
    delayed.cluster.delayed_io = true;
    vec![
        ("baseline".into(), off),
        ("+clustering".into(), clustered),
        ("+delayed-io".into(), delayed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::job;
    use crate::workloads::WorkloadSpec;

    fn report(cfg: &EngineConfig) -> RunReport {
        let w = WorkloadSpec::Example6.build().unwrap();
        let out = job::run(&w, cfg).unwrap();
        RunReport::new(&w, cfg, &out, Some(true), 0.0)
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn identical_reports_have_zero_deltas() {
        let r = report(&EngineConfig::default());
        assert!(compare(&r, &r).unwrap().iter().all(|d| d.delta_pct == 0.0));
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let r = report(&EngineConfig::default());
        let mut other = r.clone();
        other.schema = 2;
        assert_eq!(compare(&r, &other).unwrap_err(), ReportError::SchemaMismatch(1, 2));
        let text = other.to_json();
        assert_eq!(RunReport::from_json(&text).unwrap_err(), ReportError::SchemaMismatch(2, 1));
    }

    #[test]
    fn json_round_trip_and_csv_header() {
        let r = report(&EngineConfig::default());
        assert_eq!(RunReport::from_json(&r.to_json()).unwrap(), r);
        let mut buf = Vec::new();
        RunReport::write_csv(&[&r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap().split(',').count(), CSV_COLUMNS.len());
    }

    #[test]
    fn ladder_is_relative_to_first_step() {
        let cfgs = ladder_configs(&EngineConfig::default());
        assert_eq!(cfgs.len(), 3);
        let steps: Vec<_> = cfgs.iter().map(|(n, c)| (n.clone(), report(c))).collect();
        let rows = ladder(&steps);
        assert_eq!(rows[0].speedup, 1.0);
        assert_eq!(rows[0].io_reduction, 1.0);
    }
}
