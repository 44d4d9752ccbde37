//! Optional JSON-lines trace of store operations and invocations.

use std::io::{self, Write};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TraceRecord {
    Store(StoreRecord),
    Invoke(InvokeRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub op: StoreOp,
    pub key: String,
    pub size: u64,
    /// Shard index; `None` for metadata-store operations.
    pub shard: Option<usize>,
    pub t_start: f64,
    pub latency_ms: f64,
    pub caller: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreOp {
    Put,
    Get,
    Incr,
    ReadCounter,
    PutSchedule,
    GetSchedule,
    Publish,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvokeRecord {
    pub t: f64,
    pub start_task: String,
    pub inline_bytes: u64,
    pub n_arg_keys: usize,
    pub worker: String,
}

#[derive(Debug, Default)]
pub struct Trace {
    records: Mutex<Vec<TraceRecord>>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, rec: TraceRecord) {
        self.records.lock().unwrap().push(rec);
    }

    pub fn records(&self) -> Vec<TraceRecord> {
        self.records.lock().unwrap().clone()
    }

    pub fn store_records(&self) -> Vec<StoreRecord> {
        self.records
            .lock()
            .unwrap()
            .iter()
            .filter_map(|r| match r {
                TraceRecord::Store(s) => Some(s.clone()),
                TraceRecord::Invoke(_) => None,
            })
            .collect()
    }

    pub fn invoke_records(&self) -> Vec<InvokeRecord> {
        self.records
            .lock()
            .unwrap()
            .iter()
            .filter_map(|r| match r {
                TraceRecord::Invoke(i) => Some(i.clone()),
                TraceRecord::Store(_) => None,
            })
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for rec in self.records.lock().unwrap().iter() {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_has_one_line_per_record() {
        let t = Trace::new();
        t.push(TraceRecord::Store(StoreRecord {
            op: StoreOp::Put,
            key: "obj/a".into(),
            size: 3,
            shard: Some(1),
            t_start: 0.0,
            latency_ms: 1.0,
            caller: "e0".into(),
        }));
        t.push(TraceRecord::Invoke(InvokeRecord {
            t: 50.0,
            start_task: "a".into(),
            inline_bytes: 8,
            n_arg_keys: 0,
            worker: "invoker-0".into(),
        }));
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("\"op\":\"put\""));
        let back: TraceRecord = serde_json::from_str(lines[1]).unwrap();
        assert!(matches!(back, TraceRecord::Invoke(_)));
    }
}
