//! Sharded in-memory object store for intermediate task outputs.
//!
//! Every put and get is charged `per_op_latency_ms + size / bandwidth`. In
//! virtual mode the bandwidth of each shard is shared among its concurrent
//! transfers (processor sharing): with `k` active transfers each progresses at
//! `bandwidth / k`, recomputed whenever a transfer is admitted or completes.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use crate::clock::{ms_to_ns, Clock, SimHandle};
use crate::dag::TaskId;
use crate::metrics::Ledger;
use crate::trace::{StoreOp, StoreRecord, Trace, TraceRecord};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StoreError {
    #[error("object keys must be nonempty")]
    InvalidKey,
    #[error("object {0:?} not found")]
    NotFound(String),
    #[error("shard {shard} would exceed its {cap}-byte capacity")]
    CapacityExceeded { shard: usize, cap: u64 },
    #[error("counter for task {task} incremented past its target {target}")]
    OverTarget { task: TaskId, target: u64 },
    #[error("timed out waiting for final results of {missing:?}")]
    Timeout { missing: Vec<String> },
    #[error("job aborted: {0}")]
    Aborted(String),
    #[error("no schedule stored under {0:?}")]
    UnknownSchedule(String),
    #[error("task {0:?} is not a sink")]
    NotASink(String),
    #[error("final result for {0:?} published twice")]
    DuplicateFinal(String),
}

/// Latency model for store operations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkCostModel {
    pub per_op_latency_ms: f64,
    /// Transfer rate; `f64::INFINITY` makes transfers free.
    pub bandwidth_bytes_per_ms: f64,
}

impl Default for NetworkCostModel {
    fn default() -> Self {
        Self {
            per_op_latency_ms: 1.0,
            bandwidth_bytes_per_ms: 125_000.0,
        }
    }
}

impl NetworkCostModel {
    pub fn free() -> Self {
        Self {
            per_op_latency_ms: 0.0,
            bandwidth_bytes_per_ms: f64::INFINITY,
        }
    }

    pub fn bandwidth_ms(&self, size: u64) -> f64 {
        if size == 0 || self.bandwidth_bytes_per_ms.is_infinite() {
            0.0
        } else {
            size as f64 / self.bandwidth_bytes_per_ms
        }
    }

    /// Uncontended time to move `size` bytes.
    pub fn transfer_time(&self, size: u64) -> f64 {
        self.per_op_latency_ms + self.bandwidth_ms(size)
    }
}

/// Deterministic key-to-shard mapping (64-bit FNV-1a).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShardMap {
    shard_count: usize,
}

impl ShardMap {
    pub fn new(shard_count: usize) -> Self {
        assert!(shard_count > 0, "shard count must be positive");
        Self { shard_count }
    }

    pub fn shard_count(&self) -> usize {
        self.shard_count
    }

    pub fn hash(key: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in key.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    pub fn shard(&self, key: &str) -> usize {
        (Self::hash(key) % self.shard_count as u64) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Receipt {
    pub latency_ms: f64,
    pub shard: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoreConfig {
    pub shard_count: usize,
    pub model: NetworkCostModel,
    pub shard_capacity_bytes: Option<u64>,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            shard_count: 8,
            model: NetworkCostModel::default(),
            shard_capacity_bytes: None,
        }
    }
}

struct PsTransfer {
    remaining: f64,
    done: Option<oneshot::Sender<()>>,
}

#[derive(Default)]
struct PsState {
    active: Vec<PsTransfer>,
    last_ns: u64,
    generation: u64,
}

impl PsState {
    fn advance(&mut self, now_ns: u64, bandwidth: f64) {
        let k = self.active.len();
        if k > 0 && now_ns > self.last_ns {
            let elapsed_ms = (now_ns - self.last_ns) as f64 / 1e6;
            let progress = elapsed_ms * bandwidth / k as f64;
            for t in &mut self.active {
                t.remaining -= progress;
            }
        }
        self.last_ns = now_ns;
    }

    fn complete_finished(&mut self) {
        self.active.retain_mut(|t| {
            if t.remaining <= 1e-3 {
                if let Some(tx) = t.done.take() {
                    let _ = tx.send(());
                }
                false
            } else {
                true
            }
        });
    }
}

#[derive(Default)]
struct Shard {
    data: Mutex<HashMap<String, Bytes>>,
    used: Mutex<u64>,
    ps: Arc<Mutex<PsState>>,
}

struct Inner {
    cfg: StoreConfig,
    map: ShardMap,
    shards: Vec<Shard>,
    clock: Clock,
    ledger: Arc<Ledger>,
    trace: Option<Arc<Trace>>,
}

#[derive(Clone)]
pub struct ObjectStore {
    inner: Arc<Inner>,
}

impl ObjectStore {
    pub fn new(cfg: StoreConfig, clock: Clock, ledger: Arc<Ledger>, trace: Option<Arc<Trace>>) -> Self {
        let map = ShardMap::new(cfg.shard_count);
        let shards = (0..cfg.shard_count).map(|_| Shard::default()).collect();
        Self {
            inner: Arc::new(Inner {
                cfg,
                map,
                shards,
                clock,
                ledger,
                trace,
            }),
        }
    }

    pub fn shard_map(&self) -> ShardMap {
        self.inner.map
    }

    pub fn model(&self) -> NetworkCostModel {
        self.inner.cfg.model
    }

    pub fn shard_of(&self, key: &str) -> usize {
        self.inner.map.shard(key)
    }

    fn check_capacity(&self, shard: usize, key: &str, size: u64) -> Result<(), StoreError> {
        let Some(cap) = self.inner.cfg.shard_capacity_bytes else {
            return Ok(());
        };
        let old = self.inner.shards[shard]
            .data
            .lock()
            .unwrap()
            .get(key)
            .map_or(0, |b| b.len() as u64);
        let used = *self.inner.shards[shard].used.lock().unwrap();
        if used - old + size > cap {
            return Err(StoreError::CapacityExceeded { shard, cap });
        }
        Ok(())
    }

    pub async fn put(&self, key: &str, bytes: Bytes, caller: &str) -> Result<Receipt, StoreError> {
        if key.is_empty() {
            return Err(StoreError::InvalidKey);
        }
        let shard = self.shard_of(key);
        let size = bytes.len() as u64;
        self.check_capacity(shard, key, size)?;
        let t0 = self.inner.clock.now_ms();
        self.transfer(shard, size).await;
        {
            let s = &self.inner.shards[shard];
            let mut data = s.data.lock().unwrap();
            let mut used = s.used.lock().unwrap();
            let old = data.get(key).map_or(0, |b| b.len() as u64);
            if let Some(cap) = self.inner.cfg.shard_capacity_bytes {
                if *used - old + size > cap {
                    return Err(StoreError::CapacityExceeded { shard, cap });
                }
            }
            *used = *used - old + size;
            data.insert(key.to_string(), bytes);
        }
        let latency_ms = self.inner.clock.now_ms() - t0;
        self.inner.ledger.record_put(size, latency_ms);
        self.record(StoreOp::Put, key, size, shard, t0, latency_ms, caller);
        Ok(Receipt { latency_ms, shard })
    }

    pub async fn get(&self, key: &str, caller: &str) -> Result<(Bytes, Receipt), StoreError> {
        let shard = self.shard_of(key);
        let bytes = self.inner.shards[shard]
            .data
            .lock()
            .unwrap()
            .get(key)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(key.to_string()))?;
        let size = bytes.len() as u64;
        let t0 = self.inner.clock.now_ms();
        self.transfer(shard, size).await;
        let latency_ms = self.inner.clock.now_ms() - t0;
        self.inner.ledger.record_get(size, latency_ms);
        self.record(StoreOp::Get, key, size, shard, t0, latency_ms, caller);
        Ok((bytes, Receipt { latency_ms, shard }))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.inner.shards[self.shard_of(key)]
            .data
            .lock()
            .unwrap()
            .contains_key(key)
    }

    pub fn keys(&self) -> BTreeSet<String> {
        self.inner
            .shards
            .iter()
            .flat_map(|s| s.data.lock().unwrap().keys().cloned().collect::<Vec<_>>())
            .collect()
    }

    pub fn shard_bytes(&self) -> Vec<u64> {
        self.inner.shards.iter().map(|s| *s.used.lock().unwrap()).collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn record(&self, op: StoreOp, key: &str, size: u64, shard: usize, t0: f64, latency_ms: f64, caller: &str) {
        if let Some(trace) = &self.inner.trace {
            trace.push(TraceRecord::Store(StoreRecord {
                op,
                key: key.to_string(),
                size,
                shard: Some(shard),
                t_start: t0,
                latency_ms,
                caller: caller.to_string(),
            }));
        }
    }

    async fn transfer(&self, shard: usize, size: u64) {
        let model = self.inner.cfg.model;
        match &self.inner.clock {
            Clock::Wall(_) => self.inner.clock.sleep(model.transfer_time(size)).await,
            Clock::Virtual(sim) => {
                self.inner.clock.sleep(model.per_op_latency_ms).await;
                let bw_ms = model.bandwidth_ms(size);
                if bw_ms <= 0.0 {
                    return;
                }
                let (tx, rx) = oneshot::channel();
                let ps = self.inner.shards[shard].ps.clone();
                {
                    let mut st = ps.lock().unwrap();
                    st.advance(sim.now_ns(), model.bandwidth_bytes_per_ms);
                    st.active.push(PsTransfer {
                        remaining: size as f64,
                        done: Some(tx),
                    });
                    reschedule(sim, &ps, &mut st, model.bandwidth_bytes_per_ms, shard);
                }
                let _ = rx.await;
            }
        }
    }
}

/// Arms a timer for the next completion on a shard; stale timers are ignored
/// through the generation counter.
fn reschedule(sim: &SimHandle, ps: &Arc<Mutex<PsState>>, st: &mut PsState, bandwidth: f64, shard: usize) {
    st.generation += 1;
    let Some(min_remaining) = st
        .active
        .iter()
        .map(|t| t.remaining)
        .min_by(|a, b| a.total_cmp(b))
    else {
        return;
    };
    let k = st.active.len() as f64;
    let dt_ms = (min_remaining.max(0.0) * k / bandwidth).max(1e-6);
    let wake = st.last_ns + ms_to_ns(dt_ms).max(1);
    let generation = st.generation;
    let (sim2, ps2) = (sim.clone(), ps.clone());
    sim.spawn(format!("shard-{shard}-timer"), async move {
        sim2.sleep_until_ns(wake).await;
        let mut st = ps2.lock().unwrap();
        if st.generation != generation {
            return;
        }
        st.advance(sim2.now_ns(), bandwidth);
        st.complete_finished();
        reschedule(&sim2, &ps2, &mut st, bandwidth, shard);
    });
}
