//! Unsharded metadata store: dependency counters, static schedules, and the
//! channel over which sink tasks publish final results to the driver.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use bytes::Bytes;
use tokio::sync::watch;

use crate::clock::Clock;
use crate::dag::TaskId;
use crate::metrics::Ledger;
use crate::schedule::StaticSchedule;
use crate::store::{NetworkCostModel, StoreError};
use crate::trace::{StoreOp, StoreRecord, Trace, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Counter {
    value: u64,
    target: u64,
}

#[derive(Default)]
struct Finals {
    sinks: BTreeMap<TaskId, String>,
    results: BTreeMap<TaskId, Bytes>,
    aborted: Option<String>,
}

struct Inner {
    model: NetworkCostModel,
    clock: Clock,
    ledger: Arc<Ledger>,
    trace: Option<Arc<Trace>>,
    counters: Mutex<HashMap<TaskId, Counter>>,
    lost_increments: Mutex<BTreeSet<TaskId>>,
    schedules: Mutex<HashMap<String, (Arc<StaticSchedule>, u64)>>,
    finals: Mutex<Finals>,
    version: watch::Sender<u64>,
}

#[derive(Clone)]
pub struct MetadataStore {
    inner: Arc<Inner>,
}

impl MetadataStore {
    pub fn new(model: NetworkCostModel, clock: Clock, ledger: Arc<Ledger>, trace: Option<Arc<Trace>>) -> Self {
        let (version, _) = watch::channel(0);
        Self {
            inner: Arc::new(Inner {
                model,
                clock,
                ledger,
                trace,
                counters: Mutex::default(),
                lost_increments: Mutex::default(),
                schedules: Mutex::default(),
                finals: Mutex::default(),
                version,
            }),
        }
    }

    /// Fault injection: the first increment of `task`'s counter is acknowledged
    /// to the caller but never applied.
    pub fn lose_first_increment(&self, task: TaskId) {
        self.inner.lost_increments.lock().unwrap().insert(task);
    }

    fn record(&self, op: StoreOp, key: String, size: u64, t0: f64, caller: &str) {
        if let Some(trace) = &self.inner.trace {
            trace.push(TraceRecord::Store(StoreRecord {
                op,
                key,
                size,
                shard: None,
                t_start: t0,
                latency_ms: self.inner.clock.now_ms() - t0,
                caller: caller.to_string(),
            }));
        }
    }

    /// The untimed atomic step behind [`increment_and_get`](Self::increment_and_get).
    pub fn increment_now(&self, task: TaskId, target: u64) -> Result<u64, StoreError> {
        let mut counters = self.inner.counters.lock().unwrap();
        let c = counters.entry(task).or_insert(Counter { value: 0, target });
        if c.value >= c.target {
            return Err(StoreError::OverTarget { task, target: c.target });
        }
        if self.inner.lost_increments.lock().unwrap().remove(&task) {
            return Ok(c.value + 1);
        }
        c.value += 1;
        Ok(c.value)
    }

    pub fn read_now(&self, task: TaskId) -> u64 {
        self.inner
            .counters
            .lock()
            .unwrap()
            .get(&task)
            .map_or(0, |c| c.value)
    }

    /// Atomically increments the counter guarding `task`, registering it with
    /// `target` on first use, and returns the new value.
    pub async fn increment_and_get(&self, task: TaskId, target: u64, caller: &str) -> Result<u64, StoreError> {
        let t0 = self.inner.clock.now_ms();
        self.inner.clock.sleep(self.inner.model.per_op_latency_ms).await;
        let v = self.increment_now(task, target)?;
        self.inner.ledger.record_counter(self.inner.clock.now_ms() - t0);
        self.record(StoreOp::Incr, format!("counter/{}", task.0), 0, t0, caller);
        Ok(v)
    }

    pub async fn read_counter(&self, task: TaskId, caller: &str) -> u64 {
        let t0 = self.inner.clock.now_ms();
        self.inner.clock.sleep(self.inner.model.per_op_latency_ms).await;
        let v = self.read_now(task);
        self.inner.ledger.record_counter(self.inner.clock.now_ms() - t0);
        self.record(StoreOp::ReadCounter, format!("counter/{}", task.0), 0, t0, caller);
        v
    }

    pub fn counters(&self) -> BTreeMap<TaskId, (u64, u64)> {
        self.inner
            .counters
            .lock()
            .unwrap()
            .iter()
            .map(|(&t, c)| (t, (c.value, c.target)))
            .collect()
    }

    /// Stores every schedule in one batched operation.
    pub async fn put_schedules(&self, schedules: &[StaticSchedule]) {
        let t0 = self.inner.clock.now_ms();
        let mut total = 0u64;
        let mut entries = Vec::with_capacity(schedules.len());
        for s in schedules {
            let size = serde_json::to_vec(&s.to_doc()).map_or(0, |v| v.len() as u64);
            total += size;
            entries.push((s.key(), (Arc::new(s.clone()), size)));
        }
        self.inner.clock.sleep(self.inner.model.transfer_time(total)).await;
        self.inner.schedules.lock().unwrap().extend(entries);
        self.record(StoreOp::PutSchedule, "schedule/*".into(), total, t0, "driver");
    }

    /// Registers schedules without modeled cost; used by the proxy and tests.
    pub fn insert_schedule(&self, schedule: StaticSchedule) {
        let size = serde_json::to_vec(&schedule.to_doc()).map_or(0, |v| v.len() as u64);
        self.inner
            .schedules
            .lock()
            .unwrap()
            .insert(schedule.key(), (Arc::new(schedule), size));
    }

    pub async fn get_schedule(&self, key: &str, caller: &str) -> Result<Arc<StaticSchedule>, StoreError> {
        let (sched, size) = self
            .inner
            .schedules
            .lock()
            .unwrap()
            .get(key)
            .cloned()
            .ok_or_else(|| StoreError::UnknownSchedule(key.to_string()))?;
        let t0 = self.inner.clock.now_ms();
        self.inner.clock.sleep(self.inner.model.transfer_time(size)).await;
        self.inner.ledger.record_schedule_read(size);
        self.record(StoreOp::GetSchedule, key.to_string(), size, t0, caller);
        Ok(sched)
    }

    pub fn set_sinks(&self, sinks: BTreeMap<TaskId, String>) {
        let mut f = self.inner.finals.lock().unwrap();
        f.sinks = sinks;
        f.results.clear();
        f.aborted = None;
    }

    pub async fn publish_final(&self, task: TaskId, bytes: Bytes, caller: &str) -> Result<f64, StoreError> {
        let name = {
            let f = self.inner.finals.lock().unwrap();
            let name = f
                .sinks
                .get(&task)
                .cloned()
                .ok_or_else(|| StoreError::NotASink(task.to_string()))?;
            if f.results.contains_key(&task) {
                return Err(StoreError::DuplicateFinal(name));
            }
            name
        };
        let size = bytes.len() as u64;
        let t0 = self.inner.clock.now_ms();
        self.inner.clock.sleep(self.inner.model.transfer_time(size)).await;
        {
            let mut f = self.inner.finals.lock().unwrap();
            if f.results.insert(task, bytes).is_some() {
                return Err(StoreError::DuplicateFinal(name));
            }
        }
        let latency = self.inner.clock.now_ms() - t0;
        self.inner.ledger.record_publish(size, latency);
        self.record(StoreOp::Publish, format!("final/{name}"), size, t0, caller);
        self.inner.version.send_modify(|v| *v += 1);
        Ok(latency)
    }

    /// Ends any pending [`await_final`](Self::await_final) with `Aborted`.
    pub fn abort(&self, reason: impl Into<String>) {
        {
            let mut f = self.inner.finals.lock().unwrap();
            if f.aborted.is_none() {
                f.aborted = Some(reason.into());
            }
        }
        self.inner.version.send_modify(|v| *v += 1);
    }

    /// Waits until every sink has published, the job aborts, or the optional
    /// deadline (absolute clock time) passes.
    pub async fn await_final(&self, deadline_ms: Option<f64>) -> Result<BTreeMap<TaskId, Bytes>, StoreError> {
        let mut rx = self.inner.version.subscribe();
        loop {
            {
                let f = self.inner.finals.lock().unwrap();
                if let Some(reason) = &f.aborted {
                    return Err(StoreError::Aborted(reason.clone()));
                }
                if f.sinks.keys().all(|t| f.results.contains_key(t)) {
                    return Ok(f.results.clone());
                }
            }
            match deadline_ms {
                None => {
                    let _ = rx.changed().await;
                }
                Some(d) => {
                    let wait = d - self.inner.clock.now_ms();
                    tokio::select! {
                        biased;
                        _ = rx.changed() => {}
                        _ = self.inner.clock.sleep(wait.max(0.0)) => {
                            let f = self.inner.finals.lock().unwrap();
                            if f.sinks.keys().all(|t| f.results.contains_key(t)) {
                                return Ok(f.results.clone());
                            }
                            let missing = f
                                .sinks
                                .iter()
                                .filter(|(t, _)| !f.results.contains_key(t))
                                .map(|(_, n)| n.clone())
                                .collect();
                            return Err(StoreError::Timeout { missing });
                        }
                    }
                }
            }
        }
    }

    pub fn finals(&self) -> BTreeMap<TaskId, Bytes> {
        self.inner.finals.lock().unwrap().results.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{self, ClockKind};

    fn mds(c: Clock) -> MetadataStore {
        MetadataStore::new(NetworkCostModel::default(), c, Arc::new(Ledger::new(u64::MAX)), None)
    }

    #[test]
    fn counter_reaches_target_once() {
        clock::run(ClockKind::Virtual, |c| async move {
            let m = mds(c);
            assert_eq!(m.increment_and_get(TaskId(3), 2, "a").await.unwrap(), 1);
            assert_eq!(m.increment_and_get(TaskId(3), 2, "b").await.unwrap(), 2);
            assert_eq!(
                m.increment_and_get(TaskId(3), 2, "c").await.unwrap_err(),
                StoreError::OverTarget {
                    task: TaskId(3),
                    target: 2
                }
            );
            assert_eq!(m.read_counter(TaskId(3), "d").await, 2);
            assert_eq!(m.read_counter(TaskId(9), "d").await, 0);
        })
        .unwrap();
    }

    #[test]
    fn counter_ops_cost_one_latency() {
        let t = clock::run(ClockKind::Virtual, |c| async move {
            let m = mds(c.clone());
            m.increment_and_get(TaskId(0), 5, "a").await.unwrap();
            m.read_counter(TaskId(0), "a").await;
            c.now_ms()
        })
        .unwrap();
        assert_eq!(t, 2.0);
    }

    #[test]
    fn lost_increment_is_not_applied() {
        let m = MetadataStore::new(
            NetworkCostModel::free(),
            clock_for_sync(),
            Arc::new(Ledger::new(0)),
            None,
        );
        m.lose_first_increment(TaskId(1));
        assert_eq!(m.increment_now(TaskId(1), 2).unwrap(), 1);
        assert_eq!(m.read_now(TaskId(1)), 0);
        assert_eq!(m.increment_now(TaskId(1), 2).unwrap(), 1);
    }

    fn clock_for_sync() -> Clock {
        Clock::Virtual(crate::clock::SimHandle::new())
    }

    #[test]
    fn concurrent_increments_are_a_permutation() {
        let m = MetadataStore::new(NetworkCostModel::free(), clock_for_sync(), Arc::new(Ledger::new(0)), None);
        let mut seen: Vec<u64> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..64)
                .map(|_| s.spawn(|| m.increment_now(TaskId(0), 64).unwrap()))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        seen.sort_unstable();
        assert_eq!(seen, (1..=64).collect::<Vec<_>>());
    }

    #[test]
    fn await_final_collects_every_sink() {
        let got = clock::run(ClockKind::Virtual, |c| async move {
            let m = mds(c.clone());
            m.set_sinks(BTreeMap::from([(TaskId(1), "a".into()), (TaskId(2), "b".into())]));
            for t in [1u32, 2] {
                let m2 = m.clone();
                c.spawn("publisher", async move {
                    m2.publish_final(TaskId(t), Bytes::from(vec![t as u8]), "e").await.unwrap();
                });
            }
            m.await_final(None).await.unwrap()
        })
        .unwrap();
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn await_final_times_out_with_missing_sinks() {
        let err = clock::run(ClockKind::Virtual, |c| async move {
            let m = mds(c.clone());
            m.set_sinks(BTreeMap::from([(TaskId(1), "a".into()), (TaskId(2), "b".into())]));
            m.publish_final(TaskId(1), Bytes::new(), "e").await.unwrap();
            m.await_final(Some(1000.0)).await.unwrap_err()
        })
        .unwrap();
        assert_eq!(err, StoreError::Timeout { missing: vec!["b".into()] });
    }

    #[test]
    fn publishing_a_non_sink_fails() {
        clock::run(ClockKind::Virtual, |c| async move {
            let m = mds(c);
            m.set_sinks(BTreeMap::from([(TaskId(1), "a".into())]));
            assert!(matches!(
                m.publish_final(TaskId(0), Bytes::new(), "e").await,
                Err(StoreError::NotASink(_))
            ));
            m.publish_final(TaskId(1), Bytes::new(), "e").await.unwrap();
            assert!(matches!(
                m.publish_final(TaskId(1), Bytes::new(), "e").await,
                Err(StoreError::DuplicateFinal(_))
            ));
        })
        .unwrap();
    }
}
