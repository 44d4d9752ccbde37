//! Simulated function invocation: fixed per-call latency, a pool of
//! driver-side invoker workers, and a fleet-wide concurrency cap.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, watch};

use crate::clock::Clock;
use crate::dag::TaskId;
use crate::metrics::Ledger;
use crate::trace::{InvokeRecord, Trace, TraceRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InvokerConfig {
    pub invoke_latency_ms: f64,
    pub pool_size: usize,
    pub large_fanout_threshold: usize,
    pub inline_threshold_bytes: u64,
    pub concurrency_cap: usize,
    pub reject_backoff_ms: f64,
}

impl Default for InvokerConfig {
    fn default() -> Self {
        Self {
            invoke_latency_ms: 50.0,
            pool_size: 64,
            large_fanout_threshold: 10,
            inline_threshold_bytes: 262_144,
            concurrency_cap: 5000,
            reject_backoff_ms: 10.0,
        }
    }
}

impl InvokerConfig {
    /// Objects strictly smaller than the threshold travel inside the invocation.
    pub fn passes_inline(&self, size: u64) -> bool {
        size < self.inline_threshold_bytes
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InvokeError {
    #[error("invocation rejected: {active} executors already running (cap {cap})")]
    InvokeRejected { active: usize, cap: usize },
    #[error("task {0} is not a fan-out")]
    UnknownFanout(TaskId),
    #[error("no launcher installed")]
    NoLauncher,
}

/// Names one input of the start task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InputRef {
    Const(usize),
    Output(TaskId),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Invocation {
    pub schedule_ref: String,
    pub start_task: TaskId,
    pub inline_args: BTreeMap<InputRef, Bytes>,
    pub arg_keys: BTreeMap<InputRef, String>,
}

impl Invocation {
    pub fn new(schedule_ref: impl Into<String>, start_task: TaskId) -> Self {
        Self {
            schedule_ref: schedule_ref.into(),
            start_task,
            ..Default::default()
        }
    }

    pub fn inline_bytes(&self) -> u64 {
        self.inline_args.values().map(|b| b.len() as u64).sum()
    }
}

/// Starts whatever runs inside an invoked function.
pub trait Launch: Send + Sync {
    fn launch(&self, inv: Invocation, slot: Slot);
}

/// Keeps the job from being considered quiescent while held.
pub struct Hold {
    pending: Arc<watch::Sender<usize>>,
}

impl Drop for Hold {
    fn drop(&mut self) {
        self.pending.send_modify(|p| *p -= 1);
    }
}

/// One reserved unit of fleet concurrency; released on drop.
pub struct Slot {
    active: Arc<AtomicUsize>,
    _hold: Hold,
}

impl Drop for Slot {
    fn drop(&mut self) {
        self.active.fetch_sub(1, Ordering::AcqRel);
    }
}

struct Inner {
    cfg: InvokerConfig,
    clock: Clock,
    ledger: Arc<Ledger>,
    trace: Option<Arc<Trace>>,
    launcher: OnceLock<Arc<dyn Launch>>,
    active: Arc<AtomicUsize>,
    pending: Arc<watch::Sender<usize>>,
    workers: Vec<mpsc::UnboundedSender<(Invocation, Hold)>>,
    receivers: Mutex<Vec<mpsc::UnboundedReceiver<(Invocation, Hold)>>>,
    task_names: Vec<String>,
}

#[derive(Clone)]
pub struct Invoker {
    inner: Arc<Inner>,
}

impl Invoker {
    /// `task_names` maps TaskIds to names for trace records.
    pub fn new(
        cfg: InvokerConfig,
        clock: Clock,
        ledger: Arc<Ledger>,
        trace: Option<Arc<Trace>>,
        task_names: Vec<String>,
    ) -> Self {
        let (pending, _) = watch::channel(0usize);
        let (workers, receivers): (Vec<_>, Vec<_>) = (0..cfg.pool_size.max(1)).map(|_| mpsc::unbounded_channel()).unzip();
        Self {
            inner: Arc::new(Inner {
                cfg,
                clock,
                ledger,
                trace,
                launcher: OnceLock::new(),
                active: Arc::new(AtomicUsize::new(0)),
                pending: Arc::new(pending),
                workers,
                receivers: Mutex::new(receivers),
                task_names,
            }),
        }
    }

    /// Installs the launcher and starts the pool workers. Call once.
    pub fn start(&self, launcher: Arc<dyn Launch>) {
        if self.inner.launcher.set(launcher).is_err() {
            return;
        }
        let receivers = std::mem::take(&mut *self.inner.receivers.lock().unwrap());
        for (i, mut rx) in receivers.into_iter().enumerate() {
            let this = self.clone();
            let name = format!("invoker-{i}");
            self.inner.clock.spawn(name.clone(), async move {
                while let Some((inv, hold)) = rx.recv().await {
                    // A failure here has already been reported by the launcher
                    // path; the hold is released either way.
                    let _ = this.invoke_retrying(inv, &name).await;
                    drop(hold);
                }
            });
        }
    }

    pub fn config(&self) -> &InvokerConfig {
        &self.inner.cfg
    }

    pub fn active(&self) -> usize {
        self.inner.active.load(Ordering::Acquire)
    }

    pub fn hold(&self) -> Hold {
        self.inner.pending.send_modify(|p| *p += 1);
        Hold {
            pending: self.inner.pending.clone(),
        }
    }

    pub fn pending(&self) -> usize {
        *self.inner.pending.borrow()
    }

    /// Resolves once nothing is queued, in flight, or running.
    pub async fn quiescent(&self) {
        let mut rx = self.inner.pending.subscribe();
        let _ = rx.wait_for(|p| *p == 0).await;
    }

    fn reserve(&self) -> Result<Slot, InvokeError> {
        let cap = self.inner.cfg.concurrency_cap;
        let active = &self.inner.active;
        let mut cur = active.load(Ordering::Acquire);
        loop {
            if cur >= cap {
                self.inner.ledger.record_rejection();
                return Err(InvokeError::InvokeRejected { active: cur, cap });
            }
            match active.compare_exchange(cur, cur + 1, Ordering::AcqRel, Ordering::Acquire) {
                Ok(_) => break,
                Err(now) => cur = now,
            }
        }
        Ok(Slot {
            active: active.clone(),
            _hold: self.hold(),
        })
    }

    /// Starts one function after the invocation latency. The caller is
    /// blocked for that latency.
    pub async fn invoke(&self, inv: Invocation, worker: &str) -> Result<(), InvokeError> {
        let launcher = self.inner.launcher.get().ok_or(InvokeError::NoLauncher)?.clone();
        let slot = self.reserve()?;
        let latency = self.inner.cfg.invoke_latency_ms;
        self.inner.clock.sleep(latency).await;
        self.inner.ledger.record_invocation(latency);
        if let Some(trace) = &self.inner.trace {
            trace.push(TraceRecord::Invoke(InvokeRecord {
                t: self.inner.clock.now_ms(),
                start_task: self
                    .inner
                    .task_names
                    .get(inv.start_task.index())
                    .cloned()
                    .unwrap_or_else(|| inv.start_task.to_string()),
                inline_bytes: inv.inline_bytes(),
                n_arg_keys: inv.arg_keys.len(),
                worker: worker.to_string(),
            }));
        }
        launcher.launch(inv, slot);
        Ok(())
    }

    /// Like [`invoke`](Self::invoke) but retries rejected invocations after a
    /// backoff. Returns the time spent waiting on rejections.
    pub async fn invoke_retrying(&self, inv: Invocation, worker: &str) -> Result<f64, InvokeError> {
        let mut backoff_ms = 0.0;
        loop {
            match self.invoke(inv.clone(), worker).await {
                Err(InvokeError::InvokeRejected { .. }) => {
                    self.inner.clock.sleep(self.inner.cfg.reject_backoff_ms).await;
                    backoff_ms += self.inner.cfg.reject_backoff_ms;
                }
                other => return other.map(|()| backoff_ms),
            }
        }
    }

    /// Hands invocations to the pool round-robin; each worker issues its share
    /// serially. Returns as soon as everything is queued.
    pub fn batch_invoke(&self, invs: Vec<Invocation>) {
        let n = self.inner.workers.len();
        for (i, inv) in invs.into_iter().enumerate() {
            let hold = self.hold();
            // Workers live as long as the invoker, so the send cannot fail.
            let _ = self.inner.workers[i % n].send((inv, hold));
        }
    }
}
