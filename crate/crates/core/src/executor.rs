//! The decentralized executor: runs tasks along a static schedule and makes
//! every fan-out and fan-in decision locally.
//!
//! Fan-in protocol. For a fan-in target `T` with indegree `k`, let `h` be the
//! number of `T`'s inputs this executor produced and has not yet counted.
//! If `h == k` the executor proceeds without touching the counter. Otherwise
//! it reads the counter `v`; if `v + h == k` it claims `T` with `h`
//! increments. Otherwise it stores its output first and then increments, so
//! whoever observes the target value can always fetch every input. The
//! executor whose increment reaches `k` continues with `T`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, Weak};

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use crate::clock::Clock;
use crate::dag::{object_key, Constants, TaskGraph, TaskId};
use crate::fault::FaultState;
use crate::invoker::{Hold, InputRef, InvokeError, Invocation, Invoker, Launch, Slot};
use crate::kernel::KernelError;
use crate::meta::MetadataStore;
use crate::metrics::{ExecutorReport, Ledger, TimeBreakdown};
use crate::schedule::{NormalizedGraph, StaticSchedule};
use crate::store::{ObjectStore, StoreError};

/// Attempts per task before it is declared failed.
pub const MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub clustering: bool,
    pub delayed_io: bool,
    pub cluster_threshold_bytes: u64,
    pub delay_max_rechecks: u32,
    pub delay_recheck_interval_ms: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            clustering: true,
            delayed_io: true,
            cluster_threshold_bytes: 200 << 20,
            delay_max_rechecks: 3,
            delay_recheck_interval_ms: 10.0,
        }
    }
}

impl ClusterConfig {
    /// Waits long enough that unready consumers almost always become ready.
    pub fn patient(mut self) -> Self {
        self.delay_max_rechecks = 20;
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error("task {task} failed after {attempts} attempts: {message}")]
    TaskFailed { task: String, attempts: u32, message: String },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Invoke(#[from] InvokeError),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

/// An input handed to an executor: the bytes themselves or a store key.
#[derive(Debug, Clone, PartialEq)]
pub enum Arg {
    Inline(Bytes),
    Key(String),
}

/// A large fan-out delegated to the driver-side proxy.
pub struct ProxyMessage {
    pub fanout: TaskId,
    pub output: Arg,
    /// Targets the sender handles itself.
    pub exclude: BTreeSet<TaskId>,
    pub schedule_ref: String,
    pub hold: Hold,
}

/// Job-wide services shared by every executor.
pub struct Runtime {
    pub graph: Arc<TaskGraph>,
    pub norm: Arc<NormalizedGraph>,
    pub constants: Arc<Constants>,
    pub clock: Clock,
    pub store: ObjectStore,
    pub mds: MetadataStore,
    pub invoker: Invoker,
    pub ledger: Arc<Ledger>,
    pub cluster: ClusterConfig,
    pub faults: FaultState,
    pub abort_on_failure: bool,
    pub proxy: mpsc::UnboundedSender<ProxyMessage>,
    exec_log: Mutex<Vec<TaskId>>,
    errors: Mutex<Vec<ExecError>>,
    next_executor: AtomicU64,
}

impl Runtime {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        norm: Arc<NormalizedGraph>,
        constants: Arc<Constants>,
        clock: Clock,
        store: ObjectStore,
        mds: MetadataStore,
        invoker: Invoker,
        ledger: Arc<Ledger>,
        cluster: ClusterConfig,
        faults: FaultState,
        abort_on_failure: bool,
        proxy: mpsc::UnboundedSender<ProxyMessage>,
    ) -> Self {
        Self {
            graph: norm.shared_graph(),
            norm,
            constants,
            clock,
            store,
            mds,
            invoker,
            ledger,
            cluster,
            faults,
            abort_on_failure,
            proxy,
            exec_log: Mutex::default(),
            errors: Mutex::default(),
            next_executor: AtomicU64::new(0),
        }
    }

    /// Every successful task completion, in completion order.
    pub fn exec_log(&self) -> Vec<TaskId> {
        self.exec_log.lock().unwrap().clone()
    }

    pub fn errors(&self) -> Vec<ExecError> {
        self.errors.lock().unwrap().clone()
    }

    pub fn log_execution(&self, task: TaskId) {
        self.exec_log.lock().unwrap().push(task);
    }

    pub fn report_error(&self, err: ExecError) {
        if matches!(err, ExecError::TaskFailed { .. }) {
            self.ledger.record_failure();
        }
        let fatal = self.abort_on_failure || !matches!(err, ExecError::TaskFailed { .. });
        if fatal {
            self.mds.abort(err.to_string());
        }
        self.errors.lock().unwrap().push(err);
    }

    pub fn next_id(&self, prefix: &str) -> String {
        format!("{prefix}{}", self.next_executor.fetch_add(1, Ordering::AcqRel))
    }
}

/// Per-actor accounting shared by executors and baseline workers.
#[derive(Debug, Default, Clone)]
pub struct Meter {
    pub t: TimeBreakdown,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub retries: u64,
    pub invocations: u64,
}

impl Meter {
    pub async fn get(&mut self, clock: &Clock, store: &ObjectStore, key: &str, caller: &str) -> Result<Bytes, StoreError> {
        let t0 = clock.now_ms();
        let (bytes, _) = store.get(key, caller).await?;
        self.t.io += clock.now_ms() - t0;
        self.bytes_read += bytes.len() as u64;
        Ok(bytes)
    }

    pub async fn put(&mut self, clock: &Clock, store: &ObjectStore, key: &str, bytes: Bytes, caller: &str) -> Result<(), StoreError> {
        let t0 = clock.now_ms();
        let size = bytes.len() as u64;
        store.put(key, bytes, caller).await?;
        self.t.io += clock.now_ms() - t0;
        self.bytes_written += size;
        Ok(())
    }

    /// Runs a task's kernel with bounded retry. Each attempt consumes the
    /// task's declared duration.
    pub async fn execute_with_retry(
        &mut self,
        clock: &Clock,
        graph: &TaskGraph,
        faults: &FaultState,
        task: TaskId,
        inputs: &[Bytes],
    ) -> Result<Bytes, ExecError> {
        let node = graph.node(task);
        let duration = node.hints.duration_ms.unwrap_or(0.0);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let t0 = clock.now_ms();
            clock.sleep(duration).await;
            let result = if faults.attempt_fails(task) {
                Err(KernelError::new("injected failure"))
            } else {
                node.kernel.kernel.call(inputs)
            };
            self.t.exec += clock.now_ms() - t0;
            match result {
                Ok(bytes) => return Ok(bytes),
                Err(e) if attempt >= MAX_ATTEMPTS => {
                    return Err(ExecError::TaskFailed {
                        task: node.name.clone(),
                        attempts: attempt,
                        message: e.0,
                    })
                }
                Err(_) => self.retries += 1,
            }
        }
    }
}

/// Starts an [`Executor`] for every invocation.
pub struct ExecutorLauncher {
    rt: Weak<Runtime>,
}

impl ExecutorLauncher {
    pub fn new(rt: &Arc<Runtime>) -> Self {
        Self { rt: Arc::downgrade(rt) }
    }
}

impl Launch for ExecutorLauncher {
    fn launch(&self, inv: Invocation, slot: Slot) {
        let Some(rt) = self.rt.upgrade() else { return };
        let id = rt.next_id("e");
        let clock = rt.clock.clone();
        clock.spawn(id.clone(), async move {
            let _slot = slot;
            Executor::new(rt, id).run(inv).await;
        });
    }
}

struct Frame {
    task: TaskId,
    inline: BTreeMap<InputRef, Bytes>,
    keys: BTreeMap<InputRef, String>,
}

impl Frame {
    fn local(task: TaskId) -> Self {
        Self {
            task,
            inline: BTreeMap::new(),
            keys: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FanIn {
    /// Every input is satisfied; `local` of them are held by this executor.
    Ready { local: usize },
    NotReady,
    Delayed,
}

pub struct Executor {
    rt: Arc<Runtime>,
    id: String,
    schedule_ref: String,
    cache: HashMap<TaskId, Bytes>,
    produced: HashSet<TaskId>,
    stored: HashSet<TaskId>,
    /// `(input, fan-in target)` pairs already reflected in the target's counter.
    counted: HashSet<(TaskId, TaskId)>,
    stack: Vec<Frame>,
    /// `(fan-in target, local input)` pairs waiting on delayed I/O.
    delayed: Vec<(TaskId, TaskId)>,
    rechecks: u32,
    meter: Meter,
    tasks: Vec<String>,
}

impl Executor {
    pub fn new(rt: Arc<Runtime>, id: String) -> Self {
        Self {
            rt,
            id,
            schedule_ref: String::new(),
            cache: HashMap::new(),
            produced: HashSet::new(),
            stored: HashSet::new(),
            counted: HashSet::new(),
            stack: Vec::new(),
            delayed: Vec::new(),
            rechecks: 0,
            meter: Meter::default(),
            tasks: Vec::new(),
        }
    }

    pub async fn run(mut self, inv: Invocation) {
        let start_ms = self.rt.clock.now_ms();
        if let Err(e) = self.run_inner(inv).await {
            self.rt.report_error(e);
        }
        let report = ExecutorReport {
            executor_id: self.id.clone(),
            tasks: std::mem::take(&mut self.tasks),
            t_breakdown: self.meter.t,
            bytes_read: self.meter.bytes_read,
            bytes_written: self.meter.bytes_written,
            invocations: self.meter.invocations,
            retries: self.meter.retries,
            start_ms,
            end_ms: self.rt.clock.now_ms(),
        };
        self.rt.ledger.add_executor(report);
    }

    async fn run_inner(&mut self, inv: Invocation) -> Result<(), ExecError> {
        let t0 = self.rt.clock.now_ms();
        let schedule: Arc<StaticSchedule> = self.rt.mds.get_schedule(&inv.schedule_ref, &self.id).await?;
        self.meter.t.io += self.rt.clock.now_ms() - t0;
        self.schedule_ref = schedule.key();
        self.stack.push(Frame {
            task: inv.start_task,
            inline: inv.inline_args,
            keys: inv.arg_keys,
        });
        loop {
            while let Some(frame) = self.stack.pop() {
                self.step(frame).await?;
            }
            if self.delayed.is_empty() {
                return Ok(());
            }
            self.delayed_round().await?;
        }
    }

    async fn step(&mut self, frame: Frame) -> Result<(), ExecError> {
        let task = frame.task;
        let inputs = self.gather(&frame).await?;
        let rt = self.rt.clone();
        let retries_before = self.meter.retries;
        let out = self
            .meter
            .execute_with_retry(&rt.clock, &rt.graph, &rt.faults, task, &inputs)
            .await?;
        rt.ledger.record_task(self.meter.retries - retries_before);
        rt.log_execution(task);
        self.tasks.push(rt.graph.name(task).to_string());
        self.produced.insert(task);
        self.cache.insert(task, out.clone());
        if rt.graph.outdegree(task) == 0 {
            let t0 = rt.clock.now_ms();
            rt.mds.publish_final(task, out, &self.id).await?;
            self.meter.t.publish += rt.clock.now_ms() - t0;
        } else {
            self.dispatch(task, out).await?;
        }
        self.prune_cache();
        Ok(())
    }

    async fn fetch(&mut self, key: &str) -> Result<Bytes, ExecError> {
        let rt = self.rt.clone();
        Ok(self.meter.get(&rt.clock, &rt.store, key, &self.id).await?)
    }

    async fn gather(&mut self, frame: &Frame) -> Result<Vec<Bytes>, ExecError> {
        let rt = self.rt.clone();
        let task = frame.task;
        let n_const = rt.constants.get(&task).map_or(0, Vec::len);
        let deps = rt.graph.deps(task);
        let mut inputs = Vec::with_capacity(n_const + deps.len());
        for i in 0..n_const {
            let r = InputRef::Const(i);
            if let Some(b) = frame.inline.get(&r) {
                inputs.push(b.clone());
            } else if let Some(k) = frame.keys.get(&r) {
                inputs.push(self.fetch(k).await?);
            } else {
                return Err(ExecError::Protocol(format!(
                    "constant {i} of {} was not passed to its executor",
                    rt.graph.name(task)
                )));
            }
        }
        for &d in deps {
            let r = InputRef::Output(d);
            if let Some(b) = self.cache.get(&d) {
                inputs.push(b.clone());
            } else if let Some(b) = frame.inline.get(&r) {
                inputs.push(b.clone());
            } else if let Some(k) = frame.keys.get(&r) {
                inputs.push(self.fetch(k).await?);
            } else {
                inputs.push(self.fetch(&object_key(rt.graph.name(d))).await?);
            }
        }
        Ok(inputs)
    }

    async fn ensure_stored(&mut self, task: TaskId) -> Result<(), ExecError> {
        if self.stored.contains(&task) {
            return Ok(());
        }
        let rt = self.rt.clone();
        let bytes = self
            .cache
            .get(&task)
            .cloned()
            .ok_or_else(|| ExecError::Protocol(format!("output of {} evicted before it was stored", rt.graph.name(task))))?;
        self.meter
            .put(&rt.clock, &rt.store, &object_key(rt.graph.name(task)), bytes, &self.id)
            .await?;
        self.stored.insert(task);
        Ok(())
    }

    fn uncounted_local(&self, target: TaskId) -> Vec<TaskId> {
        self.rt
            .graph
            .deps(target)
            .iter()
            .copied()
            .filter(|d| self.produced.contains(d) && !self.counted.contains(&(*d, target)))
            .collect()
    }

    async fn increment(&mut self, target: TaskId) -> Result<u64, ExecError> {
        let rt = self.rt.clone();
        let k = rt.graph.indegree(target) as u64;
        let t0 = rt.clock.now_ms();
        let v = rt.mds.increment_and_get(target, k, &self.id).await?;
        self.meter.t.io += rt.clock.now_ms() - t0;
        Ok(v)
    }

    async fn read_counter(&mut self, target: TaskId) -> u64 {
        let rt = self.rt.clone();
        let t0 = rt.clock.now_ms();
        let v = rt.mds.read_counter(target, &self.id).await;
        self.meter.t.io += rt.clock.now_ms() - t0;
        v
    }

    /// Counts every uncounted local input of `target`; the final increment
    /// must reach the target value.
    async fn claim(&mut self, target: TaskId, inputs: &[TaskId]) -> Result<(), ExecError> {
        let k = self.rt.graph.indegree(target) as u64;
        let mut last = 0;
        for &d in inputs {
            last = self.increment(target).await?;
            self.counted.insert((d, target));
        }
        if last != k {
            return Err(ExecError::Protocol(format!(
                "claimed {} but its counter reached {last} of {k}",
                self.rt.graph.name(target)
            )));
        }
        Ok(())
    }

    /// Evaluates a fan-in edge `input → target` where `input` was just
    /// produced here.
    async fn fanin(&mut self, target: TaskId, input: TaskId, may_delay: bool) -> Result<FanIn, ExecError> {
        let k = self.rt.graph.indegree(target);
        let local = self.uncounted_local(target);
        if local.len() == k {
            for &d in &local {
                self.counted.insert((d, target));
            }
            self.delayed.retain(|&(t, _)| t != target);
            return Ok(FanIn::Ready { local: k });
        }
        let v = self.read_counter(target).await as usize;
        if v + local.len() == k {
            self.claim(target, &local).await?;
            self.delayed.retain(|&(t, _)| t != target);
            return Ok(FanIn::Ready { local: local.len() });
        }
        if may_delay {
            self.delayed.push((target, input));
            return Ok(FanIn::Delayed);
        }
        self.store_then_count(target, input).await
    }

    async fn store_then_count(&mut self, target: TaskId, input: TaskId) -> Result<FanIn, ExecError> {
        let k = self.rt.graph.indegree(target) as u64;
        self.ensure_stored(input).await?;
        let v = self.increment(target).await?;
        self.counted.insert((input, target));
        let rest = self.uncounted_local(target);
        if v + rest.len() as u64 == k {
            if !rest.is_empty() {
                self.claim(target, &rest).await?;
            }
            self.delayed.retain(|&(t, _)| t != target);
            return Ok(FanIn::Ready { local: rest.len() + 1 });
        }
        Ok(FanIn::NotReady)
    }

    fn delay_allowed(&self) -> bool {
        self.rt.cluster.delayed_io && self.rechecks < self.rt.cluster.delay_max_rechecks
    }

    async fn dispatch(&mut self, task: TaskId, out: Bytes) -> Result<(), ExecError> {
        let rt = self.rt.clone();
        let graph = &rt.graph;
        let size = out.len() as u64;
        let large = rt.cluster.clustering && size > rt.cluster.cluster_threshold_bytes;
        let mut local: Vec<TaskId> = Vec::new();
        let mut candidates: Vec<TaskId> = Vec::new();
        for &c in graph.consumers(task) {
            if graph.indegree(c) == 1 {
                candidates.push(c);
                continue;
            }
            let may_delay = large && self.delay_allowed();
            match self.fanin(c, task, may_delay).await? {
                FanIn::Ready { local: h } if large || h > 1 => local.push(c),
                FanIn::Ready { .. } => candidates.push(c),
                FanIn::NotReady | FanIn::Delayed => {}
            }
        }
        let mut to_invoke = Vec::new();
        if large {
            local.extend(candidates);
        } else {
            let becomes = candidates.iter().chain(&local).min().copied();
            for c in candidates {
                if Some(c) == becomes {
                    local.push(c);
                } else {
                    to_invoke.push(c);
                }
            }
        }
        if !to_invoke.is_empty() {
            self.invoke_targets(task, out, size, &to_invoke).await?;
        }
        local.sort_unstable();
        local.dedup();
        for &c in local.iter().rev() {
            self.stack.push(Frame::local(c));
        }
        Ok(())
    }

    async fn invoke_targets(&mut self, task: TaskId, out: Bytes, size: u64, targets: &[TaskId]) -> Result<(), ExecError> {
        let rt = self.rt.clone();
        let arg = if rt.invoker.config().passes_inline(size) {
            Arg::Inline(out)
        } else {
            self.ensure_stored(task).await?;
            Arg::Key(object_key(rt.graph.name(task)))
        };
        if rt.graph.outdegree(task) > rt.invoker.config().large_fanout_threshold {
            let t0 = rt.clock.now_ms();
            let msg_bytes = match &arg {
                Arg::Inline(b) => b.len() as u64,
                Arg::Key(k) => k.len() as u64,
            };
            rt.clock.sleep(rt.store.model().transfer_time(msg_bytes)).await;
            let exclude = rt
                .graph
                .consumers(task)
                .iter()
                .copied()
                .filter(|c| !targets.contains(c))
                .collect();
            let msg = ProxyMessage {
                fanout: task,
                output: arg,
                exclude,
                schedule_ref: self.schedule_ref.clone(),
                hold: rt.invoker.hold(),
            };
            rt.ledger.record_proxy_message();
            rt.proxy
                .send(msg)
                .map_err(|_| ExecError::Protocol("proxy is not running".into()))?;
            self.meter.t.publish += rt.clock.now_ms() - t0;
            return Ok(());
        }
        for &y in targets {
            let inv = invocation_for(&self.schedule_ref, y, task, &arg);
            let t0 = rt.clock.now_ms();
            rt.invoker.invoke_retrying(inv, &self.id).await?;
            self.meter.t.invoke += rt.clock.now_ms() - t0;
            self.meter.invocations += 1;
        }
        Ok(())
    }

    async fn delayed_round(&mut self) -> Result<(), ExecError> {
        let rt = self.rt.clone();
        if self.rechecks >= rt.cluster.delay_max_rechecks {
            return self.flush_delayed().await;
        }
        rt.clock.sleep(rt.cluster.delay_recheck_interval_ms).await;
        self.rechecks += 1;
        let targets: BTreeSet<TaskId> = self.delayed.iter().map(|&(t, _)| t).collect();
        let mut ready = Vec::new();
        for target in targets {
            let k = rt.graph.indegree(target);
            let local = self.uncounted_local(target);
            let now_ready = if local.len() == k {
                for &d in &local {
                    self.counted.insert((d, target));
                }
                true
            } else {
                let v = self.read_counter(target).await as usize;
                if v + local.len() == k {
                    self.claim(target, &local).await?;
                    true
                } else {
                    false
                }
            };
            if now_ready {
                ready.push(target);
            }
        }
        self.delayed.retain(|(t, _)| !ready.contains(t));
        for &t in ready.iter().rev() {
            self.stack.push(Frame::local(t));
        }
        Ok(())
    }

    /// Gives up waiting: stores each pending output once and counts it.
    async fn flush_delayed(&mut self) -> Result<(), ExecError> {
        let pending = std::mem::take(&mut self.delayed);
        let mut ready = Vec::new();
        for (target, input) in pending {
            if self.counted.contains(&(input, target)) {
                continue;
            }
            if let FanIn::Ready { .. } = self.store_then_count(target, input).await? {
                ready.push(target);
            }
        }
        for &t in ready.iter().rev() {
            self.stack.push(Frame::local(t));
        }
        Ok(())
    }

    /// Keeps only outputs that a task still runnable here may consume.
    fn prune_cache(&mut self) {
        let graph = &self.rt.graph;
        let mut reach: HashSet<TaskId> = HashSet::new();
        let mut todo: Vec<TaskId> = self
            .stack
            .iter()
            .map(|f| f.task)
            .chain(self.delayed.iter().map(|&(t, _)| t))
            .collect();
        while let Some(t) = todo.pop() {
            if reach.insert(t) {
                todo.extend_from_slice(graph.consumers(t));
            }
        }
        let delayed_inputs: HashSet<TaskId> = self.delayed.iter().map(|&(_, d)| d).collect();
        self.cache
            .retain(|d, _| delayed_inputs.contains(d) || graph.consumers(*d).iter().any(|c| reach.contains(c)));
    }

    #[cfg(test)]
    fn cached(&self) -> BTreeSet<TaskId> {
        self.cache.keys().copied().collect()
    }
}

pub fn invocation_for(schedule_ref: &str, target: TaskId, producer: TaskId, arg: &Arg) -> Invocation {
    let mut inv = Invocation::new(schedule_ref, target);
    match arg {
        Arg::Inline(b) => {
            inv.inline_args.insert(InputRef::Output(producer), b.clone());
        }
        Arg::Key(k) => {
            inv.arg_keys.insert(InputRef::Output(producer), k.clone());
        }
    }
    inv
}

/// Resolves a proxy message into invocations for every non-excluded target.
pub fn proxy_invocations(graph: &TaskGraph, msg: &ProxyMessage) -> Result<Vec<Invocation>, InvokeError> {
    let consumers = graph.consumers(msg.fanout);
    if consumers.is_empty() {
        return Err(InvokeError::UnknownFanout(msg.fanout));
    }
    Ok(consumers
        .iter()
        .filter(|c| !msg.exclude.contains(c))
        .map(|&y| invocation_for(&msg.schedule_ref, y, msg.fanout, &msg.output))
        .collect())
}

/// Driver-side consumer of large fan-out messages.
pub async fn proxy_loop(rt: Arc<Runtime>, mut rx: mpsc::UnboundedReceiver<ProxyMessage>) {
    while let Some(msg) = rx.recv().await {
        match proxy_invocations(&rt.graph, &msg) {
            Ok(invs) => rt.invoker.batch_invoke(invs),
            Err(e) => rt.report_error(e.into()),
        }
        drop(msg.hold);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{self, ClockKind};
    use crate::dag::TaskHints;
    use crate::fault::FaultPlan;
    use crate::invoker::InvokerConfig;
    use crate::kernel::{self, NamedKernel};
    use crate::schedule::normalize;
    use crate::store::{NetworkCostModel, StoreConfig};

    fn runtime(graph: TaskGraph, clock: Clock, cluster: ClusterConfig) -> Arc<Runtime> {
        let graph = Arc::new(graph);
        let ledger = Arc::new(Ledger::new(cluster.cluster_threshold_bytes));
        let store = ObjectStore::new(
            StoreConfig {
                model: NetworkCostModel::free(),
                ..Default::default()
            },
            clock.clone(),
            ledger.clone(),
            None,
        );
        let mds = MetadataStore::new(NetworkCostModel::free(), clock.clone(), ledger.clone(), None);
        let invoker = Invoker::new(InvokerConfig::default(), clock.clone(), ledger.clone(), None, Vec::new());
        let (tx, _rx) = mpsc::unbounded_channel();
        let faults = FaultState::new(&FaultPlan::default(), &graph);
        Arc::new(Runtime::new(
            Arc::new(normalize(graph).unwrap()),
            Arc::new(Constants::new()),
            clock,
            store,
            mds,
            invoker,
            ledger,
            cluster,
            faults,
            true,
            tx,
        ))
    }

    fn nk() -> NamedKernel {
        NamedKernel::new("noop", kernel::noop)
    }

    #[test]
    fn prune_keeps_inputs_of_pending_work() {
        // diamond a -> {b, c} -> d, run on one executor
        let mut g = TaskGraph::new();
        let a = g.add_task("a", nk(), &[], TaskHints::default()).unwrap();
        let b = g.add_task("b", nk(), &[a], TaskHints::default()).unwrap();
        let c = g.add_task("c", nk(), &[a], TaskHints::default()).unwrap();
        let d = g.add_task("d", nk(), &[b, c], TaskHints::default()).unwrap();
        clock::run(ClockKind::Virtual, move |clk| async move {
            let rt = runtime(g, clk, ClusterConfig::default());
            let mut e = Executor::new(rt, "e".into());
            e.cache.insert(a, Bytes::new());
            e.cache.insert(b, Bytes::new());
            e.stack.push(Frame::local(c));
            e.prune_cache();
            assert_eq!(e.cached(), BTreeSet::from([a, b]));
            e.stack.clear();
            e.cache.insert(c, Bytes::new());
            e.stack.push(Frame::local(d));
            e.prune_cache();
            assert_eq!(e.cached(), BTreeSet::from([b, c]));
            e.stack.clear();
            e.prune_cache();
            assert!(e.cached().is_empty());
        })
        .unwrap();
    }

    #[test]
    fn retry_bound_is_three_attempts() {
        let mut g = TaskGraph::new();
        let a = g.add_task("a", nk(), &[], TaskHints::duration(5.0)).unwrap();
        let (elapsed, err) = clock::run(ClockKind::Virtual, move |clk| async move {
            let plan = FaultPlan::default().fail("a", crate::fault::KernelFault::Always);
            let faults = FaultState::new(&plan, &g);
            let mut m = Meter::default();
            let err = m.execute_with_retry(&clk, &g, &faults, a, &[]).await.unwrap_err();
            assert_eq!(faults.attempts(a), 3);
            assert_eq!(m.retries, 2);
            (clk.now_ms(), err)
        })
        .unwrap();
        assert_eq!(elapsed, 15.0);
        assert!(matches!(err, ExecError::TaskFailed { attempts: 3, .. }));
    }

    #[test]
    fn proxy_rejects_non_fanouts() {
        let mut g = TaskGraph::new();
        let a = g.add_task("a", nk(), &[], TaskHints::default()).unwrap();
        clock::run(ClockKind::Virtual, move |clk| async move {
            let rt = runtime(g, clk, ClusterConfig::default());
            let msg = ProxyMessage {
                fanout: a,
                output: Arg::Inline(Bytes::new()),
                exclude: BTreeSet::new(),
                schedule_ref: "schedule/a".into(),
                hold: rt.invoker.hold(),
            };
            assert_eq!(
                proxy_invocations(&rt.graph, &msg).unwrap_err(),
                InvokeError::UnknownFanout(a)
            );
        })
        .unwrap();
    }
}
