//! Centralized scheduler baseline with stateless workers.
//!
//! The driver tracks every dependency itself and launches one worker per
//! ready task. Workers read all inputs from the store, execute, write the
//! output back and report completion over a single channel.
//!
//! `CentralizedSerial` issues invocations one at a time from the scheduler.
//! `CentralizedPooled` starts a fixed set of warm workers once and feeds them
//! ready tasks through a shared queue, paying one metadata round trip per
//! dispatch.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex, Weak};

use bytes::Bytes;
use tokio::sync::mpsc;

use crate::clock::{self, Clock};
use crate::config::{EngineConfig, SchedulerKind};
use crate::dag::{object_key, Constants, TaskGraph, TaskId};
use crate::executor::{ExecError, Meter};
use crate::fault::FaultState;
use crate::invoker::{InputRef, Invocation, Invoker, Launch, Slot};
use crate::job::{blocked_tasks, leaf_invocation, JobError, RunOutcome, Services, DRIVER};
use crate::meta::MetadataStore;
use crate::metrics::{ExecutorReport, Ledger};
use crate::store::ObjectStore;
use crate::workloads::Workload;

const SCHEDULE_REF: &str = "central";

enum Done {
    Completed(TaskId),
    Failed(ExecError),
}

struct Central {
    graph: Arc<TaskGraph>,
    clock: Clock,
    store: ObjectStore,
    mds: MetadataStore,
    ledger: Arc<Ledger>,
    faults: FaultState,
    done: mpsc::UnboundedSender<Done>,
    queue: tokio::sync::Mutex<mpsc::UnboundedReceiver<Invocation>>,
    exec_log: Mutex<Vec<TaskId>>,
    next_worker: Mutex<u64>,
    dispatch_ms: f64,
}

impl Central {
    fn next_id(&self) -> String {
        let mut n = self.next_worker.lock().unwrap();
        *n += 1;
        format!("w{}", *n - 1)
    }

    /// The stateless four-step loop: read inputs, execute, write, report.
    async fn run_task(&self, inv: &Invocation, id: &str, meter: &mut Meter) -> Result<(), ExecError> {
        let task = inv.start_task;
        let mut inputs: Vec<Bytes> = Vec::new();
        let n_const = inv.inline_args.len() + inv.arg_keys.len();
        for i in 0..n_const {
            let r = InputRef::Const(i);
            if let Some(b) = inv.inline_args.get(&r) {
                inputs.push(b.clone());
            } else if let Some(k) = inv.arg_keys.get(&r) {
                inputs.push(meter.get(&self.clock, &self.store, k, id).await?);
            }
        }
        for &d in self.graph.deps(task) {
            let key = object_key(self.graph.name(d));
            inputs.push(meter.get(&self.clock, &self.store, &key, id).await?);
        }
        let retries_before = meter.retries;
        let out = meter
            .execute_with_retry(&self.clock, &self.graph, &self.faults, task, &inputs)
            .await?;
        self.ledger.record_task(meter.retries - retries_before);
        meter
            .put(&self.clock, &self.store, &object_key(self.graph.name(task)), out.clone(), id)
            .await?;
        if self.graph.outdegree(task) == 0 {
            let t0 = self.clock.now_ms();
            self.mds.publish_final(task, out, id).await?;
            meter.t.publish += self.clock.now_ms() - t0;
        }
        self.exec_log.lock().unwrap().push(task);
        Ok(())
    }

    fn report(&self, id: String, tasks: Vec<String>, meter: Meter, start_ms: f64) {
        self.ledger.add_executor(ExecutorReport {
            executor_id: id,
            tasks,
            t_breakdown: meter.t,
            bytes_read: meter.bytes_read,
            bytes_written: meter.bytes_written,
            invocations: meter.invocations,
            retries: meter.retries,
            start_ms,
            end_ms: self.clock.now_ms(),
        });
    }

    /// One function per task.
    async fn single(self: Arc<Self>, inv: Invocation) {
        let id = self.next_id();
        let start = self.clock.now_ms();
        let mut meter = Meter::default();
        let result = self.run_task(&inv, &id, &mut meter).await;
        let name = self.graph.name(inv.start_task).to_string();
        self.report(id, vec![name], meter, start);
        let _ = self.done.send(match result {
            Ok(()) => Done::Completed(inv.start_task),
            Err(e) => Done::Failed(e),
        });
    }

    /// A warm worker that drains the shared queue until the scheduler closes it.
    async fn warm(self: Arc<Self>) {
        let id = self.next_id();
        let start = self.clock.now_ms();
        let mut meter = Meter::default();
        let mut tasks = Vec::new();
        loop {
            let next = self.queue.lock().await.recv().await;
            let Some(inv) = next else { break };
            let t0 = self.clock.now_ms();
            self.clock.sleep(self.dispatch_ms).await;
            meter.t.publish += self.clock.now_ms() - t0;
            self.ledger.record_dispatch();
            tasks.push(self.graph.name(inv.start_task).to_string());
            let result = self.run_task(&inv, &id, &mut meter).await;
            let _ = self.done.send(match result {
                Ok(()) => Done::Completed(inv.start_task),
                Err(e) => Done::Failed(e),
            });
        }
        self.report(id, tasks, meter, start);
    }
}

struct CentralLauncher {
    central: Weak<Central>,
    pooled: bool,
}

impl Launch for CentralLauncher {
    fn launch(&self, inv: Invocation, slot: Slot) {
        let Some(c) = self.central.upgrade() else { return };
        let clock = c.clock.clone();
        let pooled = self.pooled;
        let label = if pooled { "warm-worker".to_string() } else { format!("worker-{}", inv.start_task) };
        clock.spawn(label, async move {
            let _slot = slot;
            if pooled {
                c.warm().await;
            } else {
                c.single(inv).await;
            }
        });
    }
}

/// Dependency bookkeeping owned by the scheduler.
struct CentralState {
    remaining: Vec<usize>,
    ready: VecDeque<TaskId>,
    completed: usize,
    in_flight: usize,
}

impl CentralState {
    fn new(graph: &TaskGraph) -> Self {
        let remaining: Vec<usize> = graph.ids().map(|t| graph.indegree(t)).collect();
        let ready = graph.leaves().into_iter().collect();
        Self {
            remaining,
            ready,
            completed: 0,
            in_flight: 0,
        }
    }

    fn complete(&mut self, graph: &TaskGraph, task: TaskId) {
        self.completed += 1;
        self.in_flight -= 1;
        for &c in graph.consumers(task) {
            let r = &mut self.remaining[c.index()];
            *r -= 1;
            if *r == 0 {
                self.ready.push_back(c);
            }
        }
    }
}

async fn task_invocation(
    task: TaskId,
    graph: &TaskGraph,
    constants: &Constants,
    store: &ObjectStore,
    invoker: &Invoker,
) -> Result<Invocation, ExecError> {
    if graph.indegree(task) == 0 {
        Ok(leaf_invocation(SCHEDULE_REF.into(), task, graph, constants, store, invoker.config()).await?)
    } else {
        Ok(Invocation::new(SCHEDULE_REF, task))
    }
}

pub fn run_centralized(workload: &Workload, cfg: &EngineConfig) -> Result<RunOutcome, JobError> {
    if let Err(v) = workload.graph.validate() {
        return Err(JobError::Runtime(format!("invalid graph: {v:?}")));
    }
    let graph = workload.graph.clone();
    let constants = Arc::new(workload.constants.clone());
    let cfg = cfg.clone();
    let pooled = cfg.scheduler == SchedulerKind::CentralizedPooled;
    clock::run(cfg.mode, move |clock| async move {
        let svc = Services::new(&cfg, &clock, &graph);
        let invoker = svc.invoker(&cfg.invoker, &clock, &graph);
        let (done_tx, mut done_rx) = mpsc::unbounded_channel();
        let (queue_tx, queue_rx) = mpsc::unbounded_channel();
        let central = Arc::new(Central {
            graph: graph.clone(),
            clock: clock.clone(),
            store: svc.store.clone(),
            mds: svc.mds.clone(),
            ledger: svc.ledger.clone(),
            faults: FaultState::new(&cfg.faults, &graph),
            done: done_tx,
            queue: tokio::sync::Mutex::new(queue_rx),
            exec_log: Mutex::default(),
            next_worker: Mutex::new(0),
            dispatch_ms: cfg.store.model.per_op_latency_ms,
        });
        invoker.start(Arc::new(CentralLauncher {
            central: Arc::downgrade(&central),
            pooled,
        }));
        if pooled {
            let n = cfg.invoker.pool_size.min(graph.len());
            invoker.batch_invoke((0..n).map(|_| Invocation::new(SCHEDULE_REF, TaskId(0))).collect());
        }

        let deadline = cfg.timeout_ms.map(|t| clock.now_ms() + t);
        let scheduler = schedule(&graph, &constants, &svc.store, &invoker, &mut done_rx, queue_tx, pooled, cfg.abort_on_failure);
        let outcome = match deadline {
            None => Some(scheduler.await),
            Some(d) => {
                tokio::select! {
                    biased;
                    r = scheduler => Some(r),
                    _ = clock.sleep(d - clock.now_ms()) => None,
                }
            }
        };
        let makespan_ms = clock.now_ms();
        let exec_log = central.exec_log.lock().unwrap().clone();
        let finals = svc.mds.finals();
        match outcome {
            None => {
                let missing = graph
                    .sinks()
                    .into_iter()
                    .filter(|t| !finals.contains_key(t))
                    .map(|t| graph.name(t).to_string())
                    .collect();
                return Err(JobError::Timeout { missing });
            }
            Some(Err(e)) => {
                invoker.quiescent().await;
                return Err(e.into());
            }
            Some(Ok(())) => {}
        }
        invoker.quiescent().await;
        if finals.len() < graph.sinks().len() {
            return Err(JobError::Deadlock {
                at_ms: makespan_ms,
                blocked: blocked_tasks(&graph, &exec_log, &finals),
            });
        }
        Ok(svc.outcome(finals, makespan_ms, clock.now_ms(), exec_log))
    })?
}

#[allow(clippy::too_many_arguments)]
async fn schedule(
    graph: &TaskGraph,
    constants: &Constants,
    store: &ObjectStore,
    invoker: &Invoker,
    done_rx: &mut mpsc::UnboundedReceiver<Done>,
    queue_tx: mpsc::UnboundedSender<Invocation>,
    pooled: bool,
    abort_on_failure: bool,
) -> Result<(), ExecError> {
    let mut st = CentralState::new(graph);
    let mut first_error: Option<ExecError> = None;
    let mut on_done = |st: &mut CentralState, d: Done| -> Result<(), ExecError> {
        match d {
            Done::Completed(t) => st.complete(graph, t),
            Done::Failed(e) => {
                st.in_flight -= 1;
                if abort_on_failure {
                    return Err(e);
                }
                first_error.get_or_insert(e);
            }
        }
        Ok(())
    };
    loop {
        while let Some(t) = st.ready.pop_front() {
            let inv = task_invocation(t, graph, constants, store, invoker).await?;
            st.in_flight += 1;
            if pooled {
                queue_tx
                    .send(inv)
                    .map_err(|_| ExecError::Protocol("worker pool is gone".into()))?;
            } else {
                invoker.invoke_retrying(inv, DRIVER).await?;
            }
            while let Ok(d) = done_rx.try_recv() {
                on_done(&mut st, d)?;
            }
        }
        if st.in_flight == 0 {
            break;
        }
        match done_rx.recv().await {
            Some(d) => on_done(&mut st, d)?,
            None => break,
        }
    }
    drop(queue_tx);
    match first_error {
        Some(e) => Err(e),
        None if st.completed == graph.len() => Ok(()),
        None => Err(ExecError::Protocol(format!(
            "scheduler stopped with {} of {} tasks complete",
            st.completed,
            graph.len()
        ))),
    }
}

/// Ready times of every task under the centralized dependency rule; used by
/// tests as an independent ordering reference.
pub fn ready_order(graph: &TaskGraph) -> Vec<TaskId> {
    let mut st = CentralState::new(graph);
    let mut order = Vec::new();
    while let Some(t) = st.ready.pop_front() {
        order.push(t);
        st.in_flight += 1;
        st.complete(graph, t);
    }
    order
}
