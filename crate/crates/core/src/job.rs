//! Job driver: builds the services for one run, starts the leaf executors and
//! collects final results.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use bytes::Bytes;
use tokio::sync::mpsc;

use crate::baseline;
use crate::clock::{self, Clock, ClockError};
use crate::config::{ConfigError, EngineConfig, SchedulerKind};
use crate::dag::{constant_key, sequential_oracle, Constants, DagError, TaskGraph, TaskId};
use crate::executor::{proxy_loop, ExecError, ExecutorLauncher, Runtime};
use crate::fault::FaultState;
use crate::invoker::{InputRef, Invocation, Invoker, InvokerConfig};
use crate::meta::MetadataStore;
use crate::metrics::{ExecutorReport, Ledger, LedgerTotals};
use crate::schedule::{generate_schedules, normalize, ScheduleError};
use crate::store::{ObjectStore, StoreError};
use crate::trace::{Trace, TraceRecord};
use crate::workloads::{Workload, WorkloadError};

/// Caller name used for operations the driver performs itself.
pub const DRIVER: &str = "driver";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum JobError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("task {task} failed after {attempts} attempts: {message}")]
    TaskFailed { task: String, attempts: u32, message: String },
    #[error("timed out waiting for {missing:?}")]
    Timeout { missing: Vec<String> },
    #[error("deadlock at t={at_ms}ms; blocked: {blocked:?}")]
    Deadlock { at_ms: f64, blocked: Vec<String> },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl From<ExecError> for JobError {
    fn from(e: ExecError) -> Self {
        match e {
            ExecError::TaskFailed { task, attempts, message } => JobError::TaskFailed { task, attempts, message },
            ExecError::Protocol(m) => JobError::Protocol(m),
            ExecError::Store(StoreError::Timeout { missing }) => JobError::Timeout { missing },
            other => JobError::Runtime(other.to_string()),
        }
    }
}

impl From<ClockError> for JobError {
    fn from(e: ClockError) -> Self {
        match e {
            ClockError::Deadlock { at_ms, blocked } => JobError::Deadlock { at_ms, blocked },
            ClockError::Runtime(m) => JobError::Runtime(m),
        }
    }
}

/// Everything observable about a completed run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub finals: BTreeMap<TaskId, Bytes>,
    /// Time at which the last final result reached the driver.
    pub makespan_ms: f64,
    /// Time at which every function had returned.
    pub quiescent_ms: f64,
    pub totals: LedgerTotals,
    pub executors: Vec<ExecutorReport>,
    /// Task completions in completion order.
    pub exec_log: Vec<TaskId>,
    pub store_keys: BTreeSet<String>,
    pub shard_bytes: Vec<u64>,
    /// `(value, target)` of every dependency counter that was touched.
    pub counters: BTreeMap<TaskId, (u64, u64)>,
    pub trace: Option<Vec<TraceRecord>>,
}

impl RunOutcome {
    /// How many times each task ran to completion.
    pub fn execution_counts(&self, graph: &TaskGraph) -> Vec<usize> {
        let mut counts = vec![0; graph.len()];
        for t in &self.exec_log {
            counts[t.index()] += 1;
        }
        counts
    }
}

/// Store, metadata store and ledger for one run.
pub(crate) struct Services {
    pub ledger: Arc<Ledger>,
    pub store: ObjectStore,
    pub mds: MetadataStore,
    pub trace: Option<Arc<Trace>>,
}

impl Services {
    pub fn new(cfg: &EngineConfig, clock: &Clock, graph: &TaskGraph) -> Self {
        let ledger = Arc::new(Ledger::new(cfg.cluster.cluster_threshold_bytes));
        let trace = cfg.trace.then(|| Arc::new(Trace::new()));
        let store = ObjectStore::new(cfg.store.clone(), clock.clone(), ledger.clone(), trace.clone());
        let mds = MetadataStore::new(cfg.store.model, clock.clone(), ledger.clone(), trace.clone());
        for name in &cfg.faults.lost_increments {
            if let Some(id) = graph.id_of(name) {
                mds.lose_first_increment(id);
            }
        }
        mds.set_sinks(graph.sinks().into_iter().map(|t| (t, graph.name(t).to_string())).collect());
        Self { ledger, store, mds, trace }
    }

    pub fn invoker(&self, cfg: &InvokerConfig, clock: &Clock, graph: &TaskGraph) -> Invoker {
        let names = graph.nodes().iter().map(|n| n.name.clone()).collect();
        Invoker::new(cfg.clone(), clock.clone(), self.ledger.clone(), self.trace.clone(), names)
    }

    pub fn outcome(
        &self,
        finals: BTreeMap<TaskId, Bytes>,
        makespan_ms: f64,
        quiescent_ms: f64,
        exec_log: Vec<TaskId>,
    ) -> RunOutcome {
        RunOutcome {
            finals,
            makespan_ms,
            quiescent_ms,
            totals: self.ledger.totals(),
            executors: self.ledger.executors(),
            exec_log,
            store_keys: self.store.keys(),
            shard_bytes: self.store.shard_bytes(),
            counters: self.mds.counters(),
            trace: self.trace.as_ref().map(|t| t.records()),
        }
    }
}

/// Builds the invocation that starts `leaf`. Small constants travel inline;
/// larger ones are stored by the driver first and passed by key.
pub(crate) async fn leaf_invocation(
    schedule_ref: String,
    leaf: TaskId,
    graph: &TaskGraph,
    constants: &Constants,
    store: &ObjectStore,
    invoker: &InvokerConfig,
) -> Result<Invocation, StoreError> {
    let mut inv = Invocation::new(schedule_ref, leaf);
    for (i, c) in constants.get(&leaf).into_iter().flatten().enumerate() {
        if invoker.passes_inline(c.len() as u64) {
            inv.inline_args.insert(InputRef::Const(i), c.clone());
        } else {
            let key = constant_key(graph.name(leaf), i);
            store.put(&key, c.clone(), DRIVER).await?;
            inv.arg_keys.insert(InputRef::Const(i), key);
        }
    }
    Ok(inv)
}

/// Fan-in tasks that every input reached but that never ran. With none of
/// those, the sinks that never published.
pub(crate) fn blocked_tasks(graph: &TaskGraph, exec_log: &[TaskId], finals: &BTreeMap<TaskId, Bytes>) -> Vec<String> {
    let ran: BTreeSet<TaskId> = exec_log.iter().copied().collect();
    let stuck: Vec<String> = graph
        .ids()
        .filter(|&t| graph.indegree(t) >= 2 && !ran.contains(&t))
        .filter(|&t| graph.deps(t).iter().all(|d| ran.contains(d)))
        .map(|t| graph.name(t).to_string())
        .collect();
    if !stuck.is_empty() {
        return stuck;
    }
    graph
        .sinks()
        .into_iter()
        .filter(|t| !finals.contains_key(t))
        .map(|t| graph.name(t).to_string())
        .collect()
}

/// Runs `workload` under `cfg` to completion.
pub fn run(workload: &Workload, cfg: &EngineConfig) -> Result<RunOutcome, JobError> {
    cfg.validate()?;
    let unknown = cfg.faults.unknown_tasks(&workload.graph);
    if !unknown.is_empty() {
        return Err(ConfigError::new("faults", format!("unknown tasks {unknown:?}")).into());
    }
    match cfg.scheduler {
        SchedulerKind::Decentralized => run_decentralized(workload, cfg),
        SchedulerKind::CentralizedSerial | SchedulerKind::CentralizedPooled => baseline::run_centralized(workload, cfg),
    }
}

fn run_decentralized(workload: &Workload, cfg: &EngineConfig) -> Result<RunOutcome, JobError> {
    let graph = workload.graph.clone();
    let norm = Arc::new(normalize(graph.clone())?);
    let schedules = generate_schedules(&norm)?;
    let constants = Arc::new(workload.constants.clone());
    let cfg = cfg.clone();
    clock::run(cfg.mode, move |clock| async move {
        let svc = Services::new(&cfg, &clock, &graph);
        svc.mds.put_schedules(&schedules).await;
        let invoker = svc.invoker(&cfg.invoker, &clock, &graph);
        let (proxy_tx, proxy_rx) = mpsc::unbounded_channel();
        let rt = Arc::new(Runtime::new(
            norm,
            constants.clone(),
            clock.clone(),
            svc.store.clone(),
            svc.mds.clone(),
            invoker.clone(),
            svc.ledger.clone(),
            cfg.cluster.clone(),
            FaultState::new(&cfg.faults, &graph),
            cfg.abort_on_failure,
            proxy_tx,
        ));
        invoker.start(Arc::new(ExecutorLauncher::new(&rt)));
        clock.spawn("proxy", proxy_loop(rt.clone(), proxy_rx));

        let mut invs = Vec::with_capacity(schedules.len());
        for s in &schedules {
            let inv = leaf_invocation(s.key(), s.leaf, &graph, &constants, &svc.store, &cfg.invoker)
                .await
                .map_err(|e| JobError::Runtime(e.to_string()))?;
            invs.push(inv);
        }
        let deadline = cfg.timeout_ms.map(|t| clock.now_ms() + t);
        // Keep the job from looking quiescent before the batch is queued.
        let hold = invoker.hold();
        invoker.batch_invoke(invs);
        drop(hold);

        let finished = tokio::select! {
            biased;
            r = svc.mds.await_final(deadline) => Some(r),
            _ = invoker.quiescent() => None,
        };
        let makespan_ms = clock.now_ms();
        let finals = match finished {
            Some(Ok(finals)) => finals,
            Some(Err(StoreError::Timeout { missing })) => return Err(JobError::Timeout { missing }),
            Some(Err(e)) => {
                invoker.quiescent().await;
                return Err(first_error(&rt).unwrap_or_else(|| JobError::Runtime(e.to_string())));
            }
            None => {
                if let Some(e) = first_error(&rt) {
                    return Err(e);
                }
                let finals = svc.mds.finals();
                if finals.len() < graph.sinks().len() {
                    return Err(JobError::Deadlock {
                        at_ms: makespan_ms,
                        blocked: blocked_tasks(&graph, &rt.exec_log(), &finals),
                    });
                }
                finals
            }
        };
        invoker.quiescent().await;
        if let Some(e) = first_error(&rt) {
            return Err(e);
        }
        Ok(svc.outcome(finals, makespan_ms, clock.now_ms(), rt.exec_log()))
    })?
}

fn first_error(rt: &Runtime) -> Option<JobError> {
    rt.errors().into_iter().next().map(JobError::from)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VerifyError {
    #[error("oracle failed: {0}")]
    Oracle(#[from] DagError),
    #[error("missing final output of {0}")]
    Missing(String),
    #[error("unexpected final output from {0}")]
    Unexpected(String),
    #[error("output of {task} differs from the sequential result ({got} vs {want} bytes)")]
    Mismatch { task: String, got: usize, want: usize },
}

/// Compares final outputs byte for byte with a single-worker execution.
pub fn verify_outputs(workload: &Workload, finals: &BTreeMap<TaskId, Bytes>) -> Result<(), VerifyError> {
    let graph = &workload.graph;
    let oracle = sequential_oracle(graph, &workload.constants)?;
    let sinks = graph.sinks();
    for &t in finals.keys() {
        if !sinks.contains(&t) {
            return Err(VerifyError::Unexpected(graph.name(t).to_string()));
        }
    }
    for t in sinks {
        let got = finals
            .get(&t)
            .ok_or_else(|| VerifyError::Missing(graph.name(t).to_string()))?;
        let want = &oracle[&t].bytes;
        if got != want {
            return Err(VerifyError::Mismatch {
                task: graph.name(t).to_string(),
                got: got.len(),
                want: want.len(),
            });
        }
    }
    Ok(())
}
