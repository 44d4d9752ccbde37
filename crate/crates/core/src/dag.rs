//! Task graphs: construction, validation, JSON import/export, and the
//! single-worker sequential oracle every distributed run is checked against.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::kernel::{KernelRegistry, NamedKernel};

/// Identifier of a task. The wrapped value is the insertion index, which
/// defines the total order used for every deterministic tie-break.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u32);

impl TaskId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Debug for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Optional per-task hints.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TaskHints {
    /// Virtual duration of the task body; slept in both clock modes.
    pub duration_ms: Option<f64>,
    pub size_hint: Option<u64>,
}

impl TaskHints {
    pub fn duration(ms: f64) -> Self {
        Self {
            duration_ms: Some(ms),
            size_hint: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskNode {
    pub id: TaskId,
    pub name: String,
    pub kernel: NamedKernel,
    pub deps: Vec<TaskId>,
    pub hints: TaskHints,
}

/// Output of one task, addressed by a key derived from the task name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskOutput {
    pub key: String,
    pub bytes: Bytes,
}

impl TaskOutput {
    pub fn new(key: impl Into<String>, bytes: Bytes) -> Self {
        Self {
            key: key.into(),
            bytes,
        }
    }

    pub fn size(&self) -> u64 {
        self.bytes.len() as u64
    }
}

/// Constants bound to leaf tasks, passed ahead of dependency outputs.
pub type Constants = BTreeMap<TaskId, Vec<Bytes>>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DagError {
    #[error("task {0:?} already exists")]
    DuplicateTask(String),
    #[error("task {task:?} depends on unknown task {dep:?}")]
    UnknownDependency { task: String, dep: String },
    #[error("unknown kernel {0:?}")]
    UnknownKernel(String),
    #[error("graph is invalid: {0:?}")]
    Invalid(Vec<Violation>),
    #[error("kernel for task {task:?} failed: {message}")]
    KernelFailure { task: String, message: String },
    #[error("constants bound to non-leaf task {0:?}")]
    ConstantsOnInterior(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    DuplicateId { task: String },
    UnknownDependency { task: String, dep: String },
    Cycle { tasks: Vec<String> },
    NoLeaf,
}

/// Core validation over a name-level adjacency list. Shared by JSON documents
/// and built graphs.
fn validate_adjacency(nodes: &[(String, Vec<String>)]) -> Vec<Violation> {
    let mut violations = Vec::new();
    if nodes.is_empty() {
        violations.push(Violation::NoLeaf);
        return violations;
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, (name, _)) in nodes.iter().enumerate() {
        if index.insert(name.as_str(), i).is_some() {
            violations.push(Violation::DuplicateId { task: name.clone() });
        }
    }
    let mut indegree = vec![0usize; nodes.len()];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, (name, deps)) in nodes.iter().enumerate() {
        for dep in deps {
            match index.get(dep.as_str()) {
                Some(&d) => {
                    indegree[i] += 1;
                    consumers[d].push(i);
                }
                None => violations.push(Violation::UnknownDependency {
                    task: name.clone(),
                    dep: dep.clone(),
                }),
            }
        }
    }
    if !indegree.iter().any(|&d| d == 0) {
        violations.push(Violation::NoLeaf);
    }
    // Kahn: anything left unprocessed sits on or behind a cycle.
    let mut remaining = indegree.clone();
    let mut queue: VecDeque<usize> = (0..nodes.len()).filter(|&i| remaining[i] == 0).collect();
    let mut seen = 0;
    while let Some(i) = queue.pop_front() {
        seen += 1;
        for &c in &consumers[i] {
            remaining[c] -= 1;
            if remaining[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    if seen < nodes.len() {
        let tasks = (0..nodes.len())
            .filter(|&i| remaining[i] > 0)
            .map(|i| nodes[i].0.clone())
            .collect();
        violations.push(Violation::Cycle { tasks });
    }
    violations
}

#[derive(Debug, Clone, Default)]
pub struct TaskGraph {
    nodes: Vec<TaskNode>,
    by_name: HashMap<String, TaskId>,
    consumers: Vec<Vec<TaskId>>,
}

impl TaskGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a task whose dependencies must already be present. Because
    /// dependencies precede dependents, graphs built this way are acyclic.
    pub fn add_task(
        &mut self,
        name: impl Into<String>,
        kernel: NamedKernel,
        deps: &[TaskId],
        hints: TaskHints,
    ) -> Result<TaskId, DagError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(DagError::DuplicateTask(name));
        }
        if let Some(missing) = deps.iter().find(|d| d.index() >= self.nodes.len()) {
            return Err(DagError::UnknownDependency {
                task: name,
                dep: missing.to_string(),
            });
        }
        let id = TaskId(self.nodes.len() as u32);
        for &d in deps {
            self.consumers[d.index()].push(id);
        }
        self.consumers.push(Vec::new());
        self.by_name.insert(name.clone(), id);
        self.nodes.push(TaskNode {
            id,
            name,
            kernel,
            deps: deps.to_vec(),
            hints,
        });
        Ok(id)
    }

    /// Like [`add_task`](Self::add_task) but resolves dependencies by name.
    pub fn add_task_named(
        &mut self,
        name: impl Into<String>,
        kernel: NamedKernel,
        deps: &[&str],
        hints: TaskHints,
    ) -> Result<TaskId, DagError> {
        let name = name.into();
        let mut ids = Vec::with_capacity(deps.len());
        for dep in deps {
            match self.by_name.get(*dep) {
                Some(&id) => ids.push(id),
                None => {
                    return Err(DagError::UnknownDependency {
                        task: name,
                        dep: dep.to_string(),
                    })
                }
            }
        }
        self.add_task(name, kernel, &ids, hints)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: TaskId) -> &TaskNode {
        &self.nodes[id.index()]
    }

    pub fn nodes(&self) -> &[TaskNode] {
        &self.nodes
    }

    pub fn ids(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    pub fn id_of(&self, name: &str) -> Option<TaskId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: TaskId) -> &str {
        &self.nodes[id.index()].name
    }

    pub fn deps(&self, id: TaskId) -> &[TaskId] {
        &self.nodes[id.index()].deps
    }

    /// Consumers of `id`, in TaskId order.
    pub fn consumers(&self, id: TaskId) -> &[TaskId] {
        &self.consumers[id.index()]
    }

    pub fn indegree(&self, id: TaskId) -> usize {
        self.nodes[id.index()].deps.len()
    }

    pub fn outdegree(&self, id: TaskId) -> usize {
        self.consumers[id.index()].len()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.deps.len()).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = (TaskId, TaskId)> + '_ {
        self.nodes
            .iter()
            .flat_map(|n| n.deps.iter().map(move |&d| (d, n.id)))
    }

    /// Tasks with indegree zero, in TaskId order.
    pub fn leaves(&self) -> Vec<TaskId> {
        self.ids().filter(|&id| self.indegree(id) == 0).collect()
    }

    /// Tasks with outdegree zero, in TaskId order.
    pub fn sinks(&self) -> Vec<TaskId> {
        self.ids().filter(|&id| self.outdegree(id) == 0).collect()
    }

    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let adj: Vec<(String, Vec<String>)> = self
            .nodes
            .iter()
            .map(|n| {
                (
                    n.name.clone(),
                    n.deps.iter().map(|&d| self.name(d).to_string()).collect(),
                )
            })
            .collect();
        let v = validate_adjacency(&adj);
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    /// A topological order; for builder-made graphs this is insertion order.
    pub fn topo_order(&self) -> Vec<TaskId> {
        let mut remaining: Vec<usize> = self.nodes.iter().map(|n| n.deps.len()).collect();
        let mut queue: VecDeque<TaskId> = self.leaves().into();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(id) = queue.pop_front() {
            order.push(id);
            for &c in self.consumers(id) {
                remaining[c.index()] -= 1;
                if remaining[c.index()] == 0 {
                    queue.push_back(c);
                }
            }
        }
        order
    }

    pub fn to_doc(&self) -> GraphDoc {
        GraphDoc {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDoc {
                    id: n.name.clone(),
                    deps: n.deps.iter().map(|&d| self.name(d).to_string()).collect(),
                    kernel: n.kernel.name.clone(),
                    duration_ms: n.hints.duration_ms,
                    size_hint: n.hints.size_hint,
                })
                .collect(),
            meta: BTreeMap::new(),
        }
    }

    pub fn from_doc(doc: &GraphDoc, registry: &KernelRegistry) -> Result<Self, DagError> {
        let violations = doc.validate();
        if !violations.is_empty() {
            return Err(DagError::Invalid(violations));
        }
        let position: HashMap<&str, usize> = doc
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        // Insert in a topological order that keeps document order where possible.
        let mut remaining: Vec<usize> = doc.nodes.iter().map(|n| n.deps.len()).collect();
        let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); doc.nodes.len()];
        for (i, n) in doc.nodes.iter().enumerate() {
            for d in &n.deps {
                consumers[position[d.as_str()]].push(i);
            }
        }
        let mut ready: BTreeSet<usize> = (0..doc.nodes.len()).filter(|&i| remaining[i] == 0).collect();
        let mut graph = TaskGraph::new();
        while let Some(i) = ready.pop_first() {
            let n = &doc.nodes[i];
            let kernel = registry
                .get(&n.kernel)
                .cloned()
                .ok_or_else(|| DagError::UnknownKernel(n.kernel.clone()))?;
            let deps: Vec<&str> = n.deps.iter().map(String::as_str).collect();
            graph.add_task_named(
                n.id.clone(),
                kernel,
                &deps,
                TaskHints {
                    duration_ms: n.duration_ms,
                    size_hint: n.size_hint,
                },
            )?;
            for &c in &consumers[i] {
                remaining[c] -= 1;
                if remaining[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        Ok(graph)
    }
}

/// JSON form of a graph. Kernels are referenced by registered name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub nodes: Vec<NodeDoc>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: String,
    #[serde(default)]
    pub deps: Vec<String>,
    #[serde(default = "default_kernel")]
    pub kernel: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_hint: Option<u64>,
}

fn default_kernel() -> String {
    "noop".to_string()
}

impl GraphDoc {
    pub fn validate(&self) -> Vec<Violation> {
        let adj: Vec<(String, Vec<String>)> = self
            .nodes
            .iter()
            .map(|n| (n.id.clone(), n.deps.clone()))
            .collect();
        validate_adjacency(&adj)
    }
}

/// Key under which a task's output is stored.
pub fn object_key(name: &str) -> String {
    format!("obj/{name}")
}

/// Key under which the `index`-th constant of a task is stored when it is too
/// large to travel inline.
pub fn constant_key(name: &str, index: usize) -> String {
    format!("const/{name}/{index}")
}

/// Executes every kernel once, in topological order, on a single worker.
pub fn sequential_oracle(
    graph: &TaskGraph,
    constants: &Constants,
) -> Result<BTreeMap<TaskId, TaskOutput>, DagError> {
    if let Err(v) = graph.validate() {
        return Err(DagError::Invalid(v));
    }
    for &id in constants.keys() {
        if graph.indegree(id) != 0 {
            return Err(DagError::ConstantsOnInterior(graph.name(id).to_string()));
        }
    }
    let mut outputs: BTreeMap<TaskId, TaskOutput> = BTreeMap::new();
    for id in graph.topo_order() {
        let node = graph.node(id);
        let mut inputs: Vec<Bytes> = constants.get(&id).cloned().unwrap_or_default();
        inputs.extend(node.deps.iter().map(|d| outputs[d].bytes.clone()));
        let bytes = node
            .kernel
            .kernel
            .call(&inputs)
            .map_err(|e| DagError::KernelFailure {
                task: node.name.clone(),
                message: e.0,
            })?;
        outputs.insert(id, TaskOutput::new(object_key(&node.name), bytes));
    }
    Ok(outputs)
}

pub type SharedGraph = Arc<TaskGraph>;
