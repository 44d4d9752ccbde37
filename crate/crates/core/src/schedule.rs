//! Static schedules: one per leaf, holding everything reachable from it.
//!
//! Normalization gives every task with at least one consumer a fan-out
//! operation (a trivial one when there is exactly one consumer) and every task
//! with two or more dependencies a fan-in operation. Executors therefore only
//! ever move between tasks through a fan-out, optionally followed by a fan-in.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dag::{TaskGraph, TaskId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleOp {
    Execute { task: TaskId },
    FanOut { task: TaskId, out_edges: Vec<TaskId> },
    FanIn { task: TaskId, in_degree: usize },
}

impl ScheduleOp {
    pub fn is_trivial_fanout(&self) -> bool {
        matches!(self, ScheduleOp::FanOut { out_edges, .. } if out_edges.len() == 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("graph is not valid for scheduling")]
    InvalidGraph,
    #[error("task {0} is not part of this schedule")]
    NotInSchedule(TaskId),
    #[error("task {0} is terminal in this schedule")]
    EndOfSchedule(TaskId),
    #[error("tasks unreachable from every leaf: {0:?}")]
    Unreachable(Vec<TaskId>),
}

/// The task graph viewed through schedule operations.
#[derive(Debug, Clone)]
pub struct NormalizedGraph {
    graph: Arc<TaskGraph>,
}

pub fn normalize(graph: Arc<TaskGraph>) -> Result<NormalizedGraph, ScheduleError> {
    graph.validate().map_err(|_| ScheduleError::InvalidGraph)?;
    Ok(NormalizedGraph { graph })
}

impl NormalizedGraph {
    pub fn graph(&self) -> &TaskGraph {
        &self.graph
    }

    pub fn shared_graph(&self) -> Arc<TaskGraph> {
        self.graph.clone()
    }

    /// The fan-out following `task`, or `None` for sinks.
    pub fn fanout(&self, task: TaskId) -> Option<ScheduleOp> {
        let out = self.graph.consumers(task);
        (!out.is_empty()).then(|| ScheduleOp::FanOut {
            task,
            out_edges: out.to_vec(),
        })
    }

    /// The fan-in guarding `task`, present when it has two or more inputs.
    pub fn fanin(&self, task: TaskId) -> Option<ScheduleOp> {
        let in_degree = self.graph.indegree(task);
        (in_degree >= 2).then_some(ScheduleOp::FanIn { task, in_degree })
    }

    /// Producers whose fan-out is trivial (exactly one out edge).
    pub fn trivial_fanouts(&self) -> Vec<TaskId> {
        self.graph
            .ids()
            .filter(|&t| self.graph.outdegree(t) == 1)
            .collect()
    }

    /// Depth-first preorder from `start`, visiting children in TaskId order.
    pub fn reachable_dfs(&self, start: TaskId) -> Vec<TaskId> {
        let mut seen = vec![false; self.graph.len()];
        let mut order = Vec::new();
        let mut stack = vec![start];
        while let Some(t) = stack.pop() {
            if std::mem::replace(&mut seen[t.index()], true) {
                continue;
            }
            order.push(t);
            for &c in self.graph.consumers(t).iter().rev() {
                if !seen[c.index()] {
                    stack.push(c);
                }
            }
        }
        order
    }

    /// The operations of one task in schedule order: fan-in, execute, fan-out.
    pub fn ops_for(&self, task: TaskId) -> Vec<ScheduleOp> {
        let mut ops = Vec::with_capacity(3);
        ops.extend(self.fanin(task));
        ops.push(ScheduleOp::Execute { task });
        ops.extend(self.fanout(task));
        ops
    }
}

/// The schedule rooted at one leaf. Holds the normalized graph by reference,
/// so overlapping schedules share storage.
#[derive(Debug, Clone)]
pub struct StaticSchedule {
    pub leaf: TaskId,
    graph: Arc<NormalizedGraph>,
}

impl StaticSchedule {
    pub fn new(leaf: TaskId, graph: Arc<NormalizedGraph>) -> Self {
        Self { leaf, graph }
    }

    pub fn normalized(&self) -> &Arc<NormalizedGraph> {
        &self.graph
    }

    pub fn tasks(&self) -> Vec<TaskId> {
        self.graph.reachable_dfs(self.leaf)
    }

    pub fn contains(&self, task: TaskId) -> bool {
        self.tasks().contains(&task)
    }

    pub fn ops(&self) -> Vec<ScheduleOp> {
        self.tasks()
            .into_iter()
            .flat_map(|t| self.graph.ops_for(t))
            .collect()
    }

    /// Storage key in the metadata store.
    pub fn key(&self) -> String {
        format!("schedule/{}", self.graph.graph().name(self.leaf))
    }

    pub fn to_doc(&self) -> ScheduleDoc {
        let g = self.graph.graph();
        let ops = self
            .ops()
            .into_iter()
            .map(|op| match op {
                ScheduleOp::Execute { task } => OpDoc {
                    kind: OpKind::Execute,
                    task: g.name(task).to_string(),
                    out_edges: None,
                    in_degree: None,
                },
                ScheduleOp::FanOut { task, out_edges } => OpDoc {
                    kind: OpKind::FanOut,
                    task: g.name(task).to_string(),
                    out_edges: Some(out_edges.iter().map(|&t| g.name(t).to_string()).collect()),
                    in_degree: None,
                },
                ScheduleOp::FanIn { task, in_degree } => OpDoc {
                    kind: OpKind::FanIn,
                    task: g.name(task).to_string(),
                    out_edges: None,
                    in_degree: Some(in_degree),
                },
            })
            .collect();
        ScheduleDoc {
            leaf: g.name(self.leaf).to_string(),
            ops,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Execute,
    FanOut,
    FanIn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpDoc {
    pub kind: OpKind,
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_edges: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_degree: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleDoc {
    pub leaf: String,
    pub ops: Vec<OpDoc>,
}

/// One schedule per leaf, in leaf TaskId order.
pub fn generate_schedules(graph: &Arc<NormalizedGraph>) -> Result<Vec<StaticSchedule>, ScheduleError> {
    let leaves = graph.graph().leaves();
    let mut covered = vec![false; graph.graph().len()];
    let schedules: Vec<StaticSchedule> = leaves
        .into_iter()
        .map(|leaf| StaticSchedule::new(leaf, graph.clone()))
        .collect();
    for s in &schedules {
        for t in s.tasks() {
            covered[t.index()] = true;
        }
    }
    let missing: Vec<TaskId> = graph.graph().ids().filter(|t| !covered[t.index()]).collect();
    if !missing.is_empty() {
        return Err(ScheduleError::Unreachable(missing));
    }
    Ok(schedules)
}

/// The operation that follows executing `after` on the current path.
pub fn next_op(schedule: &StaticSchedule, after: TaskId) -> Result<ScheduleOp, ScheduleError> {
    if !schedule.contains(after) {
        return Err(ScheduleError::NotInSchedule(after));
    }
    schedule
        .normalized()
        .fanout(after)
        .ok_or(ScheduleError::EndOfSchedule(after))
}

/// Union of the task sets of every schedule.
pub fn covered_tasks(schedules: &[StaticSchedule]) -> BTreeSet<TaskId> {
    schedules.iter().flat_map(|s| s.tasks()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::TaskHints;
    use crate::kernel::{self, NamedKernel};
    use crate::workloads;

    fn chain(k: usize) -> TaskGraph {
        let mut g = TaskGraph::new();
        let mut prev: Option<TaskId> = None;
        for i in 0..k {
            let deps: Vec<TaskId> = prev.into_iter().collect();
            prev = Some(
                g.add_task(format!("c{i}"), NamedKernel::new("noop", kernel::noop), &deps, TaskHints::default())
                    .unwrap(),
            );
        }
        g
    }

    fn norm(g: TaskGraph) -> Arc<NormalizedGraph> {
        Arc::new(normalize(Arc::new(g)).unwrap())
    }

    #[test]
    fn example6_trivial_fanouts_follow_t2_and_t3() {
        let n = norm(workloads::example6());
        let g = n.graph();
        let trivial: Vec<&str> = n.trivial_fanouts().iter().map(|&t| g.name(t)).collect();
        assert!(trivial.contains(&"T2"));
        assert!(trivial.contains(&"T3"));
        assert!(!trivial.contains(&"T1"));
    }

    #[test]
    fn chain_gets_two_trivial_fanouts() {
        let n = norm(chain(3));
        assert_eq!(n.trivial_fanouts().len(), 2);
    }

    #[test]
    fn wide_fanout_is_not_trivial() {
        let mut g = TaskGraph::new();
        let nk = || NamedKernel::new("noop", kernel::noop);
        let root = g.add_task("r", nk(), &[], TaskHints::default()).unwrap();
        for i in 0..3 {
            g.add_task(format!("k{i}"), nk(), &[root], TaskHints::default()).unwrap();
        }
        let n = norm(g);
        assert!(n.trivial_fanouts().is_empty());
        match n.fanout(root).unwrap() {
            ScheduleOp::FanOut { out_edges, .. } => assert_eq!(out_edges.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn example6_has_two_schedules() {
        let n = norm(workloads::example6());
        let s = generate_schedules(&n).unwrap();
        assert_eq!(s.len(), 2);
        let g = n.graph();
        assert_eq!(g.name(s[0].leaf), "T1");
        assert_eq!(g.name(s[1].leaf), "T6");
    }

    #[test]
    fn single_chain_has_one_schedule_with_every_node() {
        let n = norm(chain(4));
        let s = generate_schedules(&n).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].tasks().len(), 4);
    }

    #[test]
    fn next_after_t1_is_the_two_way_fanout() {
        let n = norm(workloads::example6());
        let s = generate_schedules(&n).unwrap();
        let g = n.graph();
        let t1 = g.id_of("T1").unwrap();
        let op = next_op(&s[0], t1).unwrap();
        assert_eq!(
            op,
            ScheduleOp::FanOut {
                task: t1,
                out_edges: vec![g.id_of("T2").unwrap(), g.id_of("T3").unwrap()]
            }
        );
    }

    #[test]
    fn next_after_root_is_end() {
        let n = norm(chain(3));
        let s = generate_schedules(&n).unwrap();
        let last = TaskId(2);
        assert_eq!(next_op(&s[0], last), Err(ScheduleError::EndOfSchedule(last)));
    }

    #[test]
    fn next_after_serial_task_is_trivial_fanout() {
        let n = norm(chain(3));
        let s = generate_schedules(&n).unwrap();
        let op = next_op(&s[0], TaskId(0)).unwrap();
        assert!(op.is_trivial_fanout());
    }

    #[test]
    fn fanin_degree_matches_graph() {
        let n = norm(workloads::example6());
        let g = n.graph();
        for t in g.ids() {
            if let Some(ScheduleOp::FanIn { in_degree, .. }) = n.fanin(t) {
                assert_eq!(in_degree, g.indegree(t));
            }
        }
    }

    #[test]
    fn schedule_doc_lists_ops() {
        let n = norm(workloads::example6());
        let s = generate_schedules(&n).unwrap();
        let doc = s[0].to_doc();
        assert_eq!(doc.leaf, "T1");
        assert_eq!(doc.ops[0].kind, OpKind::Execute);
        assert_eq!(doc.ops[1].kind, OpKind::FanOut);
        let t4_fanin = doc.ops.iter().find(|o| o.kind == OpKind::FanIn && o.task == "T4");
        assert_eq!(t4_fanin.unwrap().in_degree, Some(2));
    }
}
