//! Deterministic fault injection for kernels and dependency counters.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::dag::{TaskGraph, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFault {
    /// The first `n` attempts fail.
    FailFirst(u32),
    Always,
}

impl std::str::FromStr for KernelFault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "always" => Ok(Self::Always),
            other => other
                .strip_prefix("first")
                .and_then(|n| n.parse().ok())
                .map(Self::FailFirst)
                .ok_or_else(|| format!("bad fault {other:?} (expected always|firstN)")),
        }
    }
}

/// Faults keyed by task name so plans can live in config files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultPlan {
    pub kernels: BTreeMap<String, KernelFault>,
    /// Fan-in tasks whose first counter increment is silently lost.
    pub lost_increments: BTreeSet<String>,
}

impl FaultPlan {
    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty() && self.lost_increments.is_empty()
    }

    pub fn fail(mut self, task: impl Into<String>, fault: KernelFault) -> Self {
        self.kernels.insert(task.into(), fault);
        self
    }

    pub fn lose_increment(mut self, task: impl Into<String>) -> Self {
        self.lost_increments.insert(task.into());
        self
    }

    /// Names in the plan that the graph does not contain.
    pub fn unknown_tasks(&self, graph: &TaskGraph) -> Vec<String> {
        self.kernels
            .keys()
            .chain(&self.lost_increments)
            .filter(|n| graph.id_of(n).is_none())
            .cloned()
            .collect()
    }
}

/// Per-run attempt bookkeeping for a [`FaultPlan`].
#[derive(Debug, Default)]
pub struct FaultState {
    faults: HashMap<TaskId, KernelFault>,
    attempts: Mutex<HashMap<TaskId, u32>>,
}

impl FaultState {
    pub fn new(plan: &FaultPlan, graph: &TaskGraph) -> Self {
        let faults = plan
            .kernels
            .iter()
            .filter_map(|(name, f)| graph.id_of(name).map(|id| (id, *f)))
            .collect();
        Self {
            faults,
            attempts: Mutex::default(),
        }
    }

    /// Registers one attempt of `task`; returns true when it must fail.
    pub fn attempt_fails(&self, task: TaskId) -> bool {
        let mut attempts = self.attempts.lock().unwrap();
        let n = attempts.entry(task).or_insert(0);
        *n += 1;
        match self.faults.get(&task) {
            Some(KernelFault::Always) => true,
            Some(KernelFault::FailFirst(k)) => *n <= *k,
            None => false,
        }
    }

    pub fn attempts(&self, task: TaskId) -> u32 {
        self.attempts.lock().unwrap().get(&task).copied().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::TaskHints;
    use crate::kernel::{self, NamedKernel};

    #[test]
    fn fail_first_counts_attempts() {
        let mut g = TaskGraph::new();
        g.add_task("a", NamedKernel::new("noop", kernel::noop), &[], TaskHints::default())
            .unwrap();
        let plan = FaultPlan::default().fail("a", KernelFault::FailFirst(2));
        let st = FaultState::new(&plan, &g);
        let a = g.id_of("a").unwrap();
        assert!(st.attempt_fails(a));
        assert!(st.attempt_fails(a));
        assert!(!st.attempt_fails(a));
        assert_eq!(st.attempts(a), 3);
    }

    #[test]
    fn parses_fault_names() {
        assert_eq!("always".parse::<KernelFault>().unwrap(), KernelFault::Always);
        assert_eq!("first2".parse::<KernelFault>().unwrap(), KernelFault::FailFirst(2));
        assert!("sometimes".parse::<KernelFault>().is_err());
    }

    #[test]
    fn reports_unknown_names() {
        let g = TaskGraph::new();
        let plan = FaultPlan::default().lose_increment("ghost");
        assert_eq!(plan.unknown_tasks(&g), vec!["ghost".to_string()]);
    }
}
