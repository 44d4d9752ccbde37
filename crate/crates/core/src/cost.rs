//! Billing model and scaling tables.

use serde::{Deserialize, Serialize};

use crate::metrics::ExecutorReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BillingRounding {
    /// Charge every started quantum.
    #[default]
    Up,
    /// Round to the closest quantum (still at least one).
    Nearest,
}

impl std::str::FromStr for BillingRounding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "up" => Ok(Self::Up),
            "nearest" => Ok(Self::Nearest),
            other => Err(format!("unknown billing mode {other:?} (expected up|nearest)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    /// USD per billing quantum for a 1 GB function.
    pub lambda_rate_per_100ms_1gb: f64,
    pub billing_quantum_ms: f64,
    pub memory_gb: f64,
    pub rounding: BillingRounding,
    /// USD per storage-node hour.
    pub storage_node_rate_per_hour: f64,
    pub storage_nodes: usize,
    /// USD per hour for the driver VM.
    pub driver_vm_rate_per_hour: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            lambda_rate_per_100ms_1gb: 0.000001667,
            billing_quantum_ms: 100.0,
            memory_gb: 3.0,
            rounding: BillingRounding::Up,
            storage_node_rate_per_hour: 0.0,
            storage_nodes: 0,
            driver_vm_rate_per_hour: 0.0,
        }
    }
}

impl CostModel {
    /// Number of billed quanta for one function run.
    pub fn quanta(&self, duration_ms: f64) -> u64 {
        let q = duration_ms.max(0.0) / self.billing_quantum_ms;
        let n = match self.rounding {
            BillingRounding::Up => q.ceil(),
            BillingRounding::Nearest => q.round(),
        };
        (n as u64).max(1)
    }

    /// Charge for one function run of `duration_ms` at `memory_gb`.
    pub fn bill_ms(&self, duration_ms: f64, memory_gb: f64) -> f64 {
        self.quanta(duration_ms) as f64 * self.lambda_rate_per_100ms_1gb * memory_gb
    }

    pub fn bill(&self, executors: &[ExecutorReport], makespan_ms: f64) -> CostReport {
        let function_usd: f64 = executors
            .iter()
            .map(|e| self.bill_ms(e.lifetime_ms(), self.memory_gb))
            .sum();
        let billed_quanta = executors.iter().map(|e| self.quanta(e.lifetime_ms())).sum();
        let hours = makespan_ms / 3_600_000.0;
        let storage_usd = self.storage_node_rate_per_hour * self.storage_nodes as f64 * hours;
        let driver_usd = self.driver_vm_rate_per_hour * hours;
        CostReport {
            billed_quanta,
            function_usd,
            storage_usd,
            driver_usd,
            total_usd: function_usd + storage_usd + driver_usd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub billed_quanta: u64,
    pub function_usd: f64,
    pub storage_usd: f64,
    pub driver_usd: f64,
    pub total_usd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingMode {
    Strong,
    Weak,
    Serverless,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub makespan_ms: f64,
    pub ideal_ms: f64,
    pub efficiency: f64,
}

/// Pairs each `(N, makespan)` run with its ideal. `single_ms` is the
/// one-executor time: strong scaling divides it by N, the other modes keep it.
pub fn scaling_report(runs: &[(usize, f64)], mode: ScalingMode, single_ms: f64) -> Vec<ScalingRow> {
    runs.iter()
        .map(|&(n, makespan_ms)| {
            let ideal_ms = match mode {
                ScalingMode::Strong => single_ms / n.max(1) as f64,
                ScalingMode::Weak | ScalingMode::Serverless => single_ms,
            };
            let efficiency = if makespan_ms > 0.0 { ideal_ms / makespan_ms } else { 1.0 };
            ScalingRow {
                n,
                makespan_ms,
                ideal_ms,
                efficiency,
            }
        })
        .collect()
}
