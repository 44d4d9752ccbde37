//! Run configuration: TOML files plus command-line overrides.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clock::ClockKind;
use crate::cost::CostModel;
use crate::executor::ClusterConfig;
use crate::fault::FaultPlan;
use crate::invoker::InvokerConfig;
use crate::store::StoreConfig;
use crate::workloads::WorkloadSpec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config error in `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerKind {
    #[default]
    Decentralized,
    CentralizedSerial,
    CentralizedPooled,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 3] = [
        SchedulerKind::Decentralized,
        SchedulerKind::CentralizedSerial,
        SchedulerKind::CentralizedPooled,
    ];

    pub fn is_centralized(self) -> bool {
        !matches!(self, SchedulerKind::Decentralized)
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchedulerKind::Decentralized => "decentralized",
            SchedulerKind::CentralizedSerial => "centralized-serial",
            SchedulerKind::CentralizedPooled => "centralized-pooled",
        })
    }
}

impl FromStr for SchedulerKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| {
                ConfigError::new(
                    "scheduler",
                    format!("unknown scheduler {s:?} (expected decentralized|centralized-serial|centralized-pooled)"),
                )
            })
    }
}

/// Everything that shapes one execution, independent of the workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub scheduler: SchedulerKind,
    pub mode: ClockKind,
    pub seed: u64,
    /// Give up waiting for final results after this long.
    pub timeout_ms: Option<f64>,
    /// Abort the job as soon as any task exhausts its retries.
    pub abort_on_failure: bool,
    pub trace: bool,
    pub store: StoreConfig,
    pub invoker: InvokerConfig,
    pub cluster: ClusterConfig,
    pub cost: CostModel,
    pub faults: FaultPlan,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            scheduler: SchedulerKind::Decentralized,
            mode: ClockKind::Virtual,
            seed: 0,
            timeout_ms: None,
            abort_on_failure: true,
            trace: false,
            store: StoreConfig::default(),
            invoker: InvokerConfig::default(),
            cluster: ClusterConfig::default(),
            cost: CostModel::default(),
            faults: FaultPlan::default(),
        }
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must be positive, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must not be negative, got {v}")))
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        // TOML integers are signed 64-bit.
        if self.seed > i64::MAX as u64 {
            return Err(ConfigError::new("seed", format!("must be at most {}", i64::MAX)));
        }
        if self.store.shard_count == 0 {
            return Err(ConfigError::new("store.shard_count", "must be at least 1"));
        }
        non_negative("store.model.per_op_latency_ms", self.store.model.per_op_latency_ms)?;
        positive("store.model.bandwidth_bytes_per_ms", self.store.model.bandwidth_bytes_per_ms)?;
        non_negative("invoker.invoke_latency_ms", self.invoker.invoke_latency_ms)?;
        non_negative("invoker.reject_backoff_ms", self.invoker.reject_backoff_ms)?;
        if self.invoker.pool_size == 0 {
            return Err(ConfigError::new("invoker.pool_size", "must be at least 1"));
        }
        if self.invoker.large_fanout_threshold == 0 {
            return Err(ConfigError::new("invoker.large_fanout_threshold", "must be at least 1"));
        }
        if self.invoker.inline_threshold_bytes == 0 {
            return Err(ConfigError::new("invoker.inline_threshold_bytes", "must be at least 1"));
        }
        if self.invoker.concurrency_cap == 0 {
            return Err(ConfigError::new("invoker.concurrency_cap", "must be at least 1"));
        }
        if self.cluster.cluster_threshold_bytes <= self.invoker.inline_threshold_bytes {
            return Err(ConfigError::new(
                "cluster.cluster_threshold_bytes",
                format!(
                    "must exceed invoker.inline_threshold_bytes ({})",
                    self.invoker.inline_threshold_bytes
                ),
            ));
        }
        non_negative("cluster.delay_recheck_interval_ms", self.cluster.delay_recheck_interval_ms)?;
        positive("cost.billing_quantum_ms", self.cost.billing_quantum_ms)?;
        positive("cost.memory_gb", self.cost.memory_gb)?;
        if let Some(t) = self.timeout_ms {
            positive("timeout_ms", t)?;
        }
        Ok(())
    }

    /// Zero-cost store and metadata operations; only invocations and task
    /// durations take time.
    pub fn free_store(mut self) -> Self {
        self.store.model = crate::store::NetworkCostModel::free();
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    /// Directory for report.json, report.csv and trace.jsonl.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn new(workload: WorkloadSpec, engine: EngineConfig) -> Self {
        Self {
            workload,
            engine,
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::new("toml", e.to_string()))?;
        cfg.engine.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::new("toml", e.to_string()))
    }

    /// Applies one `dotted.key=value` override, e.g. `engine.store.shard_count=16`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let mut doc: toml::Value = toml::Value::try_from(&*self).map_err(|e| ConfigError::new(key, e.to_string()))?;
        let parts: Vec<&str> = key.split('.').collect();
        let (last, path) = parts.split_last().ok_or_else(|| ConfigError::new(key, "empty key"))?;
        let mut table = doc.as_table_mut().expect("config serializes to a table");
        for p in path {
            table = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()))
                .as_table_mut()
                .ok_or_else(|| ConfigError::new(key, format!("{p} is not a table")))?;
        }
        let parsed = parse_scalar(value);
        table.insert(last.to_string(), parsed);
        let updated: RunConfig = doc.try_into().map_err(|e: toml::de::Error| ConfigError::new(key, e.to_string()))?;
        updated.engine.validate()?;
        *self = updated;
        Ok(())
    }
}

fn parse_scalar(v: &str) -> toml::Value {
    if let Ok(i) = v.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = v.parse::<f64>() {
        return toml::Value::Float(f);
    }
    match v {
        "true" | "on" => toml::Value::Boolean(true),
        "false" | "off" => toml::Value::Boolean(false),
        _ => toml::Value::String(v.to_string()),
    }
}
