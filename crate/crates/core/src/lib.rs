//! A decentralized scheduler for serverless DAG jobs.
//!
//! Each executor runs tasks along a static schedule derived from one leaf,
//! and resolves fan-outs and fan-ins on its own through a metadata store of
//! dependency counters. Intermediate objects live in a sharded object store.
//! Every timed operation goes through [`clock::Clock`], which is either the
//! host clock or a deterministic virtual clock.
//!
//! ```
//! use dagless::config::EngineConfig;
//! use dagless::workloads::WorkloadSpec;
//!
//! let workload = "tr:n=8".parse::<WorkloadSpec>().unwrap().build().unwrap();
//! let outcome = dagless::job::run(&workload, &EngineConfig::default()).unwrap();
//! dagless::job::verify_outputs(&workload, &outcome.finals).unwrap();
//! ```

pub mod baseline;
pub mod clock;
pub mod config;
pub mod cost;
pub mod dag;
pub mod executor;
pub mod fault;
pub mod invoker;
pub mod job;
pub mod kernel;
pub mod meta;
pub mod metrics;
pub mod report;
pub mod schedule;
pub mod store;
pub mod trace;
pub mod workloads;
