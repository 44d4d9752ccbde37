//! Timing substrate shared by every timed operation.
//!
//! `Clock::Wall` runs on a multi-threaded tokio runtime against the host
//! clock. `Clock::Virtual` runs on the deterministic discrete-event executor
//! in [`sim`]; only modeled latencies and declared task durations consume
//! virtual time.

mod sim;

use std::future::Future;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use sim::{SimHandle, SimSleep, Stalled};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockKind {
    Wall,
    Virtual,
}

impl std::str::FromStr for ClockKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wall" => Ok(Self::Wall),
            "virtual" => Ok(Self::Virtual),
            other => Err(format!("unknown clock mode {other:?} (expected wall|virtual)")),
        }
    }
}

impl std::fmt::Display for ClockKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Wall => "wall",
            Self::Virtual => "virtual",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClockError {
    #[error("deadlock at t={at_ms}ms; blocked actors: {blocked:?}")]
    Deadlock { at_ms: f64, blocked: Vec<String> },
    #[error("runtime error: {0}")]
    Runtime(String),
}

#[derive(Clone)]
pub struct WallClock {
    start: Instant,
    handle: tokio::runtime::Handle,
}

#[derive(Clone)]
pub enum Clock {
    Wall(WallClock),
    Virtual(SimHandle),
}

pub fn ms_to_ns(ms: f64) -> u64 {
    if ms.is_finite() && ms > 0.0 {
        (ms * 1e6).round() as u64
    } else {
        0
    }
}

pub fn ns_to_ms(ns: u64) -> f64 {
    ns as f64 / 1e6
}

impl Clock {
    pub fn kind(&self) -> ClockKind {
        match self {
            Clock::Wall(_) => ClockKind::Wall,
            Clock::Virtual(_) => ClockKind::Virtual,
        }
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self, Clock::Virtual(_))
    }

    pub fn sim(&self) -> Option<&SimHandle> {
        match self {
            Clock::Virtual(s) => Some(s),
            Clock::Wall(_) => None,
        }
    }

    pub fn now_ms(&self) -> f64 {
        match self {
            Clock::Wall(w) => w.start.elapsed().as_secs_f64() * 1e3,
            Clock::Virtual(s) => ns_to_ms(s.now_ns()),
        }
    }

    pub async fn sleep(&self, ms: f64) {
        match self {
            Clock::Wall(_) => {
                if ms > 0.0 && ms.is_finite() {
                    tokio::time::sleep(Duration::from_secs_f64(ms / 1e3)).await;
                }
            }
            Clock::Virtual(s) => {
                let ns = ms_to_ns(ms);
                if ns > 0 {
                    s.sleep_ns(ns).await;
                }
            }
        }
    }

    pub fn spawn<F>(&self, label: impl Into<String>, fut: F)
    where
        F: Future<Output = ()> + Send + 'static,
    {
        match self {
            Clock::Wall(w) => {
                w.handle.spawn(fut);
            }
            Clock::Virtual(s) => s.spawn(label, fut),
        }
    }
}

/// Runs an async job on the chosen substrate and returns its output.
pub fn run<T, F, Fut>(kind: ClockKind, job: F) -> Result<T, ClockError>
where
    F: FnOnce(Clock) -> Fut,
    Fut: Future<Output = T> + Send + 'static,
    T: Send + 'static,
{
    match kind {
        ClockKind::Wall => {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| ClockError::Runtime(e.to_string()))?;
            let clock = Clock::Wall(WallClock {
                start: Instant::now(),
                handle: rt.handle().clone(),
            });
            let fut = job(clock);
            let out = rt.block_on(fut);
            rt.shutdown_background();
            Ok(out)
        }
        ClockKind::Virtual => {
            let sim = SimHandle::new();
            let fut = job(Clock::Virtual(sim.clone()));
            sim.block_on(fut).map_err(|s| ClockError::Deadlock {
                at_ms: ns_to_ms(s.at_ns),
                blocked: s.blocked,
            })
        }
    }
}
