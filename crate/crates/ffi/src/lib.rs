//! C ABI for running dagless jobs from other languages.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns a
//! [`DaglessStatus`]; on failure, [`dagless_last_error`] describes the most
//! recent error on the calling thread.
//!
//! Strings returned by the library are owned by the caller and must be
//! released with [`dagless_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;
use std::time::Instant;

use dagless::config::RunConfig;
use dagless::cost::CostModel;
use dagless::job::{self, JobError};
use dagless::report::RunReport;
use dagless::workloads::WorkloadSpec;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DaglessStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ConfigError = 3,
    TaskFailed = 4,
    Timeout = 5,
    Deadlock = 6,
    Protocol = 7,
    Internal = 8,
    /// The job finished but its outputs differ from the sequential oracle.
    VerifyFailed = 9,
}

/// A run configuration.
pub struct DaglessConfig {
    inner: RunConfig,
}

/// The report of one finished run.
pub struct DaglessReport {
    inner: RunReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: DaglessStatus, msg: impl Into<String>) -> DaglessStatus {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
    status
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, DaglessStatus> {
    if p.is_null() {
        return Err(fail(DaglessStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(DaglessStatus::InvalidUtf8, e.to_string()))
}

fn to_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

fn job_status(e: &JobError) -> DaglessStatus {
    match e {
        JobError::Config(_) | JobError::Workload(_) | JobError::Schedule(_) => DaglessStatus::ConfigError,
        JobError::TaskFailed { .. } => DaglessStatus::TaskFailed,
        JobError::Timeout { .. } => DaglessStatus::Timeout,
        JobError::Deadlock { .. } => DaglessStatus::Deadlock,
        JobError::Protocol(_) => DaglessStatus::Protocol,
        JobError::Runtime(_) => DaglessStatus::Internal,
    }
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Message of the last failed call on this thread. Valid until the next
/// failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn dagless_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a config with default engine settings for `workload`, a spec such
/// as `"tr:n=1024,delay=250"`.
///
/// # Safety
/// `workload` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dagless_config_new(workload: *const c_char, out: *mut *mut DaglessConfig) -> DaglessStatus {
    if out.is_null() {
        return fail(DaglessStatus::NullPointer, "null out pointer");
    }
    // Building the graph once rejects bad sizes up front.
    let parsed = try_ffi!(read_str(workload))
        .parse::<WorkloadSpec>()
        .and_then(|s| s.build().map(|_| s));
    let spec = match parsed {
        Ok(s) => s,
        Err(e) => return fail(DaglessStatus::ConfigError, e.to_string()),
    };
    let cfg = DaglessConfig {
        inner: RunConfig::new(spec, Default::default()),
    };
    *out = Box::into_raw(Box::new(cfg));
    DaglessStatus::Ok
}

/// Parses a TOML run config.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dagless_config_from_toml(toml: *const c_char, out: *mut *mut DaglessConfig) -> DaglessStatus {
    if out.is_null() {
        return fail(DaglessStatus::NullPointer, "null out pointer");
    }
    match RunConfig::from_toml(try_ffi!(read_str(toml))) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(DaglessConfig { inner }));
            DaglessStatus::Ok
        }
        Err(e) => fail(DaglessStatus::ConfigError, e.to_string()),
    }
}

/// Sets one dotted key, e.g. `engine.store.shard_count` to `"16"`.
///
/// # Safety
/// `cfg` must come from this library; `key` and `value` must be
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn dagless_config_set(
    cfg: *mut DaglessConfig,
    key: *const c_char,
    value: *const c_char,
) -> DaglessStatus {
    let Some(cfg) = cfg.as_mut() else {
        return fail(DaglessStatus::NullPointer, "null config");
    };
    let (key, value) = (try_ffi!(read_str(key)), try_ffi!(read_str(value)));
    match cfg.inner.set(key, value) {
        Ok(()) => DaglessStatus::Ok,
        Err(e) => fail(DaglessStatus::ConfigError, e.to_string()),
    }
}

/// Serializes the config as TOML.
///
/// # Safety
/// `cfg` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dagless_config_to_toml(cfg: *const DaglessConfig, out: *mut *mut c_char) -> DaglessStatus {
    let (Some(cfg), false) = (cfg.as_ref(), out.is_null()) else {
        return fail(DaglessStatus::NullPointer, "null argument");
    };
    match cfg.inner.to_toml() {
        Ok(s) => {
            *out = to_c(s);
            DaglessStatus::Ok
        }
        Err(e) => fail(DaglessStatus::ConfigError, e.to_string()),
    }
}

/// # Safety
/// `cfg` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn dagless_config_free(cfg: *mut DaglessConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the job and checks its outputs against the sequential oracle. On
/// `Ok` and `VerifyFailed`, `*out` receives a report.
///
/// # Safety
/// `cfg` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dagless_run(cfg: *const DaglessConfig, out: *mut *mut DaglessReport) -> DaglessStatus {
    let (Some(cfg), false) = (cfg.as_ref(), out.is_null()) else {
        return fail(DaglessStatus::NullPointer, "null argument");
    };
    let cfg = &cfg.inner;
    let workload = match cfg.workload.build() {
        Ok(w) => w,
        Err(e) => return fail(DaglessStatus::ConfigError, e.to_string()),
    };
    let t0 = Instant::now();
    let outcome = match job::run(&workload, &cfg.engine) {
        Ok(o) => o,
        Err(e) => return fail(job_status(&e), e.to_string()),
    };
    let wall = t0.elapsed().as_secs_f64() * 1e3;
    let verified = job::verify_outputs(&workload, &outcome.finals);
    let report = RunReport::new(&workload, &cfg.engine, &outcome, Some(verified.is_ok()), wall);
    *out = Box::into_raw(Box::new(DaglessReport { inner: report }));
    match verified {
        Ok(()) => DaglessStatus::Ok,
        Err(e) => fail(DaglessStatus::VerifyFailed, e.to_string()),
    }
}

/// # Safety
/// `report` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn dagless_report_makespan_ms(report: *const DaglessReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.inner.makespan_ms)
}

/// # Safety
/// `report` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn dagless_report_invocations(report: *const DaglessReport) -> u64 {
    report.as_ref().map_or(0, |r| r.inner.totals.invocations)
}

/// # Safety
/// `report` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn dagless_report_store_bytes(report: *const DaglessReport) -> u64 {
    report.as_ref().map_or(0, |r| r.inner.totals.store_bytes())
}

/// The full report as JSON; free with [`dagless_string_free`].
///
/// # Safety
/// `report` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn dagless_report_json(report: *const DaglessReport) -> *mut c_char {
    match report.as_ref() {
        Some(r) => to_c(r.inner.to_json()),
        None => {
            fail(DaglessStatus::NullPointer, "null report");
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `report` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn dagless_report_free(report: *mut DaglessReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `s` must be a string returned by this library or null.
#[no_mangle]
pub unsafe extern "C" fn dagless_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Writes the task graph of `workload` as JSON into `*out`.
///
/// # Safety
/// `workload` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dagless_export_dag(workload: *const c_char, out: *mut *mut c_char) -> DaglessStatus {
    if out.is_null() {
        return fail(DaglessStatus::NullPointer, "null out pointer");
    }
    let built = try_ffi!(read_str(workload))
        .parse::<WorkloadSpec>()
        .and_then(|s| s.build());
    match built {
        Ok(w) => match serde_json::to_string_pretty(&w.graph.to_doc()) {
            Ok(s) => {
                *out = to_c(s);
                DaglessStatus::Ok
            }
            Err(e) => fail(DaglessStatus::Internal, e.to_string()),
        },
        Err(e) => fail(DaglessStatus::ConfigError, e.to_string()),
    }
}

/// Charge in USD for one function run under the default price model.
#[no_mangle]
pub extern "C" fn dagless_bill_ms(duration_ms: f64, memory_gb: f64) -> f64 {
    CostModel::default().bill_ms(duration_ms, memory_gb)
}
