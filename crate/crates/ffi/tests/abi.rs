use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use dagless_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(dagless_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn run_round_trip() {
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(dagless_config_new(c("tr:n=8").as_ptr(), &mut cfg), DaglessStatus::Ok);
        assert_eq!(
            dagless_config_set(cfg, c("engine.store.shard_count").as_ptr(), c("4").as_ptr()),
            DaglessStatus::Ok
        );
        let mut report = ptr::null_mut();
        assert_eq!(dagless_run(cfg, &mut report), DaglessStatus::Ok);
        assert!(dagless_report_makespan_ms(report) > 0.0);
        // 4 leaf pairs start 4 executors; nothing else is invoked.
        assert_eq!(dagless_report_invocations(report), 4);
        let json = dagless_report_json(report);
        let text = CStr::from_ptr(json).to_str().unwrap();
        assert!(text.contains("\"schema\": 1"));
        assert!(text.contains("\"shard_count\": 4"));
        dagless_string_free(json);
        dagless_report_free(report);
        dagless_config_free(cfg);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(dagless_config_new(c("tr:n=6").as_ptr(), &mut cfg), DaglessStatus::ConfigError);
        assert!(last_error().contains("power of"), "{}", last_error());
        assert_eq!(dagless_config_new(ptr::null(), &mut cfg), DaglessStatus::NullPointer);
        let bad = [0xffu8, 0];
        assert_eq!(dagless_config_new(bad.as_ptr().cast(), &mut cfg), DaglessStatus::InvalidUtf8);

        assert_eq!(dagless_config_new(c("tr:n=4").as_ptr(), &mut cfg), DaglessStatus::Ok);
        assert_eq!(
            dagless_config_set(cfg, c("engine.scheduler").as_ptr(), c("round-robin").as_ptr()),
            DaglessStatus::ConfigError
        );
        dagless_config_set(cfg, c("engine.faults.kernels.add-0-0").as_ptr(), c("always").as_ptr());
        let mut report = ptr::null_mut();
        assert_eq!(dagless_run(cfg, &mut report), DaglessStatus::TaskFailed);
        assert!(report.is_null());
        assert!(last_error().contains("add-0-0"));
        dagless_config_free(cfg);

        let toml = "workload = \"tr:n=4\"\n[engine.faults]\nlost_increments = [\"add-1-0\"]\n";
        assert_eq!(dagless_config_from_toml(c(toml).as_ptr(), &mut cfg), DaglessStatus::Ok);
        assert_eq!(dagless_run(cfg, &mut report), DaglessStatus::Deadlock);
        assert!(last_error().contains("add-1-0"));
        dagless_config_free(cfg);
    }
}

#[test]
fn export_and_billing() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(dagless_export_dag(c("example6").as_ptr(), &mut out), DaglessStatus::Ok);
        let doc: serde_json::Value = serde_json::from_str(CStr::from_ptr(out).to_str().unwrap()).unwrap();
        assert_eq!(doc["nodes"].as_array().unwrap().len(), 6);
        dagless_string_free(out);
    }
    assert_eq!(dagless_bill_ms(230.0, 1.0), 3.0 * 0.000001667);
    unsafe {
        dagless_config_free(ptr::null_mut());
        dagless_report_free(ptr::null_mut());
    }
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/abi-<hash>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

/// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links_and_runs() {
    let header_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    // `cargo test` only builds the rlib, so refresh the static library first.
    let mut build = Command::new(env!("CARGO"));
    build.args(["build", "-p", "dagless-ffi", "--lib"]);
    if !cfg!(debug_assertions) {
        build.arg("--release");
    }
    let status = build.status().unwrap();
    assert!(status.success(), "building the static library failed");
    let lib = target_dir().join("libdagless_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "dagless.h"

int main(void) {
    DaglessConfig *cfg = NULL;
    if (dagless_config_new("example6", &cfg) != DAGLESS_STATUS_OK) return 10;
    DaglessReport *rep = NULL;
    if (dagless_run(cfg, &rep) != DAGLESS_STATUS_OK) { fprintf(stderr, "%s\n", dagless_last_error()); return 11; }
    char *json = dagless_report_json(rep);
    int ok = json != NULL && strstr(json, "\"verified\": true") != NULL;
    printf("%.1f %llu\n", dagless_report_makespan_ms(rep), (unsigned long long)dagless_report_invocations(rep));
    dagless_string_free(json);
    dagless_report_free(rep);
    dagless_config_free(cfg);
    if (dagless_config_new("bogus", &cfg) != DAGLESS_STATUS_CONFIG_ERROR) return 12;
    return ok ? 0 : 13;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.split_whitespace().count(), 2, "{stdout}");
}
