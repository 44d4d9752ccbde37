//! Acceptance suite. Runs every criterion in order and prints one PASS/FAIL
//! line per criterion; exits nonzero if any fails.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::{Arc, Barrier};
use std::time::Instant;

use dagless::clock::{self, ClockKind};
use dagless::config::{EngineConfig, SchedulerKind};
use dagless::cost::CostModel;
use dagless::dag::TaskId;
use dagless::fault::{FaultPlan, KernelFault};
use dagless::job::{self, JobError, RunOutcome};
use dagless::meta::MetadataStore;
use dagless::metrics::Ledger;
use dagless::report::RunReport;
use dagless::store::NetworkCostModel;
use dagless::trace::{StoreOp, TraceRecord};
use dagless::workloads::{gemm_assemble, gemm_inputs, Workload, WorkloadSpec};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn build(spec: &str) -> Workload {
    spec.parse::<WorkloadSpec>().unwrap().build().unwrap()
}

fn run(w: &Workload, cfg: &EngineConfig) -> Result<RunOutcome, String> {
    job::run(w, cfg).map_err(|e| format!("{} under {:?}: {e}", w.spec, cfg.scheduler))
}

/// Wall-mode runs drop modeled latencies so they finish quickly.
fn engine(mode: ClockKind, sched: SchedulerKind, clustering: bool, delayed_io: bool) -> EngineConfig {
    let mut cfg = EngineConfig {
        scheduler: sched,
        mode,
        ..Default::default()
    };
    cfg.cluster.clustering = clustering;
    cfg.cluster.delayed_io = delayed_io;
    cfg.cluster.cluster_threshold_bytes = 1 << 20;
    if mode == ClockKind::Wall {
        cfg = cfg.free_store();
        cfg.invoker.invoke_latency_ms = 0.0;
        cfg.cluster.delay_recheck_interval_ms = 1.0;
    }
    cfg
}

fn naive_matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                c[i * n + j] += a[i * n + k] * b[k * n + j];
            }
        }
    }
    c
}

fn criterion_1() -> Check {
    let workloads = [
        "tr:n=8",
        "tr:n=64,delay=3",
        "tr:n=512",
        "tr:n=4096",
        "gemm:n=4,block=2,seed=0,identity=1",
        "gemm:n=8,block=2,seed=7",
        "gemm:n=12,block=3,seed=11",
        "gemm:n=16,block=4,seed=3",
        "tsqr:blocks=2,payload=2097152",
        "tsqr:blocks=8,payload=2097152",
        "tsqr:blocks=64,payload=4096",
        "sleep:n=40,ms=2,per=4",
    ];
    let mut runs = 0;
    for spec in workloads {
        let w = build(spec);
        for mode in [ClockKind::Virtual, ClockKind::Wall] {
            for sched in [SchedulerKind::Decentralized, SchedulerKind::CentralizedPooled] {
                for clustering in [true, false] {
                    for delayed in [true, false] {
                        let cfg = engine(mode, sched, clustering, delayed);
                        let out = run(&w, &cfg)?;
                        job::verify_outputs(&w, &out.finals).map_err(|e| format!("{spec} {mode} {sched}: {e}"))?;
                        let counts = out.execution_counts(&w.graph);
                        ensure(counts.iter().all(|&c| c == 1), || {
                            format!("{spec} {mode} {sched} c={clustering} d={delayed}: execution counts {counts:?}")
                        })?;
                        if let WorkloadSpec::Gemm { n, block, seed, identity } = w.spec {
                            let (a, b) = gemm_inputs(n, seed, identity);
                            let want = naive_matmul(&a, &b, n);
                            let got = gemm_assemble(&w.graph, &out.finals, n, block).map_err(|e| e.0)?;
                            let err = got.iter().zip(&want).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                            ensure(err <= 1e-9, || format!("{spec}: max elementwise error {err}"))?;
                        }
                        runs += 1;
                    }
                }
            }
        }
    }
    Ok(format!("{runs} runs match the sequential oracle, every task ran once"))
}

fn criterion_2() -> Check {
    const TRIALS: usize = 10_000;
    const THREADS: usize = 64;
    let mds = clock::run(ClockKind::Virtual, |c| async move {
        MetadataStore::new(NetworkCostModel::free(), c, Arc::new(Ledger::new(u64::MAX)), None)
    })
    .map_err(|e| e.to_string())?;
    let barrier = Arc::new(Barrier::new(THREADS));
    let handles: Vec<_> = (0..THREADS)
        .map(|_| {
            let (mds, barrier) = (mds.clone(), barrier.clone());
            std::thread::spawn(move || {
                (0..TRIALS)
                    .map(|trial| {
                        barrier.wait();
                        mds.increment_now(TaskId(trial as u32), THREADS as u64)
                    })
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    let per_thread: Vec<Vec<_>> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let want: Vec<u64> = (1..=THREADS as u64).collect();
    for trial in 0..TRIALS {
        let mut seen = Vec::with_capacity(THREADS);
        for t in &per_thread {
            seen.push(t[trial].clone().map_err(|e| format!("trial {trial}: {e}"))?);
        }
        seen.sort_unstable();
        ensure(seen == want, || format!("trial {trial}: observed {seen:?}"))?;
        let finals = seen.iter().filter(|&&v| v == THREADS as u64).count();
        ensure(finals == 1, || format!("trial {trial}: {finals} observers of {THREADS}"))?;
    }
    Ok(format!("{TRIALS} trials x {THREADS} threads, each a permutation of 1..={THREADS}"))
}

fn criterion_3() -> Check {
    let w = build("sleep:n=10,ms=0,per=10");
    let interior: Vec<String> = w
        .graph
        .ids()
        .filter(|&t| w.graph.outdegree(t) > 0)
        .map(|t| format!("obj/{}", w.graph.name(t)))
        .collect();
    let counts = |sched| -> Result<(usize, usize, usize, u64), String> {
        let mut cfg = EngineConfig {
            scheduler: sched,
            trace: true,
            ..Default::default()
        };
        cfg.invoker.pool_size = 1;
        let out = run(&w, &cfg)?;
        let recs = out.trace.unwrap();
        let invocations = recs.iter().filter(|r| matches!(r, TraceRecord::Invoke(_))).count();
        let store: Vec<_> = recs
            .iter()
            .filter_map(|r| match r {
                TraceRecord::Store(s) if s.shard.is_some() => Some(s),
                _ => None,
            })
            .collect();
        let puts = store.iter().filter(|s| s.op == StoreOp::Put).count();
        let gets = store.iter().filter(|s| s.op == StoreOp::Get).count();
        let interior_bytes = store.iter().filter(|s| interior.contains(&s.key)).map(|s| s.size).sum();
        Ok((invocations, puts, gets, interior_bytes))
    };
    let (inv, _, _, bytes) = counts(SchedulerKind::Decentralized)?;
    ensure(inv == 1 && bytes == 0, || {
        format!("decentralized: {inv} invocations, {bytes} interior-edge bytes")
    })?;
    let (inv, puts, gets, _) = counts(SchedulerKind::CentralizedSerial)?;
    ensure(inv == 10 && puts == 10 && gets == 9, || {
        format!("centralized: {inv} invocations, {puts} puts, {gets} gets")
    })?;
    Ok("decentralized 1 invocation / 0 interior bytes; centralized 10 / 10 puts / 9 gets".into())
}

fn criterion_4() -> Check {
    let threshold: u64 = 1 << 20;
    let w = build(&format!("tsqr:blocks=32,payload={}", 4 * threshold));
    let cfg = |on: bool| {
        let mut c = EngineConfig::default();
        c.cluster.cluster_threshold_bytes = threshold;
        c.cluster.clustering = on;
        c.cluster.delayed_io = on;
        c.cluster = c.cluster.patient();
        c
    };
    let on = run(&w, &cfg(true))?;
    let again = run(&w, &cfg(true))?;
    let off = run(&w, &cfg(false))?;
    ensure(on.totals == again.totals, || "optimized run is not deterministic".into())?;
    let large = on.totals.large_store_bytes();
    ensure(large == 0, || format!("{large} bytes of large objects moved with clustering on"))?;
    let (b_on, b_off) = (on.totals.store_bytes(), off.totals.store_bytes());
    ensure(b_on * 10 <= b_off, || format!("store bytes {b_on} (on) vs {b_off} (off)"))?;
    Ok(format!(
        "large-object bytes 0; store bytes {b_on} vs {b_off} ({:.0}x less)",
        b_off as f64 / b_on.max(1) as f64
    ))
}

fn criterion_5() -> Check {
    let mut notes = Vec::new();
    for n in [100usize, 1000, 10_000] {
        let w = build(&format!("sleep:n={n},ms=0,per=1"));
        let serial = EngineConfig {
            scheduler: SchedulerKind::CentralizedSerial,
            ..Default::default()
        }
        .free_store();
        let m = run(&w, &serial)?.makespan_ms;
        ensure(m == n as f64 * 50.0, || format!("serial N={n}: {m}ms"))?;
        let mut dec = EngineConfig::default().free_store();
        dec.invoker.pool_size = 64;
        let m = run(&w, &dec)?.makespan_ms;
        let want = n.div_ceil(64) as f64 * 50.0;
        ensure(m == want, || format!("decentralized N={n}: {m}ms, want {want}"))?;
        notes.push(format!("N={n}: {}/{m}", n * 50));
    }
    let mut weak = Vec::new();
    for chains in [100usize, 1000, 10_000] {
        let w = build(&format!("sleep:n={},ms=100,per=10", chains * 10));
        let mut cfg = EngineConfig::default().free_store();
        cfg.invoker.pool_size = 5000;
        cfg.invoker.concurrency_cap = 10_000;
        weak.push(run(&w, &cfg)?.makespan_ms);
    }
    let spread = weak.iter().cloned().fold(f64::MIN, f64::max) - weak.iter().cloned().fold(f64::MAX, f64::min);
    let quantum = CostModel::default().billing_quantum_ms;
    ensure(spread <= quantum, || format!("weak scaling makespans {weak:?}"))?;
    Ok(format!("serverless serial/decentralized ms {}; weak {weak:?}", notes.join(", ")))
}

fn criterion_6() -> Check {
    let makespan = |delay: u32, sched| -> Result<f64, String> {
        let w = build(&format!("tr:n=1024,delay={delay}"));
        Ok(run(
            &w,
            &EngineConfig {
                scheduler: sched,
                ..Default::default()
            },
        )?
        .makespan_ms)
    };
    let (d0, p0) = (
        makespan(0, SchedulerKind::Decentralized)?,
        makespan(0, SchedulerKind::CentralizedPooled)?,
    );
    ensure(p0 <= d0, || format!("delay 0: pooled {p0} > decentralized {d0}"))?;
    let mut rows = vec![format!("0ms: {d0:.1} vs {p0:.1}")];
    for delay in [250, 500] {
        let d = makespan(delay, SchedulerKind::Decentralized)?;
        let p = makespan(delay, SchedulerKind::CentralizedPooled)?;
        ensure(d < p, || format!("delay {delay}: decentralized {d} >= pooled {p}"))?;
        rows.push(format!("{delay}ms: {d:.1} vs {p:.1}"));
    }
    Ok(format!("decentralized vs pooled makespan: {}", rows.join("; ")))
}

fn criterion_7() -> Check {
    use proptest::prelude::*;
    use proptest::test_runner::{Config, TestRunner};
    let model = CostModel::default();
    let bill = model.bill_ms(230.0, 1.0);
    ensure(bill == 3.0 * 0.000001667, || format!("bill(230ms, 1GB) = {bill}"))?;
    ensure(model.bill_ms(0.0, 1.0) == 0.000001667, || "0ms is not one quantum".into())?;
    let mut runner = TestRunner::new(Config {
        cases: 2000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&(0.0f64..10_000.0, 0.0f64..10_000.0, 0.125f64..10.0), |(a, b, gb)| {
            if (a / 100.0).ceil() == (b / 100.0).ceil() {
                prop_assert_eq!(model.bill_ms(a, gb), model.bill_ms(b, gb));
            }
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(model.bill_ms(lo, gb) <= model.bill_ms(hi, gb));
            let rel = (model.bill_ms(a, 2.0 * gb) - 2.0 * model.bill_ms(a, gb)).abs();
            prop_assert!(rel <= 1e-15);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("bill(230ms, 1GB) = 3 quanta; rounding, monotonicity and memory linearity hold".into())
}

fn criterion_8() -> Check {
    let cases: [(&str, EngineConfig); 3] = [
        ("tr:n=256,delay=5", EngineConfig::default()),
        ("tsqr:blocks=16,payload=2097152", {
            let mut c = EngineConfig {
                seed: 42,
                ..Default::default()
            };
            c.cluster.cluster_threshold_bytes = 1 << 20;
            c
        }),
        ("gemm:n=8,block=2,seed=5", EngineConfig {
            scheduler: SchedulerKind::CentralizedPooled,
            ..Default::default()
        }),
    ];
    for (spec, cfg) in cases {
        let w = build(spec);
        let json = |out: &RunOutcome| RunReport::new(&w, &cfg, out, Some(true), 0.0).to_json();
        let a = json(&run(&w, &cfg)?);
        let b = json(&run(&w, &cfg)?);
        ensure(a == b, || format!("{spec}: report.json differs between identical runs"))?;
    }
    Ok("3 workloads produce byte-identical report.json across repeated runs".into())
}

fn criterion_9() -> Check {
    let w = build("tr:n=8,delay=10");
    let victim = "add-1-1";
    for sched in [SchedulerKind::Decentralized, SchedulerKind::CentralizedSerial] {
        let cfg = |fault| EngineConfig {
            scheduler: sched,
            faults: FaultPlan::default().fail(victim, fault),
            ..Default::default()
        };
        match job::run(&w, &cfg(KernelFault::Always)) {
            Err(JobError::TaskFailed { task, attempts: 3, .. }) if task == victim => {}
            other => return Err(format!("{sched} always-failing: {other:?}")),
        }
        let out = run(&w, &cfg(KernelFault::FailFirst(2)))?;
        job::verify_outputs(&w, &out.finals).map_err(|e| e.to_string())?;
        ensure(out.totals.retries == 2, || format!("{sched}: {} retries", out.totals.retries))?;
    }
    Ok("always-failing task fails after 3 attempts; fail-twice succeeds with 2 retries".into())
}

fn criterion_10() -> Check {
    let w = build("tsqr:blocks=32,payload=1048576");
    let mut m = Vec::new();
    for shards in [1usize, 4, 16] {
        let mut cfg = EngineConfig::default();
        cfg.cluster.clustering = false;
        cfg.store.shard_count = shards;
        m.push(run(&w, &cfg)?.makespan_ms);
    }
    ensure(m[0] >= m[1] && m[1] >= m[2], || format!("makespans {m:?} are not non-increasing"))?;
    let ratio = (m[1] - m[2]) / (m[0] - m[1]);
    ensure(ratio < 1.0, || format!("makespans {m:?}: improvement ratio {ratio}"))?;
    Ok(format!("makespan by shards 1/4/16: {m:?}; 4->16 vs 1->4 gain ratio {ratio:.3}"))
}

fn main() {
    // `cargo test -- --list` probes test binaries.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, fn() -> Check); 10] = [
        ("correctness suite", criterion_1),
        ("counter linearizability", criterion_2),
        ("locality identity", criterion_3),
        ("clustering and delayed I/O", criterion_4),
        ("virtual-clock scaling", criterion_5),
        ("tree-reduction crossover", criterion_6),
        ("billing arithmetic", criterion_7),
        ("determinism", criterion_8),
        ("retry bound", criterion_9),
        ("shard sensitivity", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut results = BTreeMap::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|x| x == &n.to_string()) {
            continue;
        }
        let t0 = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        let line = match &res {
            Ok(detail) => format!("PASS criterion {n:>2} ({name}) [{secs:.1}s]: {detail}"),
            Err(why) => {
                failed += 1;
                format!("FAIL criterion {n:>2} ({name}) [{secs:.1}s]: {why}")
            }
        };
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
        results.insert(n, res.is_ok());
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.values().filter(|&&ok| ok).count()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

