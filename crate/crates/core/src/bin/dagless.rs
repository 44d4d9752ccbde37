use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use dagless::clock::ClockKind;
use dagless::config::{ConfigError, RunConfig, SchedulerKind};
use dagless::cost::BillingRounding;
use dagless::job::{self, JobError};
use dagless::report::{self, RunReport};
use dagless::schedule::{generate_schedules, normalize};
use dagless::workloads::WorkloadSpec;

#[derive(Parser)]
#[command(name = "dagless", version, about = "Run DAG jobs on a simulated serverless platform")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one job and write report.json / report.csv.
    Run(RunArgs),
    /// Diff two runs given as report.json or config files, or run the optimization ladder.
    Compare(CompareArgs),
    /// Run a job and check its outputs against the sequential oracle.
    Verify(RunArgs),
    /// Print a workload's task graph as JSON.
    ExportDag(ExportArgs),
}

fn on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(format!("expected on|off, got {other:?}")),
    }
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML run-config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Workload spec, e.g. `tr:n=1024,delay=250`.
    #[arg(long)]
    workload: Option<WorkloadSpec>,
    #[arg(long)]
    scheduler: Option<SchedulerKind>,
    #[arg(long)]
    mode: Option<ClockKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = on_off)]
    clustering: Option<bool>,
    #[arg(long = "delayed-io", value_parser = on_off)]
    delayed_io: Option<bool>,
    /// Recheck budget for delayed I/O.
    #[arg(long)]
    rechecks: Option<u32>,
    #[arg(long)]
    shards: Option<usize>,
    #[arg(long = "invoke-latency")]
    invoke_latency_ms: Option<f64>,
    #[arg(long = "pool-size")]
    pool_size: Option<usize>,
    #[arg(long = "inline-threshold")]
    inline_threshold_bytes: Option<u64>,
    #[arg(long = "cluster-threshold")]
    cluster_threshold_bytes: Option<u64>,
    #[arg(long = "timeout")]
    timeout_ms: Option<f64>,
    /// `up` (default) or `nearest`.
    #[arg(long)]
    billing: Option<BillingRounding>,
    /// Extra `dotted.key=value` overrides, e.g. `engine.store.model.per_op_latency_ms=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Directory for report.json, report.csv and trace.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Two inputs, each a report.json or a TOML config.
    inputs: Vec<PathBuf>,
    /// Run baseline, +clustering and +delayed-io for the given run settings.
    #[arg(long)]
    ladder: bool,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    workload: WorkloadSpec,
    /// Also print the static schedule of every leaf.
    #[arg(long)]
    schedules: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Job(#[from] JobError),
    #[error("{0}")]
    Other(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<report::ReportError> for CliError {
    fn from(e: report::ReportError) -> Self {
        CliError::Other(e.to_string())
    }
}

fn trace_requested() -> bool {
    std::env::var("DAGLESS_TRACE").is_ok_and(|v| v == "1")
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_toml(&fs::read_to_string(path)?)?,
            None => RunConfig::new(
                self.workload
                    .clone()
                    .ok_or_else(|| ConfigError::new("workload", "required without --config"))?,
                Default::default(),
            ),
        };
        let e = &mut cfg.engine;
        if let Some(w) = &self.workload {
            cfg.workload = w.clone();
        }
        if let Some(v) = self.scheduler {
            e.scheduler = v;
        }
        if let Some(v) = self.mode {
            e.mode = v;
        }
        if let Some(v) = self.seed {
            e.seed = v;
            cfg.workload = cfg.workload.clone().with_seed(v);
        }
        if let Some(v) = self.clustering {
            e.cluster.clustering = v;
        }
        if let Some(v) = self.delayed_io {
            e.cluster.delayed_io = v;
        }
        if let Some(v) = self.rechecks {
            e.cluster.delay_max_rechecks = v;
        }
        if let Some(v) = self.shards {
            e.store.shard_count = v;
        }
        if let Some(v) = self.invoke_latency_ms {
            e.invoker.invoke_latency_ms = v;
        }
        if let Some(v) = self.pool_size {
            e.invoker.pool_size = v;
        }
        if let Some(v) = self.inline_threshold_bytes {
            e.invoker.inline_threshold_bytes = v;
        }
        if let Some(v) = self.cluster_threshold_bytes {
            e.cluster.cluster_threshold_bytes = v;
        }
        if self.timeout_ms.is_some() {
            e.timeout_ms = self.timeout_ms;
        }
        if let Some(v) = self.billing {
            e.cost.rounding = v;
        }
        if trace_requested() {
            e.trace = true;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| ConfigError::new(kv.as_str(), "expected KEY=VALUE"))?;
            cfg.set(k, v)?;
        }
        if self.out.is_some() {
            cfg.output.dir = self.out.clone();
        }
        cfg.engine.validate()?;
        Ok(cfg)
    }
}

/// Runs a resolved config. Reports are returned even when verification fails.
fn execute(cfg: &RunConfig) -> Result<(RunReport, bool), CliError> {
    let workload = cfg.workload.build().map_err(JobError::from)?;
    let start = Instant::now();
    let outcome = job::run(&workload, &cfg.engine)?;
    let wall = start.elapsed().as_secs_f64() * 1e3;
    let verified = match job::verify_outputs(&workload, &outcome.finals) {
        Ok(()) => true,
        Err(e) => {
            eprintln!("verification failed: {e}");
            false
        }
    };
    let report = RunReport::new(&workload, &cfg.engine, &outcome, Some(verified), wall);
    if let Some(dir) = &cfg.output.dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), report.to_json())?;
        RunReport::write_csv(&[&report], fs::File::create(dir.join("report.csv"))?)?;
    }
    if let Some(records) = &outcome.trace {
        let dir = cfg.output.dir.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir)?;
        let mut f = std::io::BufWriter::new(fs::File::create(dir.join("trace.jsonl"))?);
        for r in records {
            serde_json::to_writer(&mut f, r).map_err(|e| CliError::Other(e.to_string()))?;
            std::io::Write::write_all(&mut f, b"\n")?;
        }
    }
    Ok((report, verified))
}

fn summary(r: &RunReport) -> String {
    format!(
        "{} [{} {}] makespan={:.3}ms invocations={} store_bytes={} cost=${:.9} verified={}",
        r.workload,
        r.scheduler,
        r.mode,
        r.makespan_ms,
        r.totals.invocations,
        r.totals.store_bytes(),
        r.cost.total_usd,
        r.verified.map_or("n/a".into(), |v| v.to_string()),
    )
}

fn load_report(path: &Path, overrides: &RunArgs) -> Result<RunReport, CliError> {
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(RunReport::from_json(&text)?);
    }
    let mut args = overrides.clone();
    args.config = Some(path.to_path_buf());
    args.out = None;
    Ok(execute(&args.resolve()?)?.0)
}

fn run() -> Result<bool, CliError> {
    match Cli::parse().command {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let (report, verified) = execute(&cfg)?;
            println!("{}", summary(&report));
            Ok(verified)
        }
        Command::Verify(args) => {
            let cfg = args.resolve()?;
            let (report, verified) = execute(&cfg)?;
            let status = if verified { "PASS" } else { "FAIL" };
            println!("{status}: {} outputs of {} checked against the sequential oracle", report.outputs.len(), report.workload);
            Ok(verified)
        }
        Command::Compare(args) => {
            if args.ladder {
                let base = args.run.resolve()?;
                let mut steps = Vec::new();
                for (name, engine) in report::ladder_configs(&base.engine) {
                    let mut cfg = base.clone();
                    cfg.engine = engine;
                    cfg.output.dir = None;
                    steps.push((name, execute(&cfg)?.0));
                }
                print!("{}", report::render_ladder(&report::ladder(&steps)));
                return Ok(true);
            }
            let [a, b] = args.inputs.as_slice() else {
                return Err(CliError::Other("compare needs exactly two inputs (or --ladder)".into()));
            };
            let ra = load_report(a, &args.run)?;
            let rb = load_report(b, &args.run)?;
            print!("{}", report::render_deltas(&report::compare(&ra, &rb)?));
            Ok(true)
        }
        Command::ExportDag(args) => {
            let w = args.workload.build().map_err(JobError::from)?;
            let mut doc = serde_json::to_value(w.graph.to_doc()).map_err(|e| CliError::Other(e.to_string()))?;
            if args.schedules {
                let norm = std::sync::Arc::new(normalize(w.graph.clone()).map_err(JobError::from)?);
                let scheds: Vec<_> = generate_schedules(&norm)
                    .map_err(JobError::from)?
                    .iter()
                    .map(|s| s.to_doc())
                    .collect();
                doc["schedules"] = serde_json::to_value(scheds).map_err(|e| CliError::Other(e.to_string()))?;
            }
            let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Other(e.to_string()))?;
            match args.out {
                Some(p) => fs::write(p, text)?,
                None => println!("{text}"),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
