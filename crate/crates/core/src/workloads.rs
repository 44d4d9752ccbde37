//! Generators for the bundled DAG families and their kernels.
//!
//! Specs use a compact grammar, `name:key=value,...`:
//!
//! - `tr:n=1024,delay=250` tree reduction over `0..n`
//! - `sleep:n=10000,ms=100,per=10` independent chains of sleep tasks
//! - `gemm:n=8,block=2,seed=1` blocked matrix multiply (`identity=1` for I×I)
//! - `tsqr:blocks=32,payload=4194304` tall-skinny QR shape with checksum payloads
//! - `example6` the six-task example DAG

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use bytes::{BufMut, Bytes, BytesMut};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dag::{Constants, TaskGraph, TaskHints, TaskId};
use crate::kernel::{self, decode_i64, encode_i64, KernelError, NamedKernel};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkloadError {
    #[error("bad size: {0}")]
    BadSize(String),
    #[error("bad workload spec {spec:?}: {reason}")]
    Parse { spec: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum WorkloadSpec {
    TreeReduction { n: usize, delay_ms: f64 },
    SleepGrid { n_tasks: usize, per_task_ms: f64, tasks_per_executor: usize },
    Gemm { n: usize, block: usize, seed: u64, identity: bool },
    Tsqr { blocks: usize, payload_bytes: u64 },
    Example6,
}

/// A generated graph plus the constants bound to its leaves.
#[derive(Debug, Clone)]
pub struct Workload {
    pub spec: WorkloadSpec,
    pub graph: Arc<TaskGraph>,
    pub constants: Constants,
}

impl WorkloadSpec {
    pub fn build(&self) -> Result<Workload, WorkloadError> {
        let (graph, constants) = match *self {
            WorkloadSpec::TreeReduction { n, delay_ms } => tree_reduction(n, delay_ms)?,
            WorkloadSpec::SleepGrid {
                n_tasks,
                per_task_ms,
                tasks_per_executor,
            } => (sleep_grid(n_tasks, per_task_ms, tasks_per_executor)?, Constants::new()),
            WorkloadSpec::Gemm { n, block, seed, identity } => gemm_blocked(n, block, seed, identity)?,
            WorkloadSpec::Tsqr { blocks, payload_bytes } => tsqr_shape(blocks, payload_bytes)?,
            WorkloadSpec::Example6 => example6_with_inputs(),
        };
        Ok(Workload {
            spec: self.clone(),
            graph: Arc::new(graph),
            constants,
        })
    }

    /// Reseeds generators that use randomness.
    pub fn with_seed(mut self, new_seed: u64) -> Self {
        if let WorkloadSpec::Gemm { seed, .. } = &mut self {
            *seed = new_seed;
        }
        self
    }
}

impl fmt::Display for WorkloadSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkloadSpec::TreeReduction { n, delay_ms } => write!(f, "tr:n={n},delay={delay_ms}"),
            WorkloadSpec::SleepGrid {
                n_tasks,
                per_task_ms,
                tasks_per_executor,
            } => write!(f, "sleep:n={n_tasks},ms={per_task_ms},per={tasks_per_executor}"),
            WorkloadSpec::Gemm { n, block, seed, identity } => {
                write!(f, "gemm:n={n},block={block},seed={seed}")?;
                if *identity {
                    f.write_str(",identity=1")?;
                }
                Ok(())
            }
            WorkloadSpec::Tsqr { blocks, payload_bytes } => write!(f, "tsqr:blocks={blocks},payload={payload_bytes}"),
            WorkloadSpec::Example6 => f.write_str("example6"),
        }
    }
}

impl FromStr for WorkloadSpec {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: String| WorkloadError::Parse {
            spec: s.to_string(),
            reason,
        };
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut params = BTreeMap::new();
        for kv in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {kv:?}")))?;
            params.insert(k.trim(), v.trim());
        }
        let mut take = |key: &str| params.remove(key);
        fn num<T: FromStr>(v: Option<&str>, key: &str, default: Option<T>) -> Result<T, String> {
            match v {
                Some(v) => v.parse().map_err(|_| format!("{key}={v:?} is not a number")),
                None => default.ok_or_else(|| format!("missing {key}")),
            }
        }
        let spec = match name {
            "tr" => WorkloadSpec::TreeReduction {
                n: num(take("n"), "n", None).map_err(err)?,
                delay_ms: num(take("delay"), "delay", Some(0.0)).map_err(err)?,
            },
            "sleep" => WorkloadSpec::SleepGrid {
                n_tasks: num(take("n"), "n", None).map_err(err)?,
                per_task_ms: num(take("ms"), "ms", Some(0.0)).map_err(err)?,
                tasks_per_executor: num(take("per"), "per", Some(1)).map_err(err)?,
            },
            "gemm" => WorkloadSpec::Gemm {
                n: num(take("n"), "n", None).map_err(err)?,
                block: num(take("block"), "block", None).map_err(err)?,
                seed: num(take("seed"), "seed", Some(0)).map_err(err)?,
                identity: num::<u8>(take("identity"), "identity", Some(0)).map_err(err)? != 0,
            },
            "tsqr" => WorkloadSpec::Tsqr {
                blocks: num(take("blocks"), "blocks", None).map_err(err)?,
                payload_bytes: num(take("payload"), "payload", Some(1 << 20)).map_err(err)?,
            },
            "example6" => WorkloadSpec::Example6,
            other => return Err(err(format!("unknown workload {other:?} (expected tr|sleep|gemm|tsqr|example6)"))),
        };
        if let Some(k) = params.keys().next() {
            return Err(err(format!("unknown parameter {k:?}")));
        }
        Ok(spec)
    }
}

impl Serialize for WorkloadSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WorkloadSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

fn hints(ms: f64) -> TaskHints {
    if ms > 0.0 {
        TaskHints::duration(ms)
    } else {
        TaskHints::default()
    }
}

/// Binary tree of `n - 1` add tasks over the integers `0..n`.
pub fn tree_reduction(n: usize, delay_ms: f64) -> Result<(TaskGraph, Constants), WorkloadError> {
    if n < 2 || !n.is_power_of_two() {
        return Err(WorkloadError::BadSize(format!("tree reduction needs a power of two >= 2, got {n}")));
    }
    let add = NamedKernel::new("add", kernel::add);
    let mut g = TaskGraph::new();
    let mut constants = Constants::new();
    let mut level: Vec<TaskId> = Vec::with_capacity(n / 2);
    for i in 0..n / 2 {
        let id = g
            .add_task(format!("add-0-{i}"), add.clone(), &[], hints(delay_ms))
            .expect("fresh names");
        constants.insert(id, vec![encode_i64(2 * i as i64), encode_i64(2 * i as i64 + 1)]);
        level.push(id);
    }
    let mut depth = 1;
    while level.len() > 1 {
        level = level
            .chunks(2)
            .enumerate()
            .map(|(i, pair)| {
                g.add_task(format!("add-{depth}-{i}"), add.clone(), pair, hints(delay_ms))
                    .expect("fresh names")
            })
            .collect();
        depth += 1;
    }
    Ok((g, constants))
}

/// Independent chains of `step` tasks, `tasks_per_executor` long (the last
/// chain may be shorter).
pub fn sleep_grid(n_tasks: usize, per_task_ms: f64, tasks_per_executor: usize) -> Result<TaskGraph, WorkloadError> {
    if n_tasks == 0 || tasks_per_executor == 0 {
        return Err(WorkloadError::BadSize("sleep grid needs n >= 1 and per >= 1".into()));
    }
    let step = NamedKernel::new("step", kernel::step);
    let mut g = TaskGraph::new();
    for chain in 0..n_tasks.div_ceil(tasks_per_executor) {
        let len = tasks_per_executor.min(n_tasks - chain * tasks_per_executor);
        let mut prev: Option<TaskId> = None;
        for i in 0..len {
            let deps: Vec<TaskId> = prev.into_iter().collect();
            prev = Some(
                g.add_task(format!("s-{chain}-{i}"), step.clone(), &deps, hints(per_task_ms))
                    .expect("fresh names"),
            );
        }
    }
    Ok(g)
}

pub fn encode_f64s(v: &[f64]) -> Bytes {
    let mut b = BytesMut::with_capacity(v.len() * 8);
    for x in v {
        b.put_f64_le(*x);
    }
    b.freeze()
}

pub fn decode_f64s(b: &[u8]) -> Result<Vec<f64>, KernelError> {
    if b.len() % 8 != 0 {
        return Err(KernelError::new(format!("f64 payload of {} bytes", b.len())));
    }
    Ok(b.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn square_side(len: usize) -> Result<usize, KernelError> {
    let side = (len as f64).sqrt().round() as usize;
    if side * side != len {
        return Err(KernelError::new(format!("{len} values do not form a square block")));
    }
    Ok(side)
}

/// Product of two square row-major blocks.
pub fn matmul_block(inputs: &[Bytes]) -> Result<Bytes, KernelError> {
    let [a, b] = inputs else {
        return Err(KernelError::new(format!("matmul_block takes 2 inputs, got {}", inputs.len())));
    };
    let (a, b) = (decode_f64s(a)?, decode_f64s(b)?);
    if a.len() != b.len() {
        return Err(KernelError::new("block size mismatch"));
    }
    let s = square_side(a.len())?;
    let mut c = vec![0.0; s * s];
    for i in 0..s {
        for k in 0..s {
            let aik = a[i * s + k];
            for j in 0..s {
                c[i * s + j] += aik * b[k * s + j];
            }
        }
    }
    Ok(encode_f64s(&c))
}

/// Elementwise sum of equally sized blocks, in input order.
pub fn block_sum(inputs: &[Bytes]) -> Result<Bytes, KernelError> {
    let mut acc: Option<Vec<f64>> = None;
    for b in inputs {
        let v = decode_f64s(b)?;
        match &mut acc {
            None => acc = Some(v),
            Some(a) if a.len() == v.len() => a.iter_mut().zip(v).for_each(|(x, y)| *x += y),
            Some(_) => return Err(KernelError::new("block size mismatch")),
        }
    }
    acc.map(|a| encode_f64s(&a)).ok_or_else(|| KernelError::new("block_sum needs inputs"))
}

/// The dense `n × n` inputs of a gemm workload, row-major.
pub fn gemm_inputs(n: usize, seed: u64, identity: bool) -> (Vec<f64>, Vec<f64>) {
    if identity {
        let mut id = vec![0.0; n * n];
        for i in 0..n {
            id[i * n + i] = 1.0;
        }
        return (id.clone(), id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gen = || (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let a = gen();
    let b = gen();
    (a, b)
}

fn extract_block(m: &[f64], n: usize, block: usize, bi: usize, bj: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(block * block);
    for r in 0..block {
        let row = (bi * block + r) * n + bj * block;
        out.extend_from_slice(&m[row..row + block]);
    }
    out
}

/// Reassembles output blocks named `sum-i-j` into a dense row-major matrix.
pub fn gemm_assemble(graph: &TaskGraph, finals: &BTreeMap<TaskId, Bytes>, n: usize, block: usize) -> Result<Vec<f64>, KernelError> {
    let m = n / block;
    let mut out = vec![0.0; n * n];
    for bi in 0..m {
        for bj in 0..m {
            let id = graph
                .id_of(&format!("sum-{bi}-{bj}"))
                .ok_or_else(|| KernelError::new(format!("no block sum-{bi}-{bj}")))?;
            let vals = decode_f64s(finals.get(&id).ok_or_else(|| KernelError::new("missing output block"))?)?;
            for r in 0..block {
                let row = (bi * block + r) * n + bj * block;
                out[row..row + block].copy_from_slice(&vals[r * block..(r + 1) * block]);
            }
        }
    }
    Ok(out)
}

/// `(n/block)^3` block products feeding `(n/block)^2` fan-in sums.
pub fn gemm_blocked(n: usize, block: usize, seed: u64, identity: bool) -> Result<(TaskGraph, Constants), WorkloadError> {
    if n == 0 || block == 0 || n % block != 0 {
        return Err(WorkloadError::BadSize(format!("block {block} must divide n {n}")));
    }
    let m = n / block;
    let (a, b) = gemm_inputs(n, seed, identity);
    let prod = NamedKernel::new("matmul_block", matmul_block);
    let sum = NamedKernel::new("block_sum", block_sum);
    let mut g = TaskGraph::new();
    let mut constants = Constants::new();
    let mut prods = BTreeMap::new();
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let id = g
                    .add_task(format!("prod-{i}-{j}-{k}"), prod.clone(), &[], TaskHints::default())
                    .expect("fresh names");
                constants.insert(
                    id,
                    vec![
                        encode_f64s(&extract_block(&a, n, block, i, k)),
                        encode_f64s(&extract_block(&b, n, block, k, j)),
                    ],
                );
                prods.insert((i, j, k), id);
            }
        }
    }
    for i in 0..m {
        for j in 0..m {
            let deps: Vec<TaskId> = (0..m).map(|k| prods[&(i, j, k)]).collect();
            g.add_task(format!("sum-{i}-{j}"), sum.clone(), &deps, TaskHints::default())
                .expect("fresh names");
        }
    }
    Ok((g, constants))
}

const MIX_K1: u64 = 0x9e37_79b9_7f4a_7c15;
const MIX_K2: u64 = 0xbf58_476d_1ce4_e5b9;
const TSQR_SEED: u64 = 0x7453_7172_0000_0001;
const TSQR_R_BYTES: usize = 64;

/// Order-sensitive combination of two checksums.
pub fn mix(a: u64, b: u64) -> u64 {
    let x = (a.rotate_left(17) ^ b.wrapping_mul(MIX_K1)).wrapping_mul(MIX_K2);
    x ^ (x >> 31)
}

fn payload(checksum: u64, size: usize) -> Bytes {
    let mut b = BytesMut::zeroed(size.max(8));
    b[..8].copy_from_slice(&checksum.to_le_bytes());
    b.freeze()
}

pub fn checksum_of(b: &[u8]) -> Result<u64, KernelError> {
    let head: [u8; 8] = b
        .get(..8)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| KernelError::new("payload shorter than its checksum header"))?;
    Ok(u64::from_le_bytes(head))
}

fn one_input<'a>(inputs: &'a [Bytes], kernel: &str) -> Result<&'a Bytes, KernelError> {
    match inputs {
        [x] => Ok(x),
        _ => Err(KernelError::new(format!("{kernel} takes 1 input, got {}", inputs.len()))),
    }
}

/// Leaf checksum of block `i`.
pub fn tsqr_leaf_checksum(i: u64) -> u64 {
    mix(TSQR_SEED, i)
}

/// Constants: block index and payload size. Emits the block's payload.
pub fn tsqr_load(inputs: &[Bytes]) -> Result<Bytes, KernelError> {
    let [i, size] = inputs else {
        return Err(KernelError::new("tsqr_load takes [index, size]"));
    };
    let (i, size) = (decode_i64(i)?, decode_i64(size)?);
    Ok(payload(tsqr_leaf_checksum(i as u64), size as usize))
}

pub fn tsqr_qr(inputs: &[Bytes]) -> Result<Bytes, KernelError> {
    let x = one_input(inputs, "tsqr_qr")?;
    Ok(payload(mix(checksum_of(x)?, 1), x.len()))
}

pub fn tsqr_q(inputs: &[Bytes]) -> Result<Bytes, KernelError> {
    let x = one_input(inputs, "tsqr_q")?;
    Ok(payload(mix(checksum_of(x)?, 2), x.len()))
}

pub fn tsqr_r(inputs: &[Bytes]) -> Result<Bytes, KernelError> {
    let x = one_input(inputs, "tsqr_r")?;
    Ok(payload(mix(checksum_of(x)?, 3), TSQR_R_BYTES))
}

pub fn tsqr_reduce(inputs: &[Bytes]) -> Result<Bytes, KernelError> {
    let [a, b] = inputs else {
        return Err(KernelError::new("tsqr_reduce takes 2 inputs"));
    };
    Ok(payload(mix(checksum_of(a)?, checksum_of(b)?), TSQR_R_BYTES))
}

pub fn tsqr_apply(inputs: &[Bytes]) -> Result<Bytes, KernelError> {
    let [q, r] = inputs else {
        return Err(KernelError::new("tsqr_apply takes [q, r]"));
    };
    Ok(payload(mix(checksum_of(q)?, checksum_of(r)?), q.len()))
}

/// Per block `i`: `load-i → qr-i → {q-i, r-i}`; the `r` blocks reduce
/// pairwise to `root`, which fans back out to `apply-i = f(q-i, root)`.
/// One block degenerates to a single load task.
pub fn tsqr_shape(blocks: usize, payload_bytes: u64) -> Result<(TaskGraph, Constants), WorkloadError> {
    if blocks == 0 || !blocks.is_power_of_two() {
        return Err(WorkloadError::BadSize(format!("tsqr needs a power-of-two block count, got {blocks}")));
    }
    let k = |name: &str, f: fn(&[Bytes]) -> Result<Bytes, KernelError>| NamedKernel::new(name, f);
    let mut g = TaskGraph::new();
    let mut constants = Constants::new();
    let mut rs = Vec::with_capacity(blocks);
    let mut qs = Vec::with_capacity(blocks);
    let hint = TaskHints {
        duration_ms: None,
        size_hint: Some(payload_bytes),
    };
    for i in 0..blocks {
        let load = g
            .add_task(format!("load-{i}"), k("tsqr_load", tsqr_load), &[], hint.clone())
            .expect("fresh names");
        constants.insert(load, vec![encode_i64(i as i64), encode_i64(payload_bytes as i64)]);
        if blocks == 1 {
            return Ok((g, constants));
        }
        let qr = g
            .add_task(format!("qr-{i}"), k("tsqr_qr", tsqr_qr), &[load], hint.clone())
            .expect("fresh names");
        qs.push(
            g.add_task(format!("q-{i}"), k("tsqr_q", tsqr_q), &[qr], hint.clone())
                .expect("fresh names"),
        );
        rs.push(
            g.add_task(format!("r-{i}"), k("tsqr_r", tsqr_r), &[qr], TaskHints::default())
                .expect("fresh names"),
        );
    }
    let mut level = rs;
    let mut depth = 1;
    while level.len() > 1 {
        let last = level.len() == 2;
        level = level
            .chunks(2)
            .enumerate()
            .map(|(i, pair)| {
                let name = if last { "root".to_string() } else { format!("reduce-{depth}-{i}") };
                g.add_task(name, k("tsqr_reduce", tsqr_reduce), pair, TaskHints::default())
                    .expect("fresh names")
            })
            .collect();
        depth += 1;
    }
    let root = level[0];
    for (i, q) in qs.into_iter().enumerate() {
        g.add_task(format!("apply-{i}"), k("tsqr_apply", tsqr_apply), &[q, root], hint.clone())
            .expect("fresh names");
    }
    Ok((g, constants))
}

/// T1 fans out to T2 and T3, both feed T4, and T4 plus leaf T6 feed T5.
pub fn example6() -> TaskGraph {
    example6_with_inputs().0
}

fn example6_with_inputs() -> (TaskGraph, Constants) {
    let concat = NamedKernel::new("concat", kernel::concat);
    let mut g = TaskGraph::new();
    let add = |g: &mut TaskGraph, name: &str, deps: &[&str]| {
        g.add_task_named(name, concat.clone(), deps, TaskHints::default())
            .expect("fresh names")
    };
    let t1 = add(&mut g, "T1", &[]);
    add(&mut g, "T2", &["T1"]);
    add(&mut g, "T3", &["T1"]);
    add(&mut g, "T4", &["T2", "T3"]);
    let t6 = add(&mut g, "T6", &[]);
    add(&mut g, "T5", &["T4", "T6"]);
    let constants = Constants::from([
        (t1, vec![Bytes::from_static(b"one;")]),
        (t6, vec![Bytes::from_static(b"six;")]),
    ]);
    (g, constants)
}
