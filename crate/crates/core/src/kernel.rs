//! Task kernels and the by-name registry used by graph import.
//!
//! A kernel receives its inputs as an ordered slice: the constants bound to
//! the task first, then one entry per dependency in declaration order.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use bytes::{BufMut, Bytes, BytesMut};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct KernelError(pub String);

impl KernelError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

pub trait Kernel: Send + Sync {
    fn call(&self, inputs: &[Bytes]) -> Result<Bytes, KernelError>;
}

impl<F> Kernel for F
where
    F: Fn(&[Bytes]) -> Result<Bytes, KernelError> + Send + Sync,
{
    fn call(&self, inputs: &[Bytes]) -> Result<Bytes, KernelError> {
        self(inputs)
    }
}

/// A kernel together with the name it is registered under.
#[derive(Clone)]
pub struct NamedKernel {
    pub name: String,
    pub kernel: Arc<dyn Kernel>,
}

impl NamedKernel {
    pub fn new(name: impl Into<String>, kernel: impl Kernel + 'static) -> Self {
        Self {
            name: name.into(),
            kernel: Arc::new(kernel),
        }
    }
}

impl fmt::Debug for NamedKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("NamedKernel").field(&self.name).finish()
    }
}

#[derive(Clone, Default)]
pub struct KernelRegistry {
    kernels: BTreeMap<String, NamedKernel>,
}

impl KernelRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry preloaded with every kernel the bundled workloads use.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(NamedKernel::new("add", add));
        reg.register(NamedKernel::new("noop", noop));
        reg.register(NamedKernel::new("step", step));
        reg.register(NamedKernel::new("concat", concat));
        reg.register(NamedKernel::new("matmul_block", crate::workloads::matmul_block));
        reg.register(NamedKernel::new("block_sum", crate::workloads::block_sum));
        reg.register(NamedKernel::new("tsqr_load", crate::workloads::tsqr_load));
        reg.register(NamedKernel::new("tsqr_qr", crate::workloads::tsqr_qr));
        reg.register(NamedKernel::new("tsqr_q", crate::workloads::tsqr_q));
        reg.register(NamedKernel::new("tsqr_r", crate::workloads::tsqr_r));
        reg.register(NamedKernel::new("tsqr_reduce", crate::workloads::tsqr_reduce));
        reg.register(NamedKernel::new("tsqr_apply", crate::workloads::tsqr_apply));
        reg
    }

    pub fn register(&mut self, kernel: NamedKernel) {
        self.kernels.insert(kernel.name.clone(), kernel);
    }

    pub fn get(&self, name: &str) -> Option<&NamedKernel> {
        self.kernels.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.kernels.keys().map(String::as_str)
    }
}

pub fn encode_i64(v: i64) -> Bytes {
    Bytes::copy_from_slice(&v.to_le_bytes())
}

pub fn decode_i64(b: &[u8]) -> Result<i64, KernelError> {
    let arr: [u8; 8] = b
        .try_into()
        .map_err(|_| KernelError::new(format!("expected 8-byte integer, got {} bytes", b.len())))?;
    Ok(i64::from_le_bytes(arr))
}

/// Sums every input interpreted as a little-endian i64.
pub fn add(inputs: &[Bytes]) -> Result<Bytes, KernelError> {
    let mut acc: i64 = 0;
    for b in inputs {
        acc = acc.wrapping_add(decode_i64(b)?);
    }
    Ok(encode_i64(acc))
}

/// Returns an empty payload.
pub fn noop(_inputs: &[Bytes]) -> Result<Bytes, KernelError> {
    Ok(Bytes::new())
}

/// Adds one to the sum of its inputs; used to chain sleep tasks verifiably.
pub fn step(inputs: &[Bytes]) -> Result<Bytes, KernelError> {
    let sum = decode_i64(&add(inputs)?)?;
    Ok(encode_i64(sum.wrapping_add(1)))
}

pub fn concat(inputs: &[Bytes]) -> Result<Bytes, KernelError> {
    let total = inputs.iter().map(Bytes::len).sum();
    let mut out = BytesMut::with_capacity(total);
    for b in inputs {
        out.put_slice(b);
    }
    Ok(out.freeze())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_sums_integers() {
        let out = add(&[encode_i64(3), encode_i64(4)]).unwrap();
        assert_eq!(decode_i64(&out).unwrap(), 7);
    }

    #[test]
    fn add_rejects_bad_width() {
        assert!(add(&[Bytes::from_static(b"abc")]).is_err());
    }

    #[test]
    fn builtin_registry_resolves_names() {
        let reg = KernelRegistry::builtin();
        assert!(reg.get("add").is_some());
        assert!(reg.get("tsqr_apply").is_some());
        assert!(reg.get("missing").is_none());
    }
}
