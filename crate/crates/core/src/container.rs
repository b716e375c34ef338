//! Multi-tensor checkpoint container used for model files.
//!
//! Same style as FINF but with several tensors and 64-bit payloads, so a
//! reloaded model is bit-identical to the one that was saved.
//!
//! ```text
//! header:  magic "FINM" | version u32 = 1 | tensor_count u32 | dtype u32 (8 = f64)
//! tensor:  rows u64 | cols u32 | reserved u32 = 0 | rows×cols f64 LE
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"FINM";
pub const MODEL_VERSION: u32 = 1;
const DTYPE_F64: u32 = 8;

/// A named-by-position row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols, "tensor shape mismatch");
        Self { rows, cols, values }
    }

    pub fn row_vector(values: Vec<f64>) -> Self {
        Self::new(1, values.len(), values)
    }
}

pub fn encode(tensors: &[Tensor]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    buf.extend_from_slice(&DTYPE_F64.to_le_bytes());
    for t in tensors {
        let cols = u32::try_from(t.cols).map_err(|_| Error::invalid("tensor cols exceed u32"))?;
        buf.extend_from_slice(&(t.rows as u64).to_le_bytes());
        buf.extend_from_slice(&cols.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        for (index, v) in t.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index });
            }
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let take = |at: usize, n: usize| -> Result<&[u8]> {
        bytes.get(at..at + n).ok_or(Error::Truncated {
            expected: at + n,
            found: bytes.len(),
        })
    };
    let found: [u8; 4] = take(0, 4)?.try_into().unwrap();
    if found != MODEL_MAGIC {
        return Err(Error::BadMagic {
            expected: MODEL_MAGIC,
            found,
        });
    }
    let u32_at = |at| -> Result<u32> { Ok(u32::from_le_bytes(take(at, 4)?.try_into().unwrap())) };
    let version = u32_at(4)?;
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = u32_at(8)? as usize;
    if u32_at(12)? != DTYPE_F64 {
        return Err(Error::Format("unsupported tensor dtype".into()));
    }
    let mut at = 16;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = u64::from_le_bytes(take(at, 8)?.try_into().unwrap()) as usize;
        let cols = u32_at(at + 8)? as usize;
        at += 16;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("tensor shape overflows".into()))?;
        let payload = take(at, 8 * n)?;
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        at += 8 * n;
        tensors.push(Tensor { rows, cols, values });
    }
    if at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - at)));
    }
    Ok(tensors)
}

pub fn save(tensors: &[Tensor], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(tensors)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
