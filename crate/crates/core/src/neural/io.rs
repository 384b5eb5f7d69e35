//! Model file format.
//!
//! Little-endian throughout:
//!
//! ```text
//! "UNCL"            magic
//! u32               format version
//! u32               levels
//! u32 x levels      channels per level
//! u32               kernel length
//! f64               leaky slope
//! u8                residual output (0 or 1)
//! u64               parameter count
//! f32 x count       parameters in layer declaration order
//! u32               CRC-32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::{ModelParams, ModelSpec, Real};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"UNCL";
pub const MODEL_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

/// Serializes `params` (stored as 32-bit floats).
pub fn write_model<T: Real>(params: &ModelParams<T>) -> Vec<u8> {
    let spec = params.spec();
    let mut out = Vec::with_capacity(64 + 4 * params.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.levels as u32).to_le_bytes());
    for &c in &spec.channels {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    out.extend_from_slice(&(spec.kernel_len as u32).to_le_bytes());
    out.extend_from_slice(&spec.leaky_slope.to_le_bytes());
    out.push(spec.residual_output as u8);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.as_slice() {
        out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| bad("truncated model file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_model(bytes: &[u8]) -> Result<ModelParams<f32>> {
    if bytes.len() < 8 || &bytes[..4] != MODEL_MAGIC {
        return Err(bad("not a model file (bad magic)"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(bad("checksum mismatch"));
    }
    let mut c = Cursor { buf: body, pos: 4 };
    let version = c.u32()?;
    if version != MODEL_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let levels = c.u32()? as usize;
    if levels == 0 || levels > 16 {
        return Err(bad(format!("implausible level count {levels}")));
    }
    let channels = (0..levels)
        .map(|_| c.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let kernel_len = c.u32()? as usize;
    let leaky_slope = c.f64()?;
    let residual_output = match c.take(1)?[0] {
        0 => false,
        1 => true,
        other => return Err(bad(format!("bad residual flag {other}"))),
    };
    let spec = ModelSpec {
        levels,
        channels,
        kernel_len,
        leaky_slope,
        residual_output,
    };
    spec.validate().map_err(|e| bad(e.to_string()))?;
    let count = c.u64()? as usize;
    if count != spec.param_count() {
        return Err(bad(format!(
            "{count} parameters stored, spec needs {}",
            spec.param_count()
        )));
    }
    let raw = c.take(count.checked_mul(4).ok_or_else(|| bad("parameter count overflow"))?)?;
    if c.pos != body.len() {
        return Err(bad("trailing bytes before checksum"));
    }
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    ModelParams::from_raw(&spec, data)
}

pub fn save_model<T: Real>(params: &ModelParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_model(params)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_model(&bytes)
}
