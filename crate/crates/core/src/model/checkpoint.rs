//! Binary model checkpoints.
//!
//! Layout (all integers `u64` and floats `f64`, little-endian):
//!
//! ```text
//! magic        "UQEVAL-MODEL-v1\n"
//! n_dims       then n_dims layer widths
//! dropout_rate
//! seed
//! n_params     then n_params weights (per layer: row-major matrix, then bias)
//! anchored     u8 flag; when 1, n_params anchor values follow
//! ```

use std::path::Path;

use super::HeteroModel;
use crate::error::{Result, UqError};
use crate::io::write_atomic;

pub const CHECKPOINT_MAGIC: &str = "UQEVAL-MODEL-v1";

impl HeteroModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 16 * self.num_params());
        out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
        out.push(b'\n');
        put_u64(&mut out, self.layer_dims().len() as u64);
        for &d in self.layer_dims() {
            put_u64(&mut out, d as u64);
        }
        out.extend_from_slice(&self.dropout_rate().to_le_bytes());
        put_u64(&mut out, self.seed());
        put_u64(&mut out, self.num_params() as u64);
        for p in self.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        match self.anchor() {
            Some(a) => {
                out.push(1);
                for v in a {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            None => out.push(0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, source };
        let magic = r.take(CHECKPOINT_MAGIC.len() + 1)?;
        if &magic[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC.as_bytes() || magic[CHECKPOINT_MAGIC.len()] != b'\n' {
            return Err(UqError::Format {
                path: source.to_path_buf(),
                expected: CHECKPOINT_MAGIC.into(),
                found: String::from_utf8_lossy(magic).trim_end().to_string(),
            });
        }
        let n_dims = r.len_field(64)?;
        let dims = (0..n_dims)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let dropout = r.f64()?;
        let seed = r.u64()?;
        let n_params = r.len_field(bytes.len() / 8)?;
        let params = r.f64s(n_params)?;
        let anchor = match r.take(1)?[0] {
            0 => None,
            1 => Some(r.f64s(n_params)?),
            other => return Err(r.corrupt(&format!("anchor flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(r.corrupt("trailing bytes"));
        }
        HeteroModel::from_parts(dims, dropout, seed, params, anchor)
    }
}

pub fn write_checkpoint(model: &HeteroModel, path: &Path) -> Result<()> {
    write_atomic(path, &model.to_bytes())
}

pub fn read_checkpoint(path: &Path) -> Result<HeteroModel> {
    let bytes = std::fs::read(path)?;
    HeteroModel::from_bytes(&bytes, path)
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, what: &str) -> UqError {
        UqError::Format {
            path: self.source.to_path_buf(),
            expected: CHECKPOINT_MAGIC.into(),
            found: format!("corrupt checkpoint ({what} at byte {})", self.pos),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt("truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len_field(&mut self, max: usize) -> Result<usize> {
        let n = self.u64()?;
        if n as usize > max {
            return Err(self.corrupt("length field"));
        }
        Ok(n as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
