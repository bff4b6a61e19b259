//! Binary parameter checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "CIBRCKPT"
//! version      u32      = 1
//! n_entries    u32
//! per entry:
//!   name_len   u32, name (UTF-8)
//!   n_dims     u32, dims (u64 each)
//!   seed       u64
//!   tensors    f64 row-major, W0 b0 W1 b1 ... in layer order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::mlp::{MlpParams, MlpSpec};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"CIBRCKPT";
pub const VERSION: u32 = 1;

/// Named MLPs stored together, e.g. both encoders of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub entries: Vec<(String, MlpParams<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn get(&self, name: &str) -> Option<&MlpParams<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, p) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(p.spec.layer_dims.len() as u32).to_le_bytes());
            for &d in &p.spec.layer_dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&p.seed.to_le_bytes());
            for t in p.tensors() {
                for x in t.data() {
                    out.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let r = &mut bytes;
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n = read_u32(r)?;
        let mut entries = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let len = read_u32(r)? as usize;
            if len > r.len() {
                return Err(Error::Checkpoint("truncated name".into()));
            }
            let mut name = vec![0u8; len];
            read_exact(r, &mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let n_dims = read_u32(r)? as usize;
            if n_dims > r.len() / 8 {
                return Err(Error::Checkpoint("truncated dims".into()));
            }
            let dims = (0..n_dims).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let spec = MlpSpec::new(dims).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let seed = read_u64(r)?;
            let mut p = MlpParams::<T>::zeros(&spec)?;
            p.seed = seed;
            for t in p.tensors_mut() {
                let (rows, cols) = t.shape();
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows * cols {
                    data.push(T::of(f64::from_bits(read_u64(r)?)));
                }
                *t = Tensor::new(rows, cols, data)?;
            }
            entries.push((name, p));
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Checkpoint { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Checkpoint("unexpected end of file".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
