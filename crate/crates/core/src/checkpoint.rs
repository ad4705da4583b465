//! Binary checkpoint for [`EnergyModel`].
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! magic       8 bytes  "NEBENRGY"
//! version     u32      1
//! input_dim   u32
//! n_hidden    u32
//! hidden      u32 x n_hidden
//! sigma_train f64      0.0 when untrained
//! n_params    u64
//! params      f64 x n_params
//! ```

use std::fs;
use std::path::Path;

use crate::diff::Trainable;
use crate::error::{Error, Result};
use crate::model::{ArchSpec, EnergyModel};

pub const MAGIC: [u8; 8] = *b"NEBENRGY";
pub const VERSION: u32 = 1;

pub fn to_bytes(model: &EnergyModel) -> Vec<u8> {
    let arch = model.arch();
    let params = model.params().values();
    let mut out = Vec::with_capacity(40 + 4 * arch.hidden_sizes.len() + 8 * params.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(arch.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(arch.hidden_sizes.len() as u32).to_le_bytes());
    for &h in &arch.hidden_sizes {
        out.extend_from_slice(&(h as u32).to_le_bytes());
    }
    out.extend_from_slice(&model.sigma_train().unwrap_or(0.0).to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < self.pos + n {
            return Err(Error::Truncated {
                what: "checkpoint",
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<EnergyModel> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(Error::Version {
            what: "checkpoint",
            detail: format!("bad magic {magic:02x?}"),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            what: "checkpoint",
            detail: format!("version {version}, expected {VERSION}"),
        });
    }
    let input_dim = r.u32()? as usize;
    let n_hidden = r.u32()? as usize;
    let hidden = (0..n_hidden)
        .map(|_| r.u32().map(|h| h as usize))
        .collect::<Result<Vec<_>>>()?;
    let arch = ArchSpec::new(input_dim, hidden).map_err(|e| Error::Shape(e.to_string()))?;
    let sigma = r.f64()?;
    let n_params = r.u64()? as usize;
    if n_params != arch.param_count() {
        return Err(Error::Shape(format!(
            "header declares {n_params} parameters, architecture needs {}",
            arch.param_count()
        )));
    }
    let raw = r.take(
        n_params
            .checked_mul(8)
            .ok_or_else(|| Error::Shape("parameter count overflow".into()))?,
    )?;
    if r.pos != bytes.len() {
        return Err(Error::Shape(format!(
            "{} trailing bytes after parameters",
            bytes.len() - r.pos
        )));
    }
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let sigma_train = (sigma != 0.0).then_some(sigma);
    EnergyModel::from_params(arch, values, sigma_train)
}

pub fn save(model: &EnergyModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| Error::file(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<EnergyModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    from_bytes(&bytes)
}
