//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic            8 bytes   "BSDECKPT"
//! version          u32       1
//! spec_hash        32 bytes  SHA-256 of the canonical JSON of the network layout
//! counter          u64       training iterations completed
//! network_count    u32
//! per network:
//!   name_len       u32, then name_len bytes of UTF-8
//!   offset         u64       first index of the network inside Θ
//!   depth L        u32
//!   sizes          (L+1) × u32
//!   batchnorm      L × u8    1 where the input of affine layer l is normalized
//! param_count P    u64
//! Θ                P × f64
//! stats_count S    u32       one entry per normalized layer, in network/layer order
//! per entry:
//!   populated      u8
//!   width m        u32
//!   mean, var      2m × f64
//! optimizer_kind   u8        0 none, 1 sgd, 2 momentum, 3 adam
//! step             u64
//! buffer_count     u32
//! per buffer:      u64 length n, then n × f64
//! ```

use std::io::{Read, Write};

use super::RunningStats;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BSDECKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkEntry {
    pub name: String,
    pub offset: u64,
    pub sizes: Vec<u32>,
    pub batchnorm: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerSnapshot {
    pub kind: u8,
    pub step: u64,
    pub buffers: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec_hash: [u8; 32],
    pub counter: u64,
    pub networks: Vec<NetworkEntry>,
    pub params: Vec<f64>,
    pub running: Vec<RunningStats>,
    pub optimizer: OptimizerSnapshot,
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64s(w: &mut impl Write, v: &[f64]) -> Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn get<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(get(r)?))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(get(r)?))
}

fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    if n > (1 << 32) {
        return Err(Error::Format(format!("implausible array length {n}")));
    }
    (0..n).map(|_| Ok(f64::from_le_bytes(get(r)?))).collect()
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, VERSION)?;
        w.write_all(&self.spec_hash)?;
        put_u64(w, self.counter)?;
        put_u32(w, self.networks.len() as u32)?;
        for n in &self.networks {
            put_u32(w, n.name.len() as u32)?;
            w.write_all(n.name.as_bytes())?;
            put_u64(w, n.offset)?;
            put_u32(w, n.batchnorm.len() as u32)?;
            for &s in &n.sizes {
                put_u32(w, s)?;
            }
            for &b in &n.batchnorm {
                w.write_all(&[b as u8])?;
            }
        }
        put_u64(w, self.params.len() as u64)?;
        put_f64s(w, &self.params)?;
        put_u32(w, self.running.len() as u32)?;
        for s in &self.running {
            w.write_all(&[s.populated as u8])?;
            put_u32(w, s.mean.len() as u32)?;
            put_f64s(w, &s.mean)?;
            put_f64s(w, &s.var)?;
        }
        w.write_all(&[self.optimizer.kind])?;
        put_u64(w, self.optimizer.step)?;
        put_u32(w, self.optimizer.buffers.len() as u32)?;
        for b in &self.optimizer.buffers {
            put_u64(w, b.len() as u64)?;
            put_f64s(w, b)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let magic: [u8; 8] = get(r)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let spec_hash: [u8; 32] = get(r)?;
        let counter = get_u64(r)?;
        let count = get_u32(r)? as usize;
        let mut networks = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = get_u32(r)? as usize;
            if len > 1 << 16 {
                return Err(Error::Format("network name too long".into()));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("network name is not UTF-8".into()))?;
            let offset = get_u64(r)?;
            let depth = get_u32(r)? as usize;
            if depth > 1 << 16 {
                return Err(Error::Format("implausible network depth".into()));
            }
            let sizes = (0..=depth).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
            let batchnorm = (0..depth).map(|_| get::<1>(r).map(|b| b[0] != 0)).collect::<Result<Vec<_>>>()?;
            networks.push(NetworkEntry { name, offset, sizes, batchnorm });
        }
        let p = get_u64(r)? as usize;
        let params = get_f64s(r, p)?;
        let s = get_u32(r)? as usize;
        let mut running = Vec::with_capacity(s.min(1 << 16));
        for _ in 0..s {
            let populated = get::<1>(r)?[0] != 0;
            let m = get_u32(r)? as usize;
            let mean = get_f64s(r, m)?;
            let var = get_f64s(r, m)?;
            running.push(RunningStats { mean, var, populated });
        }
        let kind = get::<1>(r)?[0];
        let step = get_u64(r)?;
        let nb = get_u32(r)? as usize;
        let mut buffers = Vec::with_capacity(nb.min(16));
        for _ in 0..nb {
            let n = get_u64(r)? as usize;
            buffers.push(get_f64s(r, n)?);
        }
        Ok(Self { spec_hash, counter, networks, params, running, optimizer: OptimizerSnapshot { kind, step, buffers } })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to a Vec cannot fail");
        v
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}
