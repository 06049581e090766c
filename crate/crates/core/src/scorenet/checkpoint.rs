//! Versioned binary checkpoint.
//!
//! Layout (little endian): magic `AVGC`, `u32` version, `u32` metadata
//! length, metadata JSON (shape, SDE parameters, conditioning mode, config
//! hash, optimizer step), `u64` parameter count, `f32` parameters, `u8`
//! moment flag, then the first and second `f32` optimizer moments.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ScoreNetParams, ScoreNetShape};
use crate::conditioner::ConditioningMode;
use crate::error::{Error, Result};
use crate::sde::SdeParams;

pub const CKPT_MAGIC: &[u8; 4] = b"AVGC";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ScoreNetParams,
    pub sde: SdeParams,
    pub mode: ConditioningMode,
    pub config_hash: String,
    /// Optimizer steps taken.
    pub step: u64,
    /// First and second Adam moments, flat like [`ScoreNetParams::to_flat`].
    pub moments: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    shape: ScoreNetShape,
    sde: SdeParams,
    mode: ConditioningMode,
    config_hash: String,
    step: u64,
}

fn push_f32s(buf: &mut Vec<u8>, v: &[f64]) {
    for &x in v {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

impl Checkpoint {
    /// Parameters and moments must be representable in `f32` for the reload
    /// to be exact; the optimizer keeps them so.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&Meta {
            shape: self.params.shape.clone(),
            sde: self.sde,
            mode: self.mode,
            config_hash: self.config_hash.clone(),
            step: self.step,
        })?;
        let flat = self.params.to_flat();
        let mut buf = Vec::with_capacity(32 + meta.len() + 12 * flat.len());
        buf.extend_from_slice(CKPT_MAGIC);
        buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        buf.extend_from_slice(&meta);
        buf.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        push_f32s(&mut buf, &flat);
        match &self.moments {
            Some((m, v)) => {
                if m.len() != flat.len() || v.len() != flat.len() {
                    return Err(Error::shape("optimizer moments do not match parameters"));
                }
                buf.push(1);
                push_f32s(&mut buf, m);
                push_f32s(&mut buf, v);
            }
            None => buf.push(0),
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != CKPT_MAGIC {
            return Err(Error::format(path, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let meta_len = r.u32()? as usize;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::format(path, format!("bad metadata: {e}")))?;
        meta.shape
            .validate()
            .map_err(|e| Error::format(path, e.to_string()))?;
        meta.sde
            .validate()
            .map_err(|e| Error::format(path, e.to_string()))?;
        let mut params = ScoreNetParams::zeros(&meta.shape)?;
        let n = r.u64()? as usize;
        if n != params.param_count() {
            return Err(Error::format(
                path,
                format!("{n} parameters stored, shape needs {}", params.param_count()),
            ));
        }
        params.set_flat(&r.f32s(n)?)?;
        let moments = match r.take(1)?[0] {
            0 => None,
            1 => Some((r.f32s(n)?, r.f32s(n)?)),
            other => return Err(Error::format(path, format!("bad moment flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after checkpoint"));
        }
        Ok(Self {
            params,
            sde: meta.sde,
            mode: meta.mode,
            config_hash: meta.config_hash,
            step: meta.step,
            moments,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.path, "truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::format(self.path, "parameter count overflows"))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_to_f32(p: &mut ScoreNetParams) {
        let flat: Vec<f64> = p.to_flat().iter().map(|&x| x as f32 as f64).collect();
        p.set_flat(&flat).unwrap();
    }

    fn sample() -> Checkpoint {
        let shape = ScoreNetShape {
            channels: vec![4, 8],
            factors: vec![1, 2],
            time_embed_dim: 4,
            cond_layers: 3,
            cond_dim: 5,
            mid_block: false,
            output: crate::scorenet::OutputParam::Mean,
        };
        let mut params = ScoreNetParams::init(&shape, 9).unwrap();
        round_to_f32(&mut params);
        let n = params.param_count();
        Checkpoint {
            params,
            sde: SdeParams::default(),
            mode: ConditioningMode::ShuffledEmb,
            config_hash: "abc".into(),
            step: 17,
            moments: Some((vec![0.25; n], vec![0.5; n])),
        }
    }

    #[test]
    fn reload_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = sample();
        write_checkpoint(&path, &c).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), c.to_bytes().unwrap());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        let p = Path::new("x");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad, p).unwrap_err().is_io());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(Checkpoint::from_bytes(&bad, p).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], p).is_err());
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(Checkpoint::from_bytes(&bad, p).is_err());
    }
}
