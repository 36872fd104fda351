//! `checkpoint.bin`: the global model plus each vehicle's normalization.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    b"HFLCKPT\0"
//! version  u32 (1)
//! rounds   u32   completed rounds
//! dims     u32 input_size, u32 hidden_size, u32 num_layers
//! params   u64 count, then count x f64
//! vehicles u32 count, then per vehicle:
//!          u32 id length, id bytes (UTF-8), u32 width, width x f64 min, width x f64 max
//! sha256   32 bytes over everything above
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use hfl_core::{ModelDims, ModelParameters, NormStats};
use sha2::{Digest, Sha256};

use crate::error::{Result, SimError};

pub const MAGIC: &[u8; 8] = b"HFLCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub rounds: usize,
    pub model: ModelParameters,
    pub norm_stats: BTreeMap<String, NormStats>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.rounds as u32);
        let dims = self.model.dims();
        for d in [dims.input_size, dims.hidden_size, dims.num_layers] {
            put_u32(&mut out, d as u32);
        }
        out.extend_from_slice(&(self.model.values().len() as u64).to_le_bytes());
        for v in self.model.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_u32(&mut out, self.norm_stats.len() as u32);
        for (id, stats) in &self.norm_stats {
            put_u32(&mut out, id.len() as u32);
            out.extend_from_slice(id.as_bytes());
            put_u32(&mut out, stats.width() as u32);
            for v in stats.min.iter().chain(&stats.max) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err("file too short".into());
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err("checksum mismatch".into());
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let rounds = r.u32()? as usize;
        let dims = ModelDims {
            input_size: r.u32()? as usize,
            hidden_size: r.u32()? as usize,
            num_layers: r.u32()? as usize,
        };
        dims.validate().map_err(|e| e.to_string())?;
        let count = r.u64()? as usize;
        if count != dims.param_count() {
            return Err(format!("{count} parameters stored, dimensions need {}", dims.param_count()));
        }
        let values = r.f64s(count)?;
        let model = ModelParameters::from_values(dims, values).map_err(|e| e.to_string())?;
        let mut norm_stats = BTreeMap::new();
        for _ in 0..r.u32()? {
            let len = r.u32()? as usize;
            let id = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "vehicle id is not UTF-8".to_string())?;
            let width = r.u32()? as usize;
            let min = r.f64s(width)?;
            let max = r.f64s(width)?;
            norm_stats.insert(id, NormStats { min, max });
        }
        if r.pos != body.len() {
            return Err("trailing bytes".into());
        }
        Ok(Checkpoint {
            rounds,
            model,
            norm_stats,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|source| SimError::Write {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| SimError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Checkpoint::from_bytes(&bytes).map_err(|message| SimError::Checkpoint {
            path: path.to_path_buf(),
            message,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("truncated")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let bytes = self.take(n.checked_mul(8).ok_or("truncated")?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let dims = ModelDims::new(11, 8);
        let mut norm_stats = BTreeMap::new();
        norm_stats.insert(
            "SV-1".to_string(),
            NormStats {
                min: vec![-0.0, 1e-300, f64::MIN_POSITIVE],
                max: vec![0.1 + 0.2, 1e300, 42.0],
            },
        );
        Checkpoint {
            rounds: 7,
            model: ModelParameters::init(dims, 99).unwrap(),
            norm_stats,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.model.values()), bits(ck.model.values()));
        assert_eq!(bits(&back.norm_stats["SV-1"].min), bits(&ck.norm_stats["SV-1"].min));
        assert_eq!(back, ck);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes();
        bytes[20] ^= 1;
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap_err(), "checksum mismatch");
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut body = sample().to_bytes();
        body.truncate(body.len() - 32);
        body[0] = b'X';
        let sum = Sha256::digest(&body);
        body.extend_from_slice(&sum);
        assert!(Checkpoint::from_bytes(&body).unwrap_err().contains("magic"));
    }
}
