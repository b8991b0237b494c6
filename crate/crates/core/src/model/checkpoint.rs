//! Portable checkpoint container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "AWN1" | version | config_len | config (UTF-8 key=value lines)
//! | array_count | { name_len | name | rank | dims[rank] | f64 LE data }*
//! ```

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"AWN1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub arrays: Vec<(String, Tensor)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| bad(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated checkpoint: {e}")))?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_string(r: &mut impl Read, limit: usize) -> Result<String> {
    let n = get_u32(r)?;
    if n > limit {
        return Err(bad(format!("string length {n} exceeds {limit}")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| bad(format!("truncated checkpoint: {e}")))?;
    String::from_utf8(buf).map_err(|e| bad(format!("invalid UTF-8: {e}")))
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        put_u32(w, self.config.len())?;
        w.write_all(self.config.as_bytes())?;
        put_u32(w, self.arrays.len())?;
        for (name, t) in &self.arrays {
            put_u32(w, name.len())?;
            w.write_all(name.as_bytes())?;
            put_u32(w, t.rank())?;
            for &d in t.shape() {
                put_u32(w, d)?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("file too short for a checkpoint"))?;
        if &magic != MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let version = get_u32(r)?;
        if version != VERSION as usize {
            return Err(bad(format!("unsupported version {version}")));
        }
        let config = get_string(r, 1 << 20)?;
        let count = get_u32(r)?;
        let mut arrays = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = get_string(r, 4096)?;
            let rank = get_u32(r)?;
            if rank > 8 {
                return Err(bad(format!("array `{name}` has rank {rank}")));
            }
            let dims = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n <= 1 << 28)
                .ok_or_else(|| bad(format!("array `{name}` is too large")))?;
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes).map_err(|e| bad(format!("truncated array `{name}`: {e}")))?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(dims, data).map_err(|e| bad(format!("array `{name}`: {e}")))?;
            arrays.push((name, t));
        }
        Ok(Checkpoint { config, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_roundtrip() {
        let ck = Checkpoint {
            config: "levels=3\n".into(),
            arrays: vec![
                ("a".into(), Tensor::from_fn(&[2, 3], |i| i as f64 * 0.5 - 1.0)),
                ("s".into(), Tensor::scalar(f64::MIN_POSITIVE)),
            ],
        };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"AWN1");
        assert_eq!(Checkpoint::read_from(&mut buf.as_slice()).unwrap(), ck);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(Checkpoint::read_from(&mut &b"NOPE\x01\0\0\0"[..]).is_err());
        let ck = Checkpoint {
            config: String::new(),
            arrays: vec![("a".into(), Tensor::ones(&[4]))],
        };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(Checkpoint::read_from(&mut buf.as_slice()), Err(Error::Checkpoint(_))));
    }
}
