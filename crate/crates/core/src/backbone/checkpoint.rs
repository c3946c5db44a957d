use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::diff::{ParamSet, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GPCKPT01";

/// Binary container for named tensors: a magic header, a tag string, a
/// string-to-string metadata map, and length-prefixed tensors with
/// little-endian f64 payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tag: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: ParamSet,
}

impl Checkpoint {
    pub fn new(tag: impl Into<String>, tensors: ParamSet) -> Self {
        Checkpoint {
            tag: tag.into(),
            meta: BTreeMap::new(),
            tensors,
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn meta_parsed<T: std::str::FromStr>(&self, key: &str, path: &str) -> Result<T> {
        self.meta
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::BadCheckpoint {
                path: path.into(),
                msg: format!("missing or malformed meta key '{key}'"),
            })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        write_string(&mut out, &self.tag);
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            write_string(&mut out, k);
            write_string(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in self.tensors.iter() {
            write_string(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &dim in t.shape() {
                out.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let bad = |msg: &str| Error::BadCheckpoint {
            path: path.into(),
            msg: msg.into(),
        };
        let mut cur = bytes;
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let tag = read_string(&mut cur).ok_or_else(|| bad("truncated tag"))?;
        let meta_count = read_u32(&mut cur).ok_or_else(|| bad("truncated meta count"))?;
        let mut meta = BTreeMap::new();
        for _ in 0..meta_count {
            let k = read_string(&mut cur).ok_or_else(|| bad("truncated meta key"))?;
            let v = read_string(&mut cur).ok_or_else(|| bad("truncated meta value"))?;
            meta.insert(k, v);
        }
        let tensor_count = read_u32(&mut cur).ok_or_else(|| bad("truncated tensor count"))?;
        let mut tensors = ParamSet::new();
        for _ in 0..tensor_count {
            let name = read_string(&mut cur).ok_or_else(|| bad("truncated tensor name"))?;
            let rank = read_u32(&mut cur).ok_or_else(|| bad("truncated rank"))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut cur).ok_or_else(|| bad("truncated dims"))? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                let mut buf = [0u8; 8];
                cur.read_exact(&mut buf).map_err(|_| bad("truncated data"))?;
                data.push(f64::from_le_bytes(buf));
            }
            tensors
                .insert(name, Tensor::new(shape, data)?)
                .map_err(|e| bad(&e.to_string()))?;
        }
        Ok(Checkpoint { tag, meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

fn write_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn read_u32(cur: &mut &[u8]) -> Option<u32> {
    let mut buf = [0u8; 4];
    cur.read_exact(&mut buf).ok()?;
    Some(u32::from_le_bytes(buf))
}

fn read_u64(cur: &mut &[u8]) -> Option<u64> {
    let mut buf = [0u8; 8];
    cur.read_exact(&mut buf).ok()?;
    Some(u64::from_le_bytes(buf))
}

fn read_string(cur: &mut &[u8]) -> Option<String> {
    let len = read_u32(cur)? as usize;
    let mut buf = vec![0u8; len];
    cur.read_exact(&mut buf).ok()?;
    String::from_utf8(buf).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn round_trip_preserves_everything() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut ps = ParamSet::new();
        ps.insert("enc.w1", Tensor::uniform(vec![4, 3], 1.0, &mut rng)).unwrap();
        ps.insert("enc.w2", Tensor::uniform(vec![3, 3], 1.0, &mut rng)).unwrap();
        let ckpt = Checkpoint::new("backbone", ps)
            .with_meta("kind", "gcn")
            .with_meta("d", "4")
            .with_meta("h", "3")
            .with_meta("seed", "0");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt, loaded);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"not a checkpoint", "mem").is_err());
    }
}
