//! Versioned binary file of named tensors, shared by network weights and rigs.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "ESNT" | u32 version | u32 kind length | kind
//! u32 entry count | (u32 key length | key | u32 value length | value)*
//! u32 tensor count | (u32 name length | name | u8 dtype | u32 rank | u64 dims[rank] | payload)*
//! SHA-256 of everything above
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{DType, Real, Tensor};

const MAGIC: &[u8; 4] = b"ESNT";
pub const FORMAT_VERSION: u32 = 1;

/// Payload of one stored tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U32 { shape: Vec<usize>, data: Vec<u32> },
}

impl Payload {
    pub fn shape(&self) -> &[usize] {
        match self {
            Payload::F32(t) => t.shape(),
            Payload::F64(t) => t.shape(),
            Payload::U32 { shape, .. } => shape,
        }
    }

    fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::F64(_) => DType::F64,
            Payload::U32 { .. } => DType::U32,
        }
    }
}

/// In-memory form of a container file; entries keep their insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub config: Vec<(String, String)>,
    pub tensors: Vec<(String, Payload)>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Container {
            kind: kind.to_string(),
            config: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    pub fn push_real<T: Real>(&mut self, name: &str, t: &Tensor<T>) {
        let payload = match T::DTYPE {
            DType::F32 => Payload::F32(t.cast()),
            _ => Payload::F64(t.cast()),
        };
        self.tensors.push((name.to_string(), payload));
    }

    pub fn push_u32(&mut self, name: &str, shape: &[usize], data: Vec<u32>) {
        self.tensors.push((
            name.to_string(),
            Payload::U32 {
                shape: shape.to_vec(),
                data,
            },
        ));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("container has no `{key}` entry")))
    }

    pub fn parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("container entry `{key}` = `{raw}` is malformed")))
    }

    pub fn payload(&self, name: &str) -> Result<&Payload> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Config(format!("container has no tensor `{name}`")))
    }

    /// Tensor converted to `T` whatever its stored precision.
    pub fn real<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        match self.payload(name)? {
            Payload::F32(t) => Ok(t.cast()),
            Payload::F64(t) => Ok(t.cast()),
            Payload::U32 { .. } => Err(Error::Config(format!("tensor `{name}` is not real-valued"))),
        }
    }

    pub fn u32s(&self, name: &str) -> Result<(&[usize], &[u32])> {
        match self.payload(name)? {
            Payload::U32 { shape, data } => Ok((shape, data)),
            _ => Err(Error::Config(format!("tensor `{name}` is not integer-valued"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        for (k, v) in &self.config {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, p) in &self.tensors {
            put_str(&mut out, name);
            out.push(p.dtype().code());
            out.extend_from_slice(&(p.shape().len() as u32).to_le_bytes());
            for &d in p.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match p {
                Payload::F32(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
                Payload::F64(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
                Payload::U32 { data, .. } => {
                    data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()))
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let bad = |detail: &str| Error::Container {
            path: origin.to_string(),
            detail: detail.to_string(),
        };
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..4] != MAGIC {
            return Err(bad("not a tensor container (bad magic)"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Reader {
            buf: body,
            pos: 4,
            origin,
        };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let kind = r.string()?;
        let mut config = Vec::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            config.push((k, v));
        }
        let mut tensors = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let code = r.take(1)?[0];
            let dtype = DType::from_code(code).ok_or_else(|| bad(&format!("unknown dtype {code}")))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n > 0)
                .ok_or_else(|| bad(&format!("tensor `{name}` has invalid shape {shape:?}")))?;
            let raw = r.take(n.checked_mul(dtype.size()).ok_or_else(|| bad("tensor too large"))?)?;
            let payload = match dtype {
                DType::F32 => Payload::F32(Tensor::new(&shape, raw.chunks(4).map(f32::read_le).collect())?),
                DType::F64 => Payload::F64(Tensor::new(&shape, raw.chunks(8).map(f64::read_le).collect())?),
                DType::U32 => Payload::U32 {
                    shape,
                    data: raw
                        .chunks(4)
                        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                },
            };
            tensors.push((name, payload));
        }
        if r.pos != body.len() {
            return Err(bad("trailing bytes after last tensor"));
        }
        Ok(Container {
            kind,
            config,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Container {
                path: self.origin.to_string(),
                detail: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Container {
            path: self.origin.to_string(),
            detail: "invalid UTF-8 in name".into(),
        })
    }
}
