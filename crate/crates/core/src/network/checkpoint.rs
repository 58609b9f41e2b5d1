use std::io::{Read, Write};
use std::path::Path;

use super::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::params::{NamedTensor, ParamStore};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"GELATTO\0";
const VERSION: u32 = 1;

/// Self-describing model file: configuration text, parameters, batch-norm
/// buffers and (optionally) optimizer state. All numbers little-endian.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Free-form configuration record, TOML by convention.
    pub config: String,
    pub params: Vec<NamedTensor>,
    pub buffers: Vec<NamedTensor>,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn capture(config: String, store: &ParamStore, optimizer: Option<&Adam>) -> Self {
        Self {
            config,
            params: store.params().to_vec(),
            buffers: store.buffers().to_vec(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        store.load_named(&self.params, &self.buffers)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_str(&mut out, &self.config);
        for group in [&self.params, &self.buffers] {
            put_u64(&mut out, group.len() as u64);
            for t in group.iter() {
                put_str(&mut out, &t.name);
                put_tensor(&mut out, &t.value);
            }
        }
        match &self.optimizer {
            None => out.push(0),
            Some(adam) => {
                out.push(1);
                for v in [adam.config.lr, adam.config.beta1, adam.config.beta2, adam.config.eps] {
                    put_f64s(&mut out, &[v]);
                }
                put_u64(&mut out, adam.step);
                put_u64(&mut out, adam.m.len() as u64);
                for (m, v) in adam.m.iter().zip(&adam.v) {
                    put_u64(&mut out, m.len() as u64);
                    put_f64s(&mut out, m);
                    put_f64s(&mut out, v);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let config = r.string()?;
        let mut groups = Vec::new();
        for _ in 0..2 {
            let n = r.len()?;
            let mut group = Vec::with_capacity(n);
            for _ in 0..n {
                let name = r.string()?;
                let value = r.tensor()?;
                group.push(NamedTensor { name, value });
            }
            groups.push(group);
        }
        let buffers = groups.pop().unwrap();
        let params = groups.pop().unwrap();
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let config = AdamConfig { lr: r.f64()?, beta1: r.f64()?, beta2: r.f64()?, eps: r.f64()? };
                let step = r.u64()?;
                let n = r.len()?;
                let (mut m, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
                for _ in 0..n {
                    let len = r.len()?;
                    m.push(r.f64s(len)?);
                    v.push(r.f64s(len)?);
                }
                Some(Adam { config, step, m, v })
            }
            other => return Err(Error::Checkpoint(format!("bad optimizer tag {other}"))),
        };
        if r.at != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
        }
        Ok(Self { config, params, buffers, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        put_u64(out, d as u64);
    }
    put_f64s(out, t.data());
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// A length that must fit in the remaining input.
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        if n > (self.bytes.len() - self.at) as u64 {
            return Err(Error::Checkpoint(format!("length {n} exceeds file size")));
        }
        Ok(n as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.len()).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::Checkpoint("tensor size overflow".into()))?;
        Tensor::new(shape, self.f64s(n)?)
    }
}
