//! Binary checkpoint: magic `MFSR`, `u16` version, a named parameter table
//! (name, shape, f32 data), optional Adam state and named per-channel
//! affines. All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::adam::{Adam, AdamConfig};
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MFSR";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedAffine {
    pub name: String,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub names: Vec<String>,
    pub params: Vec<Tensor<f32>>,
    pub optimizer: Option<Adam<f32>>,
    pub norms: Vec<NamedAffine>,
}

impl Checkpoint {
    pub fn param(&self, name: &str) -> Option<&Tensor<f32>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn norm(&self, name: &str) -> Option<&NamedAffine> {
        self.norms.iter().find(|n| n.name == name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut b, self.params.len());
        for (name, t) in self.names.iter().zip(&self.params) {
            put_str(&mut b, name);
            put_u32(&mut b, t.shape.len());
            for &d in &t.shape {
                put_u32(&mut b, d);
            }
            put_f32s(&mut b, &t.data);
        }
        match &self.optimizer {
            None => b.push(0),
            Some(opt) => {
                b.push(1);
                b.extend_from_slice(&opt.t.to_le_bytes());
                for x in [opt.cfg.beta1, opt.cfg.beta2, opt.cfg.eps] {
                    b.extend_from_slice(&x.to_le_bytes());
                }
                for (m, v) in opt.m.iter().zip(&opt.v) {
                    put_f32s(&mut b, m);
                    put_f32s(&mut b, v);
                }
            }
        }
        put_u32(&mut b, self.norms.len());
        for n in &self.norms {
            put_str(&mut b, &n.name);
            put_u32(&mut b, n.min.len());
            for &x in n.min.iter().chain(&n.max) {
                b.extend_from_slice(&x.to_le_bytes());
            }
        }
        b
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(TensorError::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(TensorError::Format(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut names = Vec::with_capacity(count);
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            names.push(r.string()?);
            let ndim = r.u32()?;
            let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().product();
            params.push(Tensor { shape, data: r.f32s(n)? });
        }
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let t = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
                let cfg = AdamConfig {
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let mut m = Vec::with_capacity(count);
                let mut v = Vec::with_capacity(count);
                for p in &params {
                    m.push(r.f32s(p.len())?);
                    v.push(r.f32s(p.len())?);
                }
                Some(Adam { cfg, t, m, v })
            }
            x => return Err(TensorError::Format(format!("bad optimizer flag {x}"))),
        };
        let nn = r.u32()?;
        let mut norms = Vec::with_capacity(nn);
        for _ in 0..nn {
            let name = r.string()?;
            let c = r.u32()?;
            let min = (0..c).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let max = (0..c).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            norms.push(NamedAffine { name, min, max });
        }
        if r.pos != buf.len() {
            return Err(TensorError::Format(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint {
            names,
            params,
            optimizer,
            norms,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|source| TensorError::Io {
            path: path.into(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|source| TensorError::Io {
            path: path.into(),
            source,
        })?;
        Self::decode(&buf)
    }
}

fn put_u32(b: &mut Vec<u8>, x: usize) {
    b.extend_from_slice(&(x as u32).to_le_bytes());
}

fn put_str(b: &mut Vec<u8>, s: &str) {
    put_u32(b, s.len());
    b.extend_from_slice(s.as_bytes());
}

fn put_f32s(b: &mut Vec<u8>, xs: &[f32]) {
    for x in xs {
        b.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(TensorError::Format(format!("truncated at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| TensorError::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| TensorError::Format("name is not UTF-8".into()))
    }
}
