//! Versioned binary container for checkpoints, prompt libraries and
//! hypernetwork weights.
//!
//! Layout (little-endian): `"CPTRD"`, format version `u32`, kind `u8`, the
//! model config (six `u32` fields, injection `u8`, head `u8`), a JSON
//! metadata block (`u32` length + bytes), a `u32` tensor count, then per
//! tensor: name (`u16` length + bytes), dtype `u8`, rank `u8`, `u32` dims and
//! the values.

use std::path::Path;

use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::model::{HeadMode, InjectionMode, ModelConfig};

pub const MAGIC: &[u8; 5] = b"CPTRD";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Backbone = 1,
    PromptLibrary = 2,
    Tphnet = 3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn from_mat(name: impl Into<String>, m: &Mat, dtype: DType) -> Self {
        Self {
            name: name.into(),
            dtype,
            dims: vec![m.nrows(), m.ncols()],
            data: m.iter().copied().collect(),
        }
    }

    pub fn from_vec(name: impl Into<String>, v: &[f64], dtype: DType) -> Self {
        Self {
            name: name.into(),
            dtype,
            dims: vec![v.len()],
            data: v.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: Kind,
    pub config: ModelConfig,
    pub meta: serde_json::Value,
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind as u8);
        let c = &self.config;
        for v in [c.vocab_size, c.hidden, c.layers, c.heads, c.prompt_len, c.max_seq] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(match c.injection {
            InjectionMode::Shallow => 0,
            InjectionMode::Deep => 1,
        });
        out.push(match c.head {
            HeadMode::Verbalizer => 0,
            HeadMode::Cls => 1,
        });
        let meta = serde_json::to_vec(&self.meta).expect("json value serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.dtype as u8);
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                match t.dtype {
                    DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                    DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(r.fail(0, "bad magic"));
        }
        let at = r.pos;
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.fail(at, &format!("unsupported format version {version}")));
        }
        let at = r.pos;
        let kind = match r.u8()? {
            1 => Kind::Backbone,
            2 => Kind::PromptLibrary,
            3 => Kind::Tphnet,
            k => return Err(r.fail(at, &format!("unknown kind {k}"))),
        };
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let at = r.pos;
        let injection = match r.u8()? {
            0 => InjectionMode::Shallow,
            1 => InjectionMode::Deep,
            v => return Err(r.fail(at, &format!("unknown injection mode {v}"))),
        };
        let at = r.pos;
        let head = match r.u8()? {
            0 => HeadMode::Verbalizer,
            1 => HeadMode::Cls,
            v => return Err(r.fail(at, &format!("unknown head mode {v}"))),
        };
        let config = ModelConfig {
            vocab_size: dims[0],
            hidden: dims[1],
            layers: dims[2],
            heads: dims[3],
            prompt_len: dims[4],
            max_seq: dims[5],
            injection,
            head,
        };
        let at = r.pos;
        config.validate().map_err(|e| r.fail(at, &e.to_string()))?;
        let len = r.u32()? as usize;
        let at = r.pos;
        let meta = serde_json::from_slice(r.take(len)?)
            .map_err(|e| r.fail(at, &format!("metadata: {e}")))?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let len = r.u16()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| r.fail(at, "tensor name is not UTF-8"))?
                .to_string();
            let at = r.pos;
            let dtype = match r.u8()? {
                0 => DType::F32,
                1 => DType::F64,
                v => return Err(r.fail(at, &format!("unknown dtype {v}"))),
            };
            let rank = r.u8()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32()? as usize);
            }
            let count: usize = dims.iter().product();
            let width = match dtype {
                DType::F32 => 4,
                DType::F64 => 8,
            };
            let at = r.pos;
            let raw = r.take(count.checked_mul(width).ok_or_else(|| r.fail(at, "tensor too large"))?)?;
            let data: Vec<f64> = match dtype {
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            };
            tensors.push(Tensor {
                name,
                dtype,
                dims,
                data,
            });
        }
        if r.pos != bytes.len() {
            return Err(r.fail(r.pos, "trailing bytes"));
        }
        Ok(Self {
            kind,
            config,
            meta,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn expect_kind(&self, kind: Kind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Container {
                offset: MAGIC.len() + 4,
                msg: format!("expected a {kind:?} container, found {:?}", self.kind),
            });
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Shape(format!("container has no tensor {name}")))
    }

    /// Tensor `name` as a matrix of the given shape.
    pub fn mat(&self, name: &str, shape: (usize, usize)) -> Result<Mat> {
        let t = self.tensor(name)?;
        if t.dims != [shape.0, shape.1] {
            return Err(Error::Shape(format!(
                "tensor {name} has dims {:?}, expected {shape:?}",
                t.dims
            )));
        }
        Ok(Mat::from_shape_vec(shape, t.data.clone()).expect("dims checked"))
    }

    pub fn vector(&self, name: &str, len: usize) -> Result<Vec<f64>> {
        let t = self.tensor(name)?;
        if t.dims != [len] {
            return Err(Error::Shape(format!(
                "tensor {name} has dims {:?}, expected [{len}]",
                t.dims
            )));
        }
        Ok(t.data.clone())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: usize, msg: &str) -> Error {
        Error::Container {
            offset,
            msg: msg.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(self.pos, &format!("unexpected end of data, wanted {n} bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
