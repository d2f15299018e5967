//! Versioned binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "CCDCKPT\0"  u32 version  u64 step  u32 len + config text (UTF-8)
//! u32 tensor count, then per tensor:
//!   u16 len + name  u8 dtype code  u8 rank  u64 dims[rank]  payload
//! ```
//!
//! Tensor names carry a section prefix: `param/`, `adam.m/` or `adam.v/`.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ccdc_tensor::{DType, ParamStore, Real, Tensor};
use indexmap::IndexMap;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CCDCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const PARAM: &str = "param/";
const FIRST: &str = "adam.m/";
const SECOND: &str = "adam.v/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Optimizer updates applied so far.
    pub step: u64,
    pub params: ParamStore<f32>,
    pub adam_first: IndexMap<String, Tensor<f32>>,
    pub adam_second: IndexMap<String, Tensor<f32>>,
}

fn corrupt(what: impl Into<String>) -> Error {
    Error::Checkpoint(what.into())
}

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) -> Result<()> {
    let bytes = name.as_bytes();
    let len = u16::try_from(bytes.len()).map_err(|_| corrupt(format!("tensor name too long: {name}")))?;
    out.write_u16::<LittleEndian>(len).expect("vec write");
    out.extend_from_slice(bytes);
    out.write_u8(<f32 as Real>::DTYPE.code()).expect("vec write");
    out.write_u8(t.shape().len() as u8).expect("vec write");
    for &d in t.shape() {
        out.write_u64::<LittleEndian>(d as u64).expect("vec write");
    }
    for &v in t.data() {
        out.write_f32::<LittleEndian>(v).expect("vec write");
    }
    Ok(())
}

fn read_tensor(cur: &mut Cursor<&[u8]>) -> Result<(String, Tensor<f32>)> {
    let eof = |_| corrupt("truncated checkpoint");
    let len = cur.read_u16::<LittleEndian>().map_err(eof)? as usize;
    let mut name = vec![0u8; len];
    cur.read_exact(&mut name).map_err(eof)?;
    let name = String::from_utf8(name).map_err(|_| corrupt("tensor name is not UTF-8"))?;
    let code = cur.read_u8().map_err(eof)?;
    if DType::from_code(code) != Some(DType::F32) {
        return Err(corrupt(format!("{name}: unsupported dtype code {code}")));
    }
    let rank = cur.read_u8().map_err(eof)? as usize;
    let shape = (0..rank)
        .map(|_| cur.read_u64::<LittleEndian>().map(|d| d as usize).map_err(eof))
        .collect::<Result<Vec<_>>>()?;
    let count: usize = shape.iter().product();
    let remaining = cur.get_ref().len() - cur.position() as usize;
    if count.checked_mul(4).is_none_or(|b| b > remaining) {
        return Err(corrupt(format!("{name}: payload of {count} values exceeds the file")));
    }
    let mut data = vec![0f32; count];
    cur.read_f32_into::<LittleEndian>(&mut data).map_err(eof)?;
    Ok((name, Tensor::new(shape, data)?))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).expect("vec write");
        out.write_u64::<LittleEndian>(self.step).expect("vec write");
        let config = self.config.to_text();
        out.write_u32::<LittleEndian>(config.len() as u32).expect("vec write");
        out.extend_from_slice(config.as_bytes());
        let count = self.params.len() + self.adam_first.len() + self.adam_second.len();
        out.write_u32::<LittleEndian>(count as u32).expect("vec write");
        for (name, t) in self.params.iter() {
            write_tensor(&mut out, &format!("{PARAM}{name}"), t)?;
        }
        for (name, t) in &self.adam_first {
            write_tensor(&mut out, &format!("{FIRST}{name}"), t)?;
        }
        for (name, t) in &self.adam_second {
            write_tensor(&mut out, &format!("{SECOND}{name}"), t)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let eof = |_| corrupt("truncated checkpoint");
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic).map_err(eof)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(corrupt("not a checkpoint (bad magic)"));
        }
        let version = cur.read_u32::<LittleEndian>().map_err(eof)?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported checkpoint version {version}")));
        }
        let step = cur.read_u64::<LittleEndian>().map_err(eof)?;
        let len = cur.read_u32::<LittleEndian>().map_err(eof)? as usize;
        let mut text = vec![0u8; len.min(bytes.len())];
        cur.read_exact(&mut text).map_err(eof)?;
        let text = String::from_utf8(text).map_err(|_| corrupt("config snapshot is not UTF-8"))?;
        let config = RunConfig::parse(&text)?;
        let count = cur.read_u32::<LittleEndian>().map_err(eof)?;
        let mut ckpt = Checkpoint {
            config,
            step,
            params: ParamStore::new(),
            adam_first: IndexMap::new(),
            adam_second: IndexMap::new(),
        };
        for _ in 0..count {
            let (name, t) = read_tensor(&mut cur)?;
            if let Some(n) = name.strip_prefix(PARAM) {
                ckpt.params.insert(n, t);
            } else if let Some(n) = name.strip_prefix(FIRST) {
                ckpt.adam_first.insert(n.to_string(), t);
            } else if let Some(n) = name.strip_prefix(SECOND) {
                ckpt.adam_second.insert(n.to_string(), t);
            } else {
                return Err(corrupt(format!("tensor {name} has no known section")));
            }
        }
        if cur.position() as usize != bytes.len() {
            return Err(corrupt("trailing bytes after the last tensor"));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Fails if `config` needs a different architecture or ablation state.
    pub fn check_compatible(&self, config: &RunConfig) -> Result<()> {
        match self.config.architecture_mismatch(config) {
            None => Ok(()),
            Some(diff) => Err(Error::Checkpoint(format!("checkpoint was trained with a different configuration: {diff}"))),
        }
    }
}
