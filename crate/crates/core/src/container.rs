//! Flat binary container of named `f64` arrays with a small capacity header.
//!
//! All integers and reals are little-endian. Layout:
//!
//! ```text
//! magic        8 bytes   "DYNCAP\0\x01"
//! version      u32       1
//! step         u64       schedule step at save time
//! layers       u32       L, then L x (active_out u32, active_in u32)
//! meta         u32       M, then M x (name_len u16, name utf-8, value u64)
//! arrays       u32       A, then A x (name_len u16, name utf-8,
//!                                     ndim u8, ndim x u64 dims,
//!                                     prod(dims) x f64)
//! ```
//!
//! Reals are stored as raw IEEE-754 bits, so a write/read cycle is bitwise.

use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: [u8; 8] = *b"DYNCAP\0\x01";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a dyncap container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    Version(u32),
    #[error("name is not valid utf-8")]
    Utf8,
    #[error("name longer than 65535 bytes")]
    NameTooLong,
    #[error("array `{name}` has {len} values but shape {shape:?}")]
    ShapeMismatch { name: String, shape: Vec<u64>, len: usize },
    #[error("missing entry `{0}`")]
    Missing(String),
}

pub type Result<T> = std::result::Result<T, ContainerError>;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<u64>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub step: u64,
    /// Active `(out, in)` per layer.
    pub widths: Vec<(u32, u32)>,
    pub meta: Vec<(String, u64)>,
    pub arrays: Vec<NamedArray>,
}

impl Container {
    pub fn push_array(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        self.arrays.push(NamedArray {
            name: name.into(),
            shape: shape.iter().map(|&d| d as u64).collect(),
            data,
        });
    }

    pub fn push_meta(&mut self, name: impl Into<String>, value: u64) {
        self.meta.push((name.into(), value));
    }

    pub fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| ContainerError::Missing(name.to_string()))
    }

    pub fn meta(&self, name: &str) -> Result<u64> {
        self.meta
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| ContainerError::Missing(name.to_string()))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.widths.len() as u32).to_le_bytes())?;
        for &(o, i) in &self.widths {
            w.write_all(&o.to_le_bytes())?;
            w.write_all(&i.to_le_bytes())?;
        }
        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        for (name, value) in &self.meta {
            write_name(&mut w, name)?;
            w.write_all(&value.to_le_bytes())?;
        }
        w.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for a in &self.arrays {
            let len: u64 = a.shape.iter().product();
            if len as usize != a.data.len() {
                return Err(ContainerError::ShapeMismatch {
                    name: a.name.clone(),
                    shape: a.shape.clone(),
                    len: a.data.len(),
                });
            }
            write_name(&mut w, &a.name)?;
            w.write_all(&[a.shape.len() as u8])?;
            for d in &a.shape {
                w.write_all(&d.to_le_bytes())?;
            }
            for v in &a.data {
                w.write_all(&v.to_bits().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(ContainerError::Version(version));
        }
        let step = read_u64(&mut r)?;
        let n = read_u32(&mut r)?;
        let mut widths = Vec::with_capacity(n as usize);
        for _ in 0..n {
            widths.push((read_u32(&mut r)?, read_u32(&mut r)?));
        }
        let n = read_u32(&mut r)?;
        let mut meta = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = read_name(&mut r)?;
            meta.push((name, read_u64(&mut r)?));
        }
        let n = read_u32(&mut r)?;
        let mut arrays = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = read_name(&mut r)?;
            let mut ndim = [0u8; 1];
            r.read_exact(&mut ndim)?;
            let shape = (0..ndim[0]).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>>>()?;
            let len: u64 = shape.iter().product();
            let data = (0..len)
                .map(|_| read_u64(&mut r).map(f64::from_bits))
                .collect::<Result<Vec<_>>>()?;
            arrays.push(NamedArray { name, shape, data });
        }
        Ok(Self {
            step,
            widths,
            meta,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(io::BufReader::new(f))
    }
}

fn write_name<W: Write>(w: &mut W, name: &str) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| ContainerError::NameTooLong)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    Ok(())
}

fn read_name<R: Read>(r: &mut R) -> Result<String> {
    let mut len = [0u8; 2];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u16::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| ContainerError::Utf8)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
