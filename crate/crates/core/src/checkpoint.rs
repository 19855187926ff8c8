//! Versioned binary archives of named arrays.
//!
//! Layout (little endian): magic `SLOTARR\0`, format version `u32`, array
//! count `u32`, then per array: name length `u32`, UTF-8 name, rank `u32`,
//! dims `u64` each, values as `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use slotrl_tensor::{ParamStore, Scalar};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SLOTARR\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub arrays: Vec<NamedArray>,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f64>) {
        self.arrays.push(NamedArray {
            name: name.into(),
            shape: shape.to_vec(),
            values,
        });
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    /// Adds every parameter of `store` under `prefix/`.
    pub fn add_store<F: Scalar>(&mut self, prefix: &str, store: &ParamStore<F>) {
        for (name, t) in store.iter() {
            self.push(format!("{prefix}/{name}"), t.shape(), t.to_f64_vec());
        }
    }

    /// Overwrites every parameter of `store` from `prefix/` entries.
    pub fn load_store<F: Scalar>(&self, prefix: &str, store: &ParamStore<F>, path: &Path) -> Result<()> {
        for (name, t) in store.iter() {
            let key = format!("{prefix}/{name}");
            let a = self.get(&key).ok_or_else(|| corrupt(path, format!("missing array {key}")))?;
            if a.shape != t.shape() {
                return Err(corrupt(path, format!("array {key} has shape {:?}, expected {:?}", a.shape, t.shape())));
            }
            t.data_mut()
                .iter_mut()
                .zip(&a.values)
                .for_each(|(d, &v)| *d = F::of(v));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        out.extend((self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            out.extend((a.name.len() as u32).to_le_bytes());
            out.extend(a.name.as_bytes());
            out.extend((a.shape.len() as u32).to_le_bytes());
            for &d in &a.shape {
                out.extend((d as u64).to_le_bytes());
            }
            for &v in &a.values {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if r.len() < n {
                return Err(corrupt(path, "truncated archive"));
            }
            let (head, tail) = r.split_at(n);
            r = tail;
            Ok(head)
        };
        if take(8)? != MAGIC {
            return Err(corrupt(path, "not an array archive"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let version = u32_at(take(4)?);
        if version != FORMAT_VERSION {
            return Err(corrupt(path, format!("unsupported format version {version}")));
        }
        let count = u32_at(take(4)?) as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let len = u32_at(take(4)?) as usize;
            let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| corrupt(path, "array name is not UTF-8"))?;
            let rank = u32_at(take(4)?) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let values = take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push(NamedArray { name, shape, values });
        }
        if !r.is_empty() {
            return Err(corrupt(path, "trailing bytes"));
        }
        Ok(Self { arrays })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes, path)
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}
