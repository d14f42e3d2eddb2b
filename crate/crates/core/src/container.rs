//! Binary array files.
//!
//! Layout: magic `SIPL`, format version (u16), dtype code (u8), rank (u8),
//! one u32 per dimension, then the raw data. Everything little-endian.
//! Dtype codes: 0 = f64, 1 = f32, 2 = i32, 3 = u8.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SIPL";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F64,
    F32,
    I32,
    U8,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F64 => 0,
            DType::F32 => 1,
            DType::I32 => 2,
            DType::U8 => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<DType> {
        match code {
            0 => Some(DType::F64),
            1 => Some(DType::F32),
            2 => Some(DType::I32),
            3 => Some(DType::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 | DType::I32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    I32(Vec<i32>),
    U8(Vec<u8>),
}

impl ArrayData {
    pub fn dtype(&self) -> DType {
        match self {
            ArrayData::F64(_) => DType::F64,
            ArrayData::F32(_) => DType::F32,
            ArrayData::I32(_) => DType::I32,
            ArrayData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::F32(v) => v.len(),
            ArrayData::I32(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!("shape {shape:?} holds {expected} items, data has {}", data.len())));
        }
        if shape.len() > u8::MAX as usize || shape.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::ShapeMismatch(format!("shape {shape:?} does not fit the header")));
        }
        Ok(Array { shape, data })
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            ArrayData::F64(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i32(&self) -> Option<&[i32]> {
        match &self.data {
            ArrayData::I32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            ArrayData::U8(v) => Some(v),
            _ => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.shape.len() + self.data.len() * self.dtype().size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.dtype().code());
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    /// Decodes one array from the front of `reader`.
    pub fn decode<R: Read>(reader: &mut R) -> std::result::Result<Self, String> {
        let mut head = [0u8; 8];
        reader.read_exact(&mut head).map_err(|e| format!("truncated header: {e}"))?;
        if &head[..4] != MAGIC {
            return Err("bad magic".into());
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != FORMAT_VERSION {
            return Err(format!("unsupported format version {version}"));
        }
        let dtype = DType::from_code(head[6]).ok_or_else(|| format!("unknown dtype code {}", head[6]))?;
        let rank = head[7] as usize;
        let mut dims = vec![0u8; 4 * rank];
        reader.read_exact(&mut dims).map_err(|e| format!("truncated dims: {e}"))?;
        let shape: Vec<usize> =
            dims.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize).collect();
        let count: usize = shape.iter().product();
        let mut raw = vec![0u8; count * dtype.size()];
        reader.read_exact(&mut raw).map_err(|e| format!("truncated data: {e}"))?;
        let data = match dtype {
            DType::F64 => ArrayData::F64(
                raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            DType::F32 => ArrayData::F32(
                raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            DType::I32 => ArrayData::I32(
                raw.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            DType::U8 => ArrayData::U8(raw),
        };
        Ok(Array { shape, data })
    }
}

pub fn write_array(path: &Path, array: &Array) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&array.encode())?;
    f.sync_all()?;
    Ok(())
}

pub fn read_array(path: &Path) -> Result<Array> {
    let bytes = fs::read(path)?;
    let mut cursor = bytes.as_slice();
    let array = Array::decode(&mut cursor).map_err(|reason| Error::Format { path: path.to_path_buf(), reason })?;
    if !cursor.is_empty() {
        return Err(Error::Format { path: path.to_path_buf(), reason: format!("{} trailing bytes", cursor.len()) });
    }
    Ok(array)
}

/// Writes several arrays back to back in one file.
pub fn write_arrays(path: &Path, arrays: &[&Array]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for a in arrays {
        f.write_all(&a.encode())?;
    }
    f.sync_all()?;
    Ok(())
}

pub fn read_arrays(path: &Path) -> Result<Vec<Array>> {
    let bytes = fs::read(path)?;
    let mut cursor = bytes.as_slice();
    let mut out = Vec::new();
    while !cursor.is_empty() {
        out.push(Array::decode(&mut cursor).map_err(|reason| Error::Format { path: path.to_path_buf(), reason })?);
    }
    Ok(out)
}
