//! Flat binary tensor snapshots.
//!
//! Layout: an 8-byte little-endian header length `N`, `N` bytes of JSON header,
//! then every tensor's values back to back in little-endian order. The header
//! maps tensor names to `{"dtype", "shape", "data_offsets": [begin, end]}` with
//! offsets relative to the start of the data section, which makes the files
//! readable by safetensors tooling.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::tensor::{Precision, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BlobEntry {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub data_offsets: [usize; 2],
}

/// Serialises named tensors in the given order.
pub fn encode<T: Real>(tensors: &[(&str, &Tensor<T>)]) -> Result<Vec<u8>> {
    let mut header: IndexMap<String, BlobEntry> = IndexMap::new();
    let mut body = Vec::new();
    for (name, t) in tensors {
        let begin = body.len();
        for &v in t.data() {
            v.write_le(&mut body);
        }
        if header
            .insert(
                name.to_string(),
                BlobEntry {
                    dtype: T::PRECISION.tag().to_string(),
                    shape: t.shape().to_vec(),
                    data_offsets: [begin, body.len()],
                },
            )
            .is_some()
        {
            return Err(Error::Format(format!("duplicate tensor name {name}")));
        }
    }
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + body.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&body);
    Ok(out)
}

/// Parses a blob into named tensors, preserving header order.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    if bytes.len() < 8 {
        return Err(Error::Format("blob shorter than its length prefix".into()));
    }
    let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body_start = 8usize
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("header length exceeds blob size".into()))?;
    let header: IndexMap<String, BlobEntry> = serde_json::from_slice(&bytes[8..body_start])?;
    let body = &bytes[body_start..];
    let width = T::PRECISION.width();
    let mut out = Vec::with_capacity(header.len());
    for (name, e) in header {
        let precision =
            Precision::from_tag(&e.dtype).ok_or_else(|| Error::Format(format!("unknown dtype {}", e.dtype)))?;
        if precision != T::PRECISION {
            return Err(Error::Format(format!(
                "tensor {name} stored as {}, requested {}",
                e.dtype,
                T::PRECISION.tag()
            )));
        }
        let [begin, end] = e.data_offsets;
        let count: usize = e.shape.iter().product();
        if end < begin || end > body.len() || end - begin != count * width {
            return Err(Error::Format(format!("bad data offsets for {name}")));
        }
        let data = body[begin..end].chunks_exact(width).map(T::read_le).collect();
        out.push((name, Tensor::new(e.shape, data)?));
    }
    Ok(out)
}

pub fn write_file<T: Real>(path: &Path, tensors: &[(&str, &Tensor<T>)]) -> Result<()> {
    let bytes = encode(tensors)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_file<T: Real>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Reads the stored precision of a blob without decoding values.
pub fn peek_precision(bytes: &[u8]) -> Result<Option<Precision>> {
    if bytes.len() < 8 {
        return Err(Error::Format("blob shorter than its length prefix".into()));
    }
    let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    if 8 + n > bytes.len() {
        return Err(Error::Format("header length exceeds blob size".into()));
    }
    let header: IndexMap<String, BlobEntry> = serde_json::from_slice(&bytes[8..8 + n])?;
    Ok(header.values().next().and_then(|e| Precision::from_tag(&e.dtype)))
}
