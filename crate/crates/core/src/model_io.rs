//! Model container: magic, little-endian `u64` header length, JSON header,
//! then the parameters as a little-endian `f64` blob. The header carries a
//! SHA-256 of the blob and the offset and shape of every tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::ParamEntry;

pub const MAGIC: &[u8; 8] = b"DCMODEL\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub format_version: u32,
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<ParamEntry>,
    /// Number of `f64` values in the blob.
    pub blob_len: usize,
    pub checksum: String,
}

pub fn blob_checksum(blob: &[u8]) -> String {
    hex::encode(Sha256::digest(blob))
}

pub fn write_container(
    path: &Path,
    kind: &str,
    meta: serde_json::Value,
    tensors: &[ParamEntry],
    data: &[f64],
) -> Result<()> {
    let blob: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    let header = ContainerHeader {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        meta,
        tensors: tensors.to_vec(),
        blob_len: data.len(),
        checksum: blob_checksum(&blob),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<(ContainerHeader, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes)
}

pub fn decode_container(bytes: &[u8]) -> Result<(ContainerHeader, Vec<f64>)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("header extends past end of file".into()))?;
    let probe: serde_json::Value = serde_json::from_slice(&bytes[16..header_end])?;
    let version = probe
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Format("header has no format_version".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: FORMAT_VERSION,
        });
    }
    let header: ContainerHeader = serde_json::from_value(probe)?;
    let blob = &bytes[header_end..];
    if blob.len() != header.blob_len * 8 || blob_checksum(blob) != header.checksum {
        return Err(Error::Checksum(format!(
            "parameter blob does not match its checksum ({} bytes, expected {})",
            blob.len(),
            header.blob_len * 8
        )));
    }
    let mut expected_offset = 0;
    for t in &header.tensors {
        if t.offset != expected_offset {
            return Err(Error::ShapeConsistency(format!(
                "tensor {} starts at {}, expected {}",
                t.name, t.offset, expected_offset
            )));
        }
        expected_offset += t.len();
    }
    if expected_offset != header.blob_len {
        return Err(Error::ShapeConsistency(format!(
            "tensors cover {} values, blob holds {}",
            expected_offset, header.blob_len
        )));
    }
    let data = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, data))
}
