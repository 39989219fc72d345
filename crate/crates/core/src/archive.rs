//! `TOAST1` tensor archives.
//!
//! Layout: 6-byte magic `TOAST1`, little-endian `u32` manifest length, UTF-8
//! JSON manifest, then raw little-endian `f32` payloads in manifest order.
//! Byte offsets in the manifest are relative to the start of the payload.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ToastError};
use crate::linalg::{Matrix, Vector};

pub const MAGIC: &[u8; 6] = b"TOAST1";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = MAGIC.len() + 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub byte_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub format_version: u32,
    pub entries: Vec<ManifestEntry>,
    /// Free-form producer notes (e.g. dtype casts applied by an exporter).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

/// A stored tensor: rank 2 maps to [`Matrix`], rank 1 to [`Vector`].
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Matrix(Matrix),
    Vector(Vector),
}

impl Tensor {
    pub fn dims(&self) -> Vec<usize> {
        match self {
            Tensor::Matrix(m) => vec![m.rows(), m.cols()],
            Tensor::Vector(v) => vec![v.len()],
        }
    }

    pub fn values(&self) -> &[f32] {
        match self {
            Tensor::Matrix(m) => m.as_slice(),
            Tensor::Vector(v) => v.as_slice(),
        }
    }

    pub fn as_matrix(&self) -> Option<&Matrix> {
        match self {
            Tensor::Matrix(m) => Some(m),
            Tensor::Vector(_) => None,
        }
    }

    pub fn as_vector(&self) -> Option<&Vector> {
        match self {
            Tensor::Vector(v) => Some(v),
            Tensor::Matrix(_) => None,
        }
    }
}

impl From<Matrix> for Tensor {
    fn from(m: Matrix) -> Self {
        Tensor::Matrix(m)
    }
}

impl From<Vector> for Tensor {
    fn from(v: Vector) -> Self {
        Tensor::Vector(v)
    }
}

pub type NamedTensors = Vec<(String, Tensor)>;

/// Serializes `tensors` into archive bytes.
pub fn encode_archive(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    encode_archive_with_metadata(tensors, BTreeMap::new())
}

pub fn encode_archive_with_metadata(
    tensors: &[(String, Tensor)],
    metadata: BTreeMap<String, String>,
) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in tensors {
        if !seen.insert(name.as_str()) {
            return Err(ToastError::DuplicateName(name.clone()));
        }
        let values = t.values();
        if values.is_empty() {
            return Err(ToastError::EmptyTensor(name.clone()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ToastError::NonFinite(name.clone()));
        }
        entries.push(ManifestEntry {
            name: name.clone(),
            dims: t.dims(),
            byte_offset: offset,
        });
        offset += 4 * values.len() as u64;
    }
    let manifest = ArchiveManifest {
        format_version: FORMAT_VERSION,
        entries,
        metadata,
    };
    let json = serde_json::to_vec(&manifest)?;
    let manifest_len = u32::try_from(json.len())
        .map_err(|_| ToastError::BadManifest("manifest exceeds 4 GiB".into()))?;

    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&manifest_len.to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes `tensors` to `path`, replacing any existing file.
pub fn write_archive(path: impl AsRef<Path>, tensors: &[(String, Tensor)]) -> Result<()> {
    let bytes = encode_archive(tensors)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Parses and validates the header and manifest of archive bytes.
pub fn decode_manifest(bytes: &[u8]) -> Result<(ArchiveManifest, usize)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ToastError::NotArchive);
    }
    if bytes.len() < HEADER_LEN {
        return Err(ToastError::Truncated);
    }
    let mut len_bytes = [0u8; 4];
    len_bytes.copy_from_slice(&bytes[MAGIC.len()..HEADER_LEN]);
    let manifest_len = u32::from_le_bytes(len_bytes) as usize;
    let payload_start = HEADER_LEN
        .checked_add(manifest_len)
        .ok_or(ToastError::Truncated)?;
    if bytes.len() < payload_start {
        return Err(ToastError::Truncated);
    }
    let manifest: ArchiveManifest = serde_json::from_slice(&bytes[HEADER_LEN..payload_start])
        .map_err(|e| ToastError::BadManifest(e.to_string()))?;
    validate_manifest(&manifest)?;
    Ok((manifest, payload_start))
}

fn validate_manifest(manifest: &ArchiveManifest) -> Result<()> {
    if manifest.format_version != FORMAT_VERSION {
        return Err(ToastError::BadManifest(format!(
            "unsupported format_version {}",
            manifest.format_version
        )));
    }
    let mut seen = HashSet::new();
    let mut expected = 0u64;
    for e in &manifest.entries {
        if !seen.insert(e.name.as_str()) {
            return Err(ToastError::BadManifest(format!("duplicate name {}", e.name)));
        }
        if e.dims.is_empty() || e.dims.len() > 2 || e.dims.contains(&0) {
            return Err(ToastError::BadManifest(format!(
                "{}: unsupported dims {:?}",
                e.name, e.dims
            )));
        }
        if e.byte_offset != expected {
            return Err(ToastError::BadManifest(format!(
                "{}: offset {} where {} expected",
                e.name, e.byte_offset, expected
            )));
        }
        let count = e
            .dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
            .ok_or_else(|| ToastError::BadManifest(format!("{}: dims overflow", e.name)))?;
        expected += 4 * count;
    }
    Ok(())
}

/// Decodes archive bytes into tensors in manifest order.
pub fn decode_archive(bytes: &[u8]) -> Result<NamedTensors> {
    let (manifest, start) = decode_manifest(bytes)?;
    let payload = &bytes[start..];
    let needed: u64 = manifest
        .entries
        .iter()
        .map(|e| 4 * e.dims.iter().product::<usize>() as u64)
        .sum();
    if (payload.len() as u64) < needed {
        return Err(ToastError::Truncated);
    }
    if payload.len() as u64 > needed {
        return Err(ToastError::BadManifest(format!(
            "{} trailing bytes after payload",
            payload.len() as u64 - needed
        )));
    }
    let mut out = Vec::with_capacity(manifest.entries.len());
    for e in manifest.entries {
        let count: usize = e.dims.iter().product();
        let off = e.byte_offset as usize;
        let values: Vec<f32> = payload[off..off + 4 * count]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = match e.dims.as_slice() {
            [_] => Tensor::Vector(Vector::new(values).map_err(|_| ToastError::NonFinite(e.name.clone()))?),
            [r, c] => Tensor::Matrix(
                Matrix::new(*r, *c, values).map_err(|_| ToastError::NonFinite(e.name.clone()))?,
            ),
            _ => unreachable!("dims validated"),
        };
        out.push((e.name, tensor));
    }
    Ok(out)
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<NamedTensors> {
    let bytes = fs::read(path)?;
    decode_archive(&bytes)
}

/// Checks that a file is a well-formed archive without materializing tensors.
pub fn validate_archive(path: impl AsRef<Path>) -> Result<ArchiveManifest> {
    let bytes = fs::read(path)?;
    decode_archive(&bytes)?;
    Ok(decode_manifest(&bytes)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NamedTensors {
        vec![
            ("a".into(), Matrix::new(2, 2, vec![1.0, -2.0, 3.5, 0.0]).unwrap().into()),
            ("b".into(), Vector::new(vec![0.25, 7.0, -1e-30]).unwrap().into()),
        ]
    }

    fn manifest_len(bytes: &[u8]) -> usize {
        u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize
    }

    #[test]
    fn single_matrix_length() {
        let t: NamedTensors = vec![("w".into(), Matrix::identity(2).into())];
        let bytes = encode_archive(&t).unwrap();
        assert_eq!(bytes.len(), 6 + 4 + manifest_len(&bytes) + 16);
    }

    #[test]
    fn round_trip() {
        let t = sample();
        let back = decode_archive(&encode_archive(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn empty_archive() {
        let bytes = encode_archive(&[]).unwrap();
        let (m, _) = decode_manifest(&bytes).unwrap();
        assert!(m.entries.is_empty());
        assert!(decode_archive(&bytes).unwrap().is_empty());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut t = sample();
        t.push(("a".into(), Vector::zeros(1).into()));
        assert!(matches!(encode_archive(&t), Err(ToastError::DuplicateName(n)) if n == "a"));
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode_archive(&sample()).unwrap();
        bytes[..6].copy_from_slice(b"XXXXXX");
        assert_eq!(decode_archive(&bytes).unwrap_err().to_string(), "not a TOAST archive");
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode_archive(&sample()).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        assert_eq!(decode_archive(cut).unwrap_err().to_string(), "truncated");
    }

    #[test]
    fn bad_manifest_json() {
        let mut bytes = encode_archive(&sample()).unwrap();
        bytes[10] = b'[';
        let err = decode_archive(&bytes).unwrap_err().to_string();
        assert!(err.starts_with("bad manifest"), "{err}");
    }

    #[test]
    fn metadata_survives() {
        let mut meta = BTreeMap::new();
        meta.insert("cast".to_string(), "bf16->f32".to_string());
        let bytes = encode_archive_with_metadata(&sample(), meta.clone()).unwrap();
        assert_eq!(decode_manifest(&bytes).unwrap().0.metadata, meta);
        assert_eq!(decode_archive(&bytes).unwrap(), sample());
    }
}
