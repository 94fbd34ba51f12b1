//! Binary weight bundles.
//!
//! Layout: 8-byte magic, little-endian u64 manifest length, JSON manifest
//! (entry name, shape, byte offset into the payload), little-endian f64
//! payload with every matrix column-major, then a CRC32 of all preceding
//! bytes.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VNWB\x01\0\0\0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    entries: Vec<ManifestEntry>,
}

/// Named matrices; vectors are single-column matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightBundle {
    pub tensors: BTreeMap<String, DMatrix<f64>>,
}

impl WeightBundle {
    pub fn insert(&mut self, name: impl Into<String>, m: DMatrix<f64>) {
        self.tensors.insert(name.into(), m);
    }

    pub fn get(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.tensors.get(name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::new();
        let mut payload = Vec::new();
        for (name, m) in &self.tensors {
            entries.push(ManifestEntry {
                name: name.clone(),
                shape: [m.nrows(), m.ncols()],
                offset: payload.len(),
            });
            for v in m.as_slice() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = serde_json::to_vec(&Manifest { entries }).expect("manifest serialises");
        let mut out = Vec::with_capacity(16 + manifest.len() + payload.len() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&payload);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 {
            return Err(Error::format(bytes.len(), "weight bundle truncated"));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::format(0, "bad weight bundle magic"));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let payload_start = 16usize
            .checked_add(manifest_len)
            .filter(|&p| p <= body.len())
            .ok_or_else(|| Error::format(8, "manifest length exceeds file"))?;
        if crc32fast::hash(body) != stored {
            return Err(Error::format(body.len(), "weight bundle checksum mismatch"));
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[16..payload_start])
            .map_err(|e| Error::format(16 + e.column(), format!("bad manifest: {e}")))?;
        let payload = &body[payload_start..];
        let mut tensors = BTreeMap::new();
        for e in manifest.entries {
            let count = e.shape[0] * e.shape[1];
            let end = e.offset + count * 8;
            if end > payload.len() {
                return Err(Error::format(
                    payload_start + e.offset,
                    format!("tensor {} runs past the payload", e.name),
                ));
            }
            let data: Vec<f64> = payload[e.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(e.name, DMatrix::from_column_slice(e.shape[0], e.shape[1], &data));
        }
        Ok(WeightBundle { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightBundle> {
    WeightBundle::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle() -> WeightBundle {
        let mut b = WeightBundle::default();
        b.insert("a", DMatrix::from_fn(3, 2, |i, j| (i * 10 + j) as f64 + 0.25));
        b.insert("b", DMatrix::from_element(4, 1, -1.5));
        b
    }

    #[test]
    fn round_trip() {
        let b = bundle();
        assert_eq!(WeightBundle::from_bytes(&b.to_bytes()).unwrap(), b);
    }

    #[test]
    fn truncated_and_corrupt() {
        let bytes = bundle().to_bytes();
        for cut in [3, 17, bytes.len() - 9] {
            assert!(matches!(WeightBundle::from_bytes(&bytes[..cut]), Err(Error::Format { .. })));
        }
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 10] ^= 1;
        assert!(matches!(WeightBundle::from_bytes(&bad), Err(Error::Format { .. })));
    }

    #[test]
    fn column_major_payload() {
        let mut b = WeightBundle::default();
        b.insert("m", DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let bytes = b.to_bytes();
        let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let p = 16 + manifest_len;
        let second = f64::from_le_bytes(bytes[p + 8..p + 16].try_into().unwrap());
        assert_eq!(second, 3.0);
    }
}
