//! Checkpoint container shared by field and policy weights.
//!
//! Layout: magic bytes `NDRF1\n`, a JSON header line describing the model
//! and a parameter manifest with byte offsets, then raw little-endian f32
//! values in manifest order.

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::num::Real;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 6] = b"NDRF1\n";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset of this tensor within the payload section.
    pub offset: u64,
    /// Number of f32 values.
    pub len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Header {
    /// "field" or "policy".
    pub kind: String,
    /// Model-specific metadata (architecture, bounds, ...).
    pub meta: serde_json::Value,
    pub manifest: Vec<ManifestEntry>,
}

pub fn save<R: Real, P: ParamSet<R>>(
    path: &Path,
    kind: &str,
    meta: serde_json::Value,
    params: &P,
) -> Result<()> {
    let named = params.named();
    let mut manifest = Vec::with_capacity(named.len());
    let mut offset = 0u64;
    for (name, t) in &named {
        manifest.push(ManifestEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            len: t.len() as u64,
        });
        offset += t.len() as u64 * 4;
    }
    let header = Header {
        kind: kind.to_string(),
        meta,
        manifest,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    f.write_all(&header_bytes)?;
    for (_, t) in &named {
        for v in t.data() {
            f.write_all(&(v.f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads the header and raw payload; `load_into` maps values back onto an
/// existing parameter structure.
pub fn read(path: &Path) -> Result<(Header, Vec<f32>)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 6];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    let total: u64 = header.manifest.iter().map(|e| e.len).sum();
    let mut payload = vec![0u8; total as usize * 4];
    f.read_exact(&mut payload)?;
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

/// Copies manifest values into `params`, matching tensors by name and shape.
pub fn load_into<R: Real, P: ParamSet<R>>(
    header: &Header,
    values: &[f32],
    params: &mut P,
) -> Result<()> {
    let mut named = params.named_mut();
    if named.len() != header.manifest.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, checkpoint has {}",
            named.len(),
            header.manifest.len()
        )));
    }
    for ((name, t), entry) in named.iter_mut().zip(&header.manifest) {
        if *name != entry.name || t.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "tensor mismatch: have {name} {:?}, checkpoint {} {:?}",
                t.shape(),
                entry.name,
                entry.shape
            )));
        }
        let start = (entry.offset / 4) as usize;
        let src = &values[start..start + entry.len as usize];
        for (dst, v) in t.data_mut().iter_mut().zip(src) {
            *dst = R::of(*v as f64);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::TensorBundle;
    use crate::num::Tensor;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ndrf");
        let bundle = TensorBundle {
            tensors: vec![
                (
                    "a".into(),
                    Tensor::from_vec(&[2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap(),
                ),
                ("b".into(), Tensor::from_vec(&[3], vec![9.0, 8.0, 7.0]).unwrap()),
            ],
        };
        save(&path, "field", serde_json::json!({"note": 1}), &bundle).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..6], MAGIC);

        let (header, values) = read(&path).unwrap();
        assert_eq!(header.kind, "field");
        let mut out = bundle.zeros_like();
        load_into(&header, &values, &mut out).unwrap();
        assert_eq!(out.tensors[0].1.data(), bundle.tensors[0].1.data());
        assert_eq!(out.tensors[1].1.data(), bundle.tensors[1].1.data());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ndrf");
        let bundle = TensorBundle {
            tensors: vec![("a".into(), Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap())],
        };
        save(&path, "field", serde_json::Value::Null, &bundle).unwrap();
        let (header, values) = read(&path).unwrap();
        let mut wrong = TensorBundle {
            tensors: vec![("a".into(), Tensor::<f64>::zeros(&[3]))],
        };
        assert!(load_into(&header, &values, &mut wrong).is_err());
    }
}
