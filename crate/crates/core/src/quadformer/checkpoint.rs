//! Binary checkpoint: magic, version, a JSON header with the configuration,
//! standardization, threshold and tensor manifest, raw little-endian
//! tensors, and a trailing CRC32 over everything before it.

use std::fs;
use std::path::Path;

use numkit::Matrix;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::data::Standardizer;
use super::model::Weights;
use super::train::Quadformer;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"QDFMCKPT";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    standardizer: Standardizer,
    threshold: f64,
    tensors: Vec<(String, usize, usize)>,
}

pub fn to_bytes(model: &Quadformer) -> Result<Vec<u8>> {
    let named = model.weights.named();
    let header = Header {
        config: model.config.clone(),
        standardizer: model.standardizer.clone(),
        threshold: model.threshold,
        tensors: named
            .iter()
            .map(|(n, t)| (n.clone(), t.rows(), t.cols()))
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &named {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Quadformer> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < MAGIC.len() + 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(bad("checksum mismatch"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let json = body
        .get(20..20 + len)
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json)?;
    header.config.validate()?;

    let mut at = 20 + len;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for (name, r, c) in &header.tensors {
        let n = r * c * 8;
        let raw = body
            .get(at..at + n)
            .ok_or_else(|| Error::Checkpoint(format!("truncated tensor {name}")))?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Matrix::new(*r, *c, data)?);
        at += n;
    }
    if at != body.len() {
        return Err(bad("trailing bytes after tensors"));
    }
    let weights = Weights::from_tensors(&header.config, tensors)
        .ok_or_else(|| bad("tensor manifest does not match the configuration"))?;
    Ok(Quadformer {
        config: header.config,
        weights,
        standardizer: header.standardizer,
        threshold: header.threshold,
    })
}

pub fn save(model: &Quadformer, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Quadformer> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Quadformer {
        let config = ModelConfig {
            window: 5,
            d_model: 6,
            ff_dim: 4,
            layers: 2,
            ..ModelConfig::default()
        };
        Quadformer {
            weights: Weights::init(&config),
            config,
            standardizer: Standardizer {
                mean: vec![0.1; 6],
                std: vec![2.0; 6],
            },
            threshold: 0.3,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        assert_eq!(from_bytes(&to_bytes(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn corruption_is_detected() {
        let mut b = to_bytes(&model()).unwrap();
        let k = b.len() / 2;
        b[k] ^= 1;
        assert!(matches!(from_bytes(&b), Err(Error::Checkpoint(_))));
        assert!(matches!(from_bytes(b"nonsense"), Err(Error::Checkpoint(_))));
    }
}
