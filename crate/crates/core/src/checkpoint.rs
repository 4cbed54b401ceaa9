//! Parameter checkpoints.
//!
//! Layout: an 8-byte little-endian manifest length, a JSON manifest listing
//! each tensor's name and shape, then every value as a little-endian `f64`
//! in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: [usize; 2],
}

pub fn encode(params: &ModelParams) -> Result<Vec<u8>> {
    let manifest: Vec<Entry> = params
        .names
        .iter()
        .zip(&params.values)
        .map(|(name, m)| Entry {
            name: name.clone(),
            shape: [m.rows(), m.cols()],
        })
        .collect();
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(8 + json.len() + 8 * params.num_scalars());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for m in &params.values {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
    let bad = |m: &str| Error::contract(format!("malformed checkpoint: {m}"));
    let header: [u8; 8] = bytes
        .get(..8)
        .ok_or_else(|| bad("missing header"))?
        .try_into()
        .expect("8 bytes");
    let len =
        usize::try_from(u64::from_le_bytes(header)).map_err(|_| bad("manifest length overflow"))?;
    let body = bytes
        .get(8..8usize.saturating_add(len))
        .ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Vec<Entry> = serde_json::from_slice(body)?;
    let mut rest = &bytes[8 + len..];
    let mut names = Vec::with_capacity(manifest.len());
    let mut values = Vec::with_capacity(manifest.len());
    for e in manifest {
        let count = e.shape[0] * e.shape[1];
        if rest.len() < 8 * count {
            return Err(bad(&format!("values for {} are truncated", e.name)));
        }
        let (chunk, tail) = rest.split_at(8 * count);
        let data = chunk
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        values.push(Matrix::from_vec(e.shape[0], e.shape[1], data));
        names.push(e.name);
        rest = tail;
    }
    if !rest.is_empty() {
        return Err(bad(&format!("{} trailing bytes", rest.len())));
    }
    Ok(ModelParams { names, values })
}

pub fn save(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(params)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
