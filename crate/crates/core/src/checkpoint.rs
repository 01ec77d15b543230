//! Named-parameter container shared by backbone checkpoints and adapter files.
//!
//! Layout: the 8-byte magic `WLFCKPT1`, a little-endian `u64` header length,
//! a JSON header `{ "meta": …, "tensors": [{name, shape, trainable}, …] }`,
//! then every tensor's values as little-endian `f64` in header order.
//! Values are stored as raw bit patterns, so a round trip is bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Parameter, Tensor};

const MAGIC: &[u8; 8] = b"WLFCKPT1";

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

pub fn to_bytes(meta: &serde_json::Value, params: &[&Parameter]) -> Result<Vec<u8>> {
    let header = Header {
        meta: meta.clone(),
        tensors: params
            .iter()
            .map(|p| Entry { name: p.name.clone(), shape: p.value.shape().to_vec(), trainable: p.trainable })
            .collect(),
    };
    let hb = serde_json::to_vec(&header)?;
    let n: usize = params.iter().map(|p| p.value.len()).sum();
    let mut out = Vec::with_capacity(16 + hb.len() + 8 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(hb.len() as u64).to_le_bytes());
    out.extend_from_slice(&hb);
    for p in params {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(serde_json::Value, Vec<Parameter>)> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("not a parameter container (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| Error::Format("truncated header length".into()))?;
    let hl = u64::from_le_bytes(len) as usize;
    if r.len() < hl {
        return Err(Error::Format("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&r[..hl])?;
    r = &r[hl..];
    let mut params = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        if r.len() < 8 * n {
            return Err(Error::Format(format!("truncated data for {}", e.name)));
        }
        let data =
            r[..8 * n].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        r = &r[8 * n..];
        params.push(Parameter::new(e.name, Tensor::new(e.shape, data)?, e.trainable));
    }
    if !r.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", r.len())));
    }
    Ok((header.meta, params))
}

pub fn write(path: &Path, meta: &serde_json::Value, params: &[&Parameter]) -> Result<u64> {
    let bytes = to_bytes(meta, params)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(bytes.len() as u64)
}

pub fn read(path: &Path) -> Result<(serde_json::Value, Vec<Parameter>)> {
    from_bytes(&fs::read(path)?)
}

/// Takes the parameter called `name` out of `params`.
pub(crate) fn take(params: &mut Vec<Parameter>, name: &str) -> Result<Parameter> {
    let i =
        params.iter().position(|p| p.name == name).ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
    Ok(params.swap_remove(i))
}
