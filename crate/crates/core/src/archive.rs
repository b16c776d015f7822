//! `.fvwt` weight archives.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FVWT" | version u16 | doc_len u32 | doc (UTF-8 JSON) | count u32 | entries
//! entry: name_len u32 | name | dtype u8 (0 = f32) | ndim u8 | dims u32 * ndim | data
//! ```
//!
//! A model archive's document is `{"config": VariantConfig, "mode": ...}`; a
//! plain tensor archive (inputs, logits) uses `{"kind": "tensor"}`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::write_atomic;
use crate::blocks::Mode;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::zoo::{Model, VariantConfig};

pub const MAGIC: &[u8; 4] = b"FVWT";
pub const VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    config: VariantConfig,
    mode: Mode,
}

/// Serializes a document and tensor table into archive bytes.
pub fn encode(doc: &serde_json::Value, tensors: &[NamedTensor]) -> Vec<u8> {
    let doc = serde_json::to_vec(doc).expect("json value serializes");
    let payload: usize = tensors.iter().map(|t| 6 + t.name.len() + 4 * (t.dims.len() + t.data.len())).sum();
    let mut out = Vec::with_capacity(14 + doc.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(doc.len() as u32).to_le_bytes());
    out.extend_from_slice(&doc);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(DTYPE_F32);
        out.push(t.dims.len() as u8);
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Archive {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(format!(
                "truncated file: need {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
}

/// Parses archive bytes; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(serde_json::Value, Vec<NamedTensor>)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.err("not an FVWT archive (bad magic)"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(r.err(format!("unsupported format version {version}, expected {VERSION}")));
    }
    let doc_len = r.u32("document length")?;
    let doc = serde_json::from_slice(r.take(doc_len, "document")?)
        .map_err(|e| r.err(format!("bad config document: {e}")))?;
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    let mut seen = BTreeSet::new();
    for _ in 0..count {
        let name_len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| r.err("tensor name is not UTF-8"))?
            .to_string();
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(r.err(format!("tensor `{name}` has unsupported dtype code {dtype}")));
        }
        let ndim = r.u8("ndim")? as usize;
        let dims = (0..ndim).map(|_| r.u32("dims")).collect::<Result<Vec<_>>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| r.err(format!("tensor `{name}` is too large")))?;
        let data = r
            .take(len, &format!("tensor `{name}`"))?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !seen.insert(name.clone()) {
            return Err(r.err(format!("duplicate tensor name `{name}`")));
        }
        tensors.push(NamedTensor { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes after the tensor table", bytes.len() - r.pos)));
    }
    Ok((doc, tensors))
}

/// Archive bytes of a model's parameters.
pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    let doc = serde_json::to_value(ModelDoc {
        config: model.config.clone(),
        mode: model.mode,
    })
    .expect("config serializes");
    let mut tensors = Vec::new();
    model.visit_params(&mut |name, dims, data| {
        tensors.push(NamedTensor {
            name: name.to_string(),
            dims: dims.to_vec(),
            data: data.to_vec(),
        })
    });
    encode(&doc, &tensors)
}

/// Rebuilds the structure described by the embedded config, then binds every
/// tensor by name.
pub fn model_from_bytes(bytes: &[u8], path: &Path) -> Result<Model> {
    let (doc, tensors) = decode(bytes, path)?;
    let err = |reason: String| Error::Archive {
        path: path.to_path_buf(),
        reason,
    };
    let doc: ModelDoc = serde_json::from_value(doc).map_err(|e| err(format!("not a model archive: {e}")))?;
    let mut model = Model::build(&doc.config, 0)?;
    if doc.mode == Mode::Inference {
        model = model.reparameterize()?;
    }
    let mut by_name: BTreeMap<String, NamedTensor> = tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    let mut missing = Vec::new();
    let mut bad_dims = Vec::new();
    model.visit_params_mut(&mut |name, dims, data| match by_name.remove(name) {
        None => missing.push(name.to_string()),
        Some(t) if t.dims != dims => bad_dims.push(format!("{name} (expected {dims:?}, found {:?})", t.dims)),
        Some(t) => *data = t.data,
    });
    let extra: Vec<String> = by_name.into_keys().collect();
    if !missing.is_empty() || !extra.is_empty() || !bad_dims.is_empty() {
        let mut parts = Vec::new();
        if !missing.is_empty() {
            parts.push(format!("missing tensors: {}", missing.join(", ")));
        }
        if !extra.is_empty() {
            parts.push(format!("unexpected tensors: {}", extra.join(", ")));
        }
        if !bad_dims.is_empty() {
            parts.push(format!("wrong dims: {}", bad_dims.join(", ")));
        }
        return Err(err(format!("name mismatch; {}", parts.join("; "))));
    }
    Ok(model)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_weights(model: &Model, path: &Path) -> Result<()> {
    write_atomic(path, &model_to_bytes(model))
}

pub fn load_weights(path: &Path) -> Result<Model> {
    model_from_bytes(&read(path)?, path)
}

/// Writes a single NCHW tensor archive.
pub fn save_tensor(path: &Path, name: &str, tensor: &Tensor) -> Result<()> {
    let t = NamedTensor {
        name: name.to_string(),
        dims: tensor.dims().to_vec(),
        data: tensor.data().to_vec(),
    };
    write_atomic(path, &encode(&serde_json::json!({"kind": "tensor"}), &[t]))
}

/// Reads a single-tensor archive; 2-d tensors are returned as (N, C, 1, 1).
pub fn load_tensor(path: &Path) -> Result<(String, Tensor)> {
    let (_, mut tensors) = decode(&read(path)?, path)?;
    let err = |reason: String| Error::Archive {
        path: path.to_path_buf(),
        reason,
    };
    if tensors.len() != 1 {
        return Err(err(format!("expected exactly one tensor, found {}", tensors.len())));
    }
    let t = tensors.pop().unwrap();
    let dims: [usize; 4] = match t.dims.as_slice() {
        &[n, c, h, w] => [n, c, h, w],
        &[n, c] => [n, c, 1, 1],
        other => return Err(err(format!("tensor `{}` has unsupported rank {}", t.name, other.len()))),
    };
    Ok((t.name, Tensor::new(dims, t.data)?))
}

/// Writes logits of shape (N, classes).
pub fn save_logits(path: &Path, batch: usize, classes: usize, data: &[f32]) -> Result<()> {
    let t = NamedTensor {
        name: "logits".into(),
        dims: vec![batch, classes],
        data: data.to_vec(),
    };
    write_atomic(path, &encode(&serde_json::json!({"kind": "tensor"}), &[t]))
}
