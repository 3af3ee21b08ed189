//! Binary checkpoint files.
//!
//! Layout: the 8-byte magic `HTINYLM1`, a little-endian `u64` header length,
//! a UTF-8 JSON header, zero padding up to the next 64-byte boundary, then
//! the data section. Each tensor is stored as little-endian `f32` at an
//! `offset` relative to the start of the data section; offsets are multiples
//! of 64.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tinypeft_core::model::ClassifierModel;
use tinypeft_core::peft::{attach, freeze_base, Method};
use tinypeft_core::Tensor;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"HTINYLM1";
pub const FORMAT_VERSION: u32 = 1;
pub const ALIGN: u64 = 64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub byte_len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub config: RunConfig,
    pub tensors: Vec<TensorEntry>,
}

/// A parsed checkpoint: its config and tensors in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub tensors: Vec<(String, Tensor)>,
}

fn align(n: u64) -> u64 {
    n.div_ceil(ALIGN) * ALIGN
}

/// Serializes every parameter of `model` in canonical order.
pub fn encode(model: &ClassifierModel, config: &RunConfig) -> Vec<u8> {
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for (name, t) in model.params() {
        let byte_len = 4 * t.numel() as u64;
        entries.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            offset,
            byte_len,
        });
        offset = align(offset + byte_len);
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let data_start = align(16 + json.len() as u64);

    let mut out = Vec::with_capacity((data_start + offset) as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.resize(data_start as usize, 0);
    for ((_, t), entry) in model.params().iter().zip(&header.tensors) {
        out.resize((data_start + entry.offset) as usize, 0);
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Writes to a temporary file in the target directory, then renames it into
/// place, so a failed write never leaves a partial checkpoint.
pub fn save_checkpoint(model: &ClassifierModel, config: &RunConfig, path: &Path) -> Result<()> {
    let bytes = encode(model, config);
    let io = |source| tinypeft_core::Error::Io {
        path: path.to_owned(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(&bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|source| tinypeft_core::Error::Io {
        path: path.to_owned(),
        source,
    })?;
    decode(&bytes).map_err(|msg| CliError::Format {
        path: path.to_owned(),
        msg,
    })
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(format!(
            "bad magic: expected {:?}",
            std::str::from_utf8(MAGIC).expect("ASCII magic")
        ));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = 16u64
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or("truncated header")?;
    let header_bytes = &bytes[16..header_end as usize];

    let raw: serde_json::Value = serde_json::from_slice(header_bytes).map_err(|e| format!("header is not JSON: {e}"))?;
    match raw.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => return Err(format!("unsupported format_version {v}; expected {FORMAT_VERSION}")),
        None => return Err("header has no format_version".into()),
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| format!("bad header: {e}"))?;
    header
        .config
        .validate()
        .map_err(|e| format!("bad config in header: {e}"))?;

    let data_start = align(header_end);
    let data_len = (bytes.len() as u64).saturating_sub(data_start);
    let mut next_free = 0u64;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        if e.dtype != "f32" {
            return Err(format!("{}: unsupported dtype {:?}", e.name, e.dtype));
        }
        let numel: usize = e.shape.iter().product();
        if e.shape.is_empty() || numel == 0 || e.byte_len != 4 * numel as u64 {
            return Err(format!("{}: byte_len {} does not match shape {:?}", e.name, e.byte_len, e.shape));
        }
        if e.offset % ALIGN != 0 {
            return Err(format!("{}: offset {} is not {ALIGN}-byte aligned", e.name, e.offset));
        }
        if e.offset < next_free {
            return Err(format!("{}: offset {} overlaps the previous tensor", e.name, e.offset));
        }
        let end = e.offset.checked_add(e.byte_len).ok_or("offset overflow")?;
        if end > data_len {
            return Err(format!("{}: data runs past the end of the file (truncated?)", e.name));
        }
        next_free = end;
        let start = (data_start + e.offset) as usize;
        let data = bytes[start..start + e.byte_len as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(e.shape.clone(), data).map_err(|err| format!("{}: {err}", e.name))?;
        tensors.push((e.name.clone(), t));
    }
    Ok(Checkpoint {
        config: header.config,
        tensors,
    })
}

impl Checkpoint {
    /// Rebuilds the model described by the config, with the stored weights.
    /// Every canonical parameter must appear exactly once.
    pub fn into_model(self, path: &Path) -> Result<ClassifierModel> {
        let format = |msg: String| CliError::Format {
            path: path.to_owned(),
            msg,
        };
        let cfg = self.config.model_config()?;
        let mut model = ClassifierModel::init(&cfg, self.config.seed)?;
        match self.config.method {
            Method::None => {}
            m => attach(&mut model, &self.config.peft(m)?, self.config.seed)?,
        }
        let mut stored: HashMap<String, Tensor> = HashMap::with_capacity(self.tensors.len());
        for (name, t) in self.tensors {
            if stored.insert(name.clone(), t).is_some() {
                return Err(format(format!("tensor {name} appears twice")));
            }
        }
        let mut problem = None;
        model.for_each_param_mut(|name, t| {
            if problem.is_some() {
                return;
            }
            match stored.remove(name) {
                None => problem = Some(format!("missing tensor {name}")),
                Some(s) if s.shape() != t.shape() => {
                    problem = Some(format!("{name}: shape {:?}, expected {:?}", s.shape(), t.shape()))
                }
                Some(s) => t.data_mut().copy_from_slice(s.data()),
            }
        });
        if let Some(msg) = problem {
            return Err(format(msg));
        }
        if let Some(extra) = stored.keys().min() {
            return Err(format(format!("unexpected tensor {extra}")));
        }
        Ok(model)
    }
}

/// Reads a checkpoint and rebuilds its model.
pub fn load_checkpoint(path: &Path) -> Result<(RunConfig, ClassifierModel)> {
    let ckpt = read_checkpoint(path)?;
    let config = ckpt.config.clone();
    let mut model = ckpt.into_model(path)?;
    if config.method == Method::None {
        freeze_base(&mut model);
    }
    Ok((config, model))
}
