//! Extractor model file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "SPKXEXT\0"
//! version    u32
//! header_len u32
//! header     header_len bytes of UTF-8 JSON:
//!            {"format_version", "variant", "config", "tensors": [{"name", "shape"}]}
//! payload    every tensor in header order, row-major f32
//! ```

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ExtractorConfig, ExtractorModel, TensorInfo, Variant};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SPKXEXT\0";

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    variant: Variant,
    config: ExtractorConfig,
    tensors: Vec<TensorInfo>,
}

pub fn save_model(path: impl AsRef<Path>, model: &ExtractorModel) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        format_version: MODEL_FORMAT_VERSION,
        variant: model.variant(),
        config: model.config().clone(),
        tensors: model.params().tensors().to_vec(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::ModelFile(e.to_string()))?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
    write(MAGIC)?;
    write(&MODEL_FORMAT_VERSION.to_le_bytes())?;
    write(&(json.len() as u32).to_le_bytes())?;
    write(&json)?;
    for &v in model.params().as_slice() {
        write(&(v as f32).to_le_bytes())?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ExtractorModel> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::ModelFile(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not an extractor model (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != MODEL_FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let header_end = 16 + header_len;
    if bytes.len() < header_end {
        return Err(bad("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&bytes[16..header_end]).map_err(|e| bad(&e.to_string()))?;
    if header.variant != header.config.variant {
        return Err(bad("variant tag disagrees with config"));
    }
    let payload = &bytes[header_end..];
    if payload.len() % 4 != 0 {
        return Err(bad("payload is not a whole number of f32 values"));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    let model = ExtractorModel::from_params(header.config, data)?;
    let expected: Vec<(&str, &[usize])> = model
        .params()
        .tensors()
        .iter()
        .map(|t| (t.name.as_str(), t.shape.as_slice()))
        .collect();
    let found: Vec<(&str, &[usize])> = header
        .tensors
        .iter()
        .map(|t| (t.name.as_str(), t.shape.as_slice()))
        .collect();
    if expected != found {
        return Err(bad("tensor manifest does not match the architecture"));
    }
    Ok(model)
}
