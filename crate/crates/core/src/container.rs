//! Indexed container for named matrices, used for feature archives,
//! i-vector archives and back-end models.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic      8 bytes  "SPKXCNT\0"
//! version    u32
//! header_len u32
//! header     UTF-8 JSON {"format_version", "kind", "dtype", "meta", "entries": [{"name", "rows", "cols"}]}
//! payload    entries in header order, row-major, f32 or f64
//! ```

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;

pub const CONTAINER_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SPKXCNT\0";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EntryInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    dtype: Dtype,
    meta: serde_json::Value,
    entries: Vec<EntryInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub entries: Vec<(String, Mat)>,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, m: Mat) {
        self.entries.push((name.into(), m));
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn require(&self, name: &str) -> Result<&Mat> {
        self.get(name).ok_or_else(|| {
            Error::ModelFile(format!("{} container lacks tensor {name:?}", self.kind))
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
        let path = path.as_ref();
        let header = Header {
            format_version: CONTAINER_VERSION,
            kind: self.kind.clone(),
            dtype,
            meta: self.meta.clone(),
            entries: self
                .entries
                .iter()
                .map(|(name, m)| EntryInfo {
                    name: name.clone(),
                    rows: m.rows(),
                    cols: m.cols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::ModelFile(e.to_string()))?;
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
        write(MAGIC)?;
        write(&CONTAINER_VERSION.to_le_bytes())?;
        write(&(json.len() as u32).to_le_bytes())?;
        write(&json)?;
        for (_, m) in &self.entries {
            for &v in m.as_slice() {
                match dtype {
                    Dtype::F32 => write(&(v as f32).to_le_bytes())?,
                    Dtype::F64 => write(&v.to_le_bytes())?,
                }
            }
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a container and checks that it holds `kind`.
    pub fn load(path: impl AsRef<Path>, kind: &str) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |msg: String| Error::ModelFile(format!("{}: {msg}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a spkx container (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CONTAINER_VERSION {
            return Err(bad(format!("unsupported container version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let header_end = 16 + header_len;
        if bytes.len() < header_end {
            return Err(bad("truncated header".into()));
        }
        let header: Header =
            serde_json::from_slice(&bytes[16..header_end]).map_err(|e| bad(e.to_string()))?;
        if header.kind != kind {
            return Err(bad(format!(
                "expected a {kind} container, found {}",
                header.kind
            )));
        }
        let width = header.dtype.width();
        let needed: usize = header.entries.iter().map(|e| e.rows * e.cols * width).sum();
        let payload = &bytes[header_end..];
        if payload.len() != needed {
            return Err(bad(format!(
                "payload holds {} bytes, header describes {needed}",
                payload.len()
            )));
        }
        let mut offset = 0;
        let mut entries = Vec::with_capacity(header.entries.len());
        for e in header.entries {
            let n = e.rows * e.cols;
            let raw = &payload[offset..offset + n * width];
            offset += n * width;
            let data: Vec<f64> = match header.dtype {
                Dtype::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                    .collect(),
                Dtype::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            };
            entries.push((e.name, Mat::from_vec(e.rows, e.cols, data)));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            entries,
        })
    }
}
