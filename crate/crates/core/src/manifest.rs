//! JSON-lines manifest I/O. Paths inside manifests are stored relative to the
//! manifest's own directory so that a corpus can be moved as a unit.

use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row).map_err(|e| Error::Manifest {
            path: path.into(),
            msg: e.to_string(),
        })?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: path.into(),
            msg: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(rows)
}

/// Resolve a manifest-relative path against the manifest file location.
pub fn resolve(manifest: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        return p.to_path_buf();
    }
    manifest
        .parent()
        .map_or_else(|| p.to_path_buf(), |dir| dir.join(p))
}

/// Express `target` relative to `base_dir` when it lies underneath it.
pub fn relativize(base_dir: &Path, target: &Path) -> String {
    target
        .strip_prefix(base_dir)
        .unwrap_or(target)
        .to_string_lossy()
        .replace('\\', "/")
}
