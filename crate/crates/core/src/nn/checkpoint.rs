//! JSON checkpoint container.
//!
//! ```text
//! {
//!   "format": "fluoroden-checkpoint/1",
//!   "kind": "msr2au" | "student",
//!   "arch": { ...network config... },
//!   "arch_hash": "<sha256 hex of kind + canonical arch JSON>",
//!   "params": [ { "name": "enc0.proj.weight", "shape": [16, 384, 1, 1], "data": [...] }, ... ]
//! }
//! ```
//!
//! Parameter values round-trip exactly. Loading fails when the stored hash
//! does not match the stored architecture, when the caller's expected
//! architecture differs, or when any parameter name or shape disagrees.

use std::fs;
use std::path::Path;

use ndarray::Array4;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::ParamStore;
use crate::error::{Error, Result};

pub const FORMAT: &str = "fluoroden-checkpoint/1";

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct File {
    format: String,
    kind: String,
    arch: serde_json::Value,
    arch_hash: String,
    params: Vec<ParamRecord>,
}

pub fn arch_hash<A: Serialize>(kind: &str, arch: &A) -> String {
    let json = serde_json::to_string(arch).expect("architecture serializes");
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    h.update([0u8]);
    h.update(json.as_bytes());
    hex::encode(h.finalize())
}

pub(crate) fn save<A: Serialize>(path: &Path, kind: &str, arch: &A, store: &ParamStore) -> Result<()> {
    let file = File {
        format: FORMAT.to_string(),
        kind: kind.to_string(),
        arch: serde_json::to_value(arch).expect("architecture serializes"),
        arch_hash: arch_hash(kind, arch),
        params: store
            .iter()
            .map(|(name, v)| ParamRecord {
                name: name.to_string(),
                shape: v.shape().to_vec(),
                data: v.iter().copied().collect(),
            })
            .collect(),
    };
    let text = serde_json::to_string(&file).expect("checkpoint serializes");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read<A: Serialize + DeserializeOwned + PartialEq>(
    path: &Path,
    kind: &str,
    expected: Option<&A>,
) -> Result<(A, Vec<ParamRecord>)> {
    let malformed = |reason: String| Error::MalformedCheckpoint {
        path: path.to_path_buf(),
        reason,
    };
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingFile(path.to_path_buf())),
        Err(e) => return Err(Error::io(path, e)),
    };
    let file: File = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    if file.format != FORMAT {
        return Err(malformed(format!("unknown format {:?}", file.format)));
    }
    if file.kind != kind {
        return Err(malformed(format!("holds a {} network, expected {kind}", file.kind)));
    }
    let arch: A = serde_json::from_value(file.arch).map_err(|e| malformed(format!("architecture: {e}")))?;
    let stored_hash = arch_hash(kind, &arch);
    if stored_hash != file.arch_hash {
        return Err(Error::ArchitectureMismatch {
            expected: stored_hash,
            found: file.arch_hash,
        });
    }
    if let Some(exp) = expected {
        let want = arch_hash(kind, exp);
        if want != file.arch_hash {
            return Err(Error::ArchitectureMismatch {
                expected: want,
                found: file.arch_hash,
            });
        }
    }
    Ok((arch, file.params))
}

pub(crate) fn apply(store: &mut ParamStore, records: Vec<ParamRecord>, path: &Path) -> Result<()> {
    let malformed = |reason: String| Error::MalformedCheckpoint {
        path: path.to_path_buf(),
        reason,
    };
    if records.len() != store.len() {
        return Err(malformed(format!("{} parameter arrays, network has {}", records.len(), store.len())));
    }
    for rec in records {
        let id = store
            .find(&rec.name)
            .ok_or_else(|| malformed(format!("unknown parameter {}", rec.name)))?;
        let value = Array4::from_shape_vec(
            <[usize; 4]>::try_from(rec.shape.as_slice()).map_err(|_| malformed(format!("{} is not 4-d", rec.name)))?,
            rec.data,
        )
        .map_err(|e| malformed(format!("{}: {e}", rec.name)))?;
        if value.shape() != store.get(id).shape() {
            return Err(Error::shape(store.get(id).shape(), value.shape()));
        }
        store.set(id, value)?;
    }
    Ok(())
}
