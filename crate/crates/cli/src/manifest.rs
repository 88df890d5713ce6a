//! Per-run provenance record: config digest, seeds, and digests of every
//! input and output file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use affect_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: BTreeMap<String, String>,
    pub config_path: String,
    pub config_sha256: String,
    /// Effective configuration with defaults filled in.
    pub config_effective: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn walk(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
            .collect::<Result<Vec<_>>>()?;
        entries.sort();
        for e in entries {
            walk(&e, out)?;
        }
    } else if path.is_file() {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Digests of every file under the given paths (files or directories),
/// sorted by path; paths relative to `base` where possible.
pub fn digest_paths(paths: &[PathBuf], base: &Path) -> Result<Vec<FileDigest>> {
    let mut files = Vec::new();
    for p in paths {
        walk(p, &mut files)?;
    }
    files.sort();
    files.dedup();
    files
        .iter()
        .map(|f| {
            let bytes = fs::metadata(f).map_err(|e| Error::io(f, e))?.len();
            Ok(FileDigest {
                path: f.strip_prefix(base).unwrap_or(f).display().to_string(),
                bytes,
                sha256: sha256_file(f)?,
            })
        })
        .collect()
}
