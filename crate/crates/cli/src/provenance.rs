use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cdnet_core::Error;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const RUN_FILE: &str = "run.json";

/// Record of one invocation: enough to re-run it and check its outputs.
#[derive(Serialize)]
pub struct RunRecord {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: Option<u64>,
    pub config: Value,
    /// SHA-256 of every input file, keyed by path as given.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every output file, keyed by path relative to the output directory.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Files under `path`, recursively, sorted.
pub fn files_under(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    if path.is_file() {
        out.push(path.to_path_buf());
        return Ok(out);
    }
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        for entry in entries {
            let p = entry
                .map_err(|e| Error::Io {
                    path: dir.clone(),
                    source: e,
                })?
                .path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn hash_inputs(paths: &[PathBuf]) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for p in paths {
        for f in files_under(p)? {
            out.insert(f.display().to_string(), sha256_file(&f)?);
        }
    }
    Ok(out)
}

pub fn hash_outputs(out_dir: &Path, written: &[PathBuf]) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for f in written {
        let rel = f.strip_prefix(out_dir).unwrap_or(f);
        out.insert(rel.display().to_string(), sha256_file(f)?);
    }
    Ok(out)
}

pub fn write(record: &RunRecord, out_dir: &Path) -> Result<(), CliError> {
    let path = out_dir.join(RUN_FILE);
    let mut text = serde_json::to_string_pretty(record).map_err(Error::from)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
    Ok(())
}
