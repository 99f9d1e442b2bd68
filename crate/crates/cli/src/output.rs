//! Staged artifacts: everything a command produces is collected in memory
//! and written only once the whole computation has succeeded.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Default)]
pub struct Staged {
    files: Vec<(String, Vec<u8>)>,
}

impl Staged {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    /// Creates `dir` if needed and writes every staged file into it.
    pub fn commit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Fails early when `dir` could not later receive output: it exists but is
/// not a writable directory, or it does not exist and has no existing
/// ancestor that is one.
pub fn check_out_dir(dir: &Path) -> Result<()> {
    let mut probe = dir.to_path_buf();
    loop {
        if probe.exists() {
            if !probe.is_dir() {
                bail!("output path {} is not a directory", probe.display());
            }
            let meta = fs::metadata(&probe)?;
            if meta.permissions().readonly() {
                bail!("output directory {} is read-only", probe.display());
            }
            return Ok(());
        }
        match probe.parent() {
            Some(p) if !p.as_os_str().is_empty() => probe = p.to_path_buf(),
            _ => return Ok(()),
        }
    }
}

/// `sha256:<hex>` of the given byte slices, fed in order.
pub fn content_hash<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    format!("sha256:{}", hex::encode(h.finalize()))
}
