//! Run manifest: what was run, on which inputs, producing which outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: Option<String>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn digest(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let hash = Sha256::digest(&bytes);
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hash.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

impl Manifest {
    pub fn start(command: &'static str, config: &impl Serialize, seed: Option<u64>) -> Self {
        Self {
            tool: "windcal",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: now(),
            finished_at: None,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(digest(path)?);
        Ok(())
    }

    /// Write `manifest.json` into `dir`, replacing any previous one.
    pub fn write_to_dir(mut self, dir: &Path) -> Result<()> {
        self.finished_at = Some(now());
        let path = dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&self)? + "\n";
        let tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a file in {}", dir.display()))?;
        fs::write(tmp.path(), text).with_context(|| format!("writing {}", path.display()))?;
        tmp.persist(&path).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    /// Write the manifest into the directory holding `file`.
    pub fn write_beside(self, file: &Path) -> Result<()> {
        let dir = match file.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        self.write_to_dir(&dir)
    }
}
