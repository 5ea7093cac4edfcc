//! Run manifests: what was run, with which effective configuration, and
//! content hashes of every input and output file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::posterior_io::sha256_hex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

impl FileEntry {
    pub fn hash(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())?;
        Ok(Self { path: path.as_ref().display().to_string(), sha256: sha256_hex(&bytes) })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub software_version: String,
    pub seed: Option<u64>,
    /// Effective configuration after merging flags, config file and
    /// defaults.
    pub config: serde_json::Value,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub diagnostics: serde_json::Value,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            args,
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            config: serde_json::Value::Null,
            inputs: vec![],
            outputs: vec![],
            timings: BTreeMap::new(),
            diagnostics: serde_json::Value::Null,
            notes: vec![],
        }
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.inputs.push(FileEntry::hash(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.outputs.push(FileEntry::hash(path)?);
        Ok(())
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let v = f();
        self.timings.insert(stage.to_string(), start.elapsed().as_secs_f64());
        v
    }

    /// Writes the manifest as pretty JSON. The manifest itself is not
    /// listed among the outputs.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<PathBuf> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), json + "\n")?;
        Ok(path.as_ref().to_path_buf())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Outputs whose current content no longer matches the recorded hash.
    pub fn stale_outputs(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for f in &self.outputs {
            if FileEntry::hash(&f.path)?.sha256 != f.sha256 {
                out.push(f.path.clone());
            }
        }
        Ok(out)
    }
}
