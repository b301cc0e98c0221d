//! Run manifests: configuration, seeds and file digests of a run.
//!
//! Serialized as sorted `key=value` lines so that identical runs produce
//! identical manifests. No timestamps are recorded.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{EpitomeError, Result};
use crate::model::{format_metadata, parse_metadata};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            ..Self::default()
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.config.insert(key.to_string(), value.to_string());
        self
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<&mut Self> {
        let path = path.as_ref();
        self.inputs.insert(path.display().to_string(), file_digest(path)?);
        Ok(self)
    }

    pub fn add_output(&mut self, path: impl AsRef<Path>) -> Result<&mut Self> {
        let path = path.as_ref();
        self.outputs.insert(path.display().to_string(), file_digest(path)?);
        Ok(self)
    }

    pub fn to_text(&self) -> String {
        let mut all = BTreeMap::new();
        all.insert("tool.version".to_string(), self.tool_version.clone());
        all.insert("command".to_string(), self.command.clone());
        for (prefix, map) in [
            ("config.", &self.config),
            ("input.", &self.inputs),
            ("output.", &self.outputs),
        ] {
            for (k, v) in map {
                all.insert(format!("{prefix}{k}"), v.clone());
            }
        }
        format_metadata(&all)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = Self::default();
        for (k, v) in parse_metadata(text)? {
            if k == "tool.version" {
                m.tool_version = v;
            } else if k == "command" {
                m.command = v;
            } else if let Some(rest) = k.strip_prefix("config.") {
                m.config.insert(rest.to_string(), v);
            } else if let Some(rest) = k.strip_prefix("input.") {
                m.inputs.insert(rest.to_string(), v);
            } else if let Some(rest) = k.strip_prefix("output.") {
                m.outputs.insert(rest.to_string(), v);
            } else {
                return Err(EpitomeError::Format(format!("unknown manifest key {k}")));
            }
        }
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Checks that every recorded output exists with the recorded digest.
    pub fn verify_outputs(&self) -> Result<()> {
        for (path, digest) in &self.outputs {
            let actual = file_digest(Path::new(path))?;
            if &actual != digest {
                return Err(EpitomeError::Format(format!(
                    "digest mismatch for {path}: manifest {digest}, file {actual}"
                )));
            }
        }
        Ok(())
    }
}

/// Manifest path for an output file: `<output>.manifest`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Hex SHA-256 of a file.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}
