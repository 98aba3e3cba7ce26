use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;
use crate::Failure;

/// Everything needed to rerun a command: the canonical argument list, the
/// fully resolved configuration and digests of every input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    /// path -> hex SHA-256
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
}

pub fn digest_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

impl RunManifest {
    pub fn new(command: &Command, argv: &[String], inputs: &[PathBuf], seed: Option<u64>) -> Result<Self, Failure> {
        let mut digests = BTreeMap::new();
        for p in inputs {
            digests.insert(p.display().to_string(), digest_file(p)?);
        }
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.name().into(),
            argv: argv.to_vec(),
            config: serde_json::to_value(command).map_err(|e| Failure::Runtime(e.to_string()))?,
            inputs: digests,
            seed,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), Failure> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
        }
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Failure::Runtime(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
    }

    /// Errors if the tool version differs or any input changed.
    pub fn verify(&self) -> Result<(), Failure> {
        if self.version != env!("CARGO_PKG_VERSION") {
            return Err(Failure::Runtime(format!(
                "manifest was written by version {}, this is {}",
                self.version,
                env!("CARGO_PKG_VERSION")
            )));
        }
        for (path, digest) in &self.inputs {
            if &digest_file(Path::new(path))? != digest {
                return Err(Failure::Runtime(format!("input {path} changed since the manifest was written")));
            }
        }
        Ok(())
    }
}
