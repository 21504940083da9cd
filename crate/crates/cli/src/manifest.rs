use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tagweave::{Error, Result};

/// Provenance record written next to every output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub params: serde_json::Value,
    /// Path to SHA-256 hex digest.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Collects the files a command reads and writes.
#[derive(Debug, Default)]
pub struct Run {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn input<'a>(&mut self, path: &'a Path) -> &'a Path {
        self.inputs.push(path.to_path_buf());
        path
    }

    pub fn output<'a>(&mut self, path: &'a Path) -> &'a Path {
        self.outputs.push(path.to_path_buf());
        path
    }

    /// Hashes everything recorded and writes the manifest to `dest`.
    pub fn finish(self, command: &str, params: &impl Serialize, dest: &Path) -> Result<()> {
        let digest = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>> {
            paths
                .iter()
                .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
                .collect()
        };
        let manifest = RunManifest {
            tool: "tagweave",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            params: serde_json::to_value(params)?,
            inputs: digest(&self.inputs)?,
            outputs: digest(&self.outputs)?,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(dest, text).map_err(|e| io_error(dest, e))
    }
}

/// `<path>.manifest.json`
pub fn beside(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
