use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.json";

/// Record of one command run, written last.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub wall_time_s: f64,
    /// sha256 of each output, keyed by file name.
    pub checksums: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

impl RunManifest {
    /// Checksums every output in `dir` and writes the manifest through a
    /// temporary file and a rename.
    pub fn write(mut self, dir: &Path) -> io::Result<()> {
        for name in &self.outputs {
            self.checksums.insert(name.clone(), sha256_file(&dir.join(name))?);
        }
        let text = serde_json::to_string_pretty(&self).map_err(io::Error::other)?;
        let tmp = dir.join(format!("{FILE_NAME}.tmp"));
        fs::write(&tmp, text + "\n")?;
        fs::rename(&tmp, dir.join(FILE_NAME))
    }
}
