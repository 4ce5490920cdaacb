use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::scenario::hex;

#[derive(Clone, Debug, Serialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Output directory that records every file written through it.
pub struct OutDir {
    root: PathBuf,
    records: Vec<ArtifactRecord>,
    started: Instant,
    started_unix: u64,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)?;
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Ok(Self { root: root.to_path_buf(), records: Vec::new(), started: Instant::now(), started_unix })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, data: &[u8]) -> Result<(), CliError> {
        fs::write(self.root.join(name), data)?;
        self.records.push(ArtifactRecord { path: name.to_string(), bytes: data.len(), sha256: hex(&Sha256::digest(data)) });
        Ok(())
    }

    pub fn json(&mut self, name: &str, v: &serde_json::Value) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    /// Runs a CSV writer into a buffer and stores the result.
    pub fn csv<F: FnOnce(&mut Vec<u8>) -> csv::Result<()>>(&mut self, name: &str, f: F) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn artifacts(&self) -> &[ArtifactRecord] {
        &self.records
    }

    pub fn finish(mut self, header: serde_json::Value) -> Result<serde_json::Value, CliError> {
        let mut m = header;
        m["tool"] = "geolab".into();
        m["version"] = env!("CARGO_PKG_VERSION").into();
        m["started_unix"] = self.started_unix.into();
        m["wall_time_s"] = self.started.elapsed().as_secs_f64().into();
        m["artifacts"] = serde_json::to_value(&self.records).expect("records serialize");
        let mut s = serde_json::to_string_pretty(&m).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        fs::write(self.root.join("manifest.json"), s)?;
        self.records.clear();
        Ok(m)
    }
}
