use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hte_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Record of one command run: what went in, what came out, what went wrong.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub data_hash: Option<String>,
    pub seed: u64,
    /// `computed` or `cached` for commands that use orthogonal scores.
    pub scores_source: Option<String>,
    pub warnings: Vec<String>,
    /// Output file name to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, u64>>,
}

impl RunManifest {
    pub fn file_name(command: &str) -> String {
        format!("manifest-{command}.json")
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err("report", path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::new("report", Error::Data(format!("{}: {e}", path.display()))))
    }
}

pub(crate) fn io_err(stage: &'static str, path: &Path, source: std::io::Error) -> CliError {
    CliError::new(
        stage,
        Error::Io {
            path: path.to_path_buf(),
            source,
        },
    )
}

/// Writes output files into one directory and keeps their hashes, the
/// warnings and (optionally) stage timings for the manifest.
pub struct RunRecorder {
    dir: PathBuf,
    pub warnings: Vec<String>,
    outputs: BTreeMap<String, String>,
    timings: Option<BTreeMap<String, u64>>,
    clock: Instant,
}

impl RunRecorder {
    pub fn create(dir: &Path, record_timings: bool) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| io_err("output", dir, e))?;
        Ok(RunRecorder {
            dir: dir.to_path_buf(),
            warnings: vec![],
            outputs: BTreeMap::new(),
            timings: record_timings.then(BTreeMap::new),
            clock: Instant::now(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_err("output", parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| io_err("output", &path, e))?;
        self.outputs
            .insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    /// Marks the end of a stage.
    pub fn lap(&mut self, stage: &str) {
        if let Some(t) = &mut self.timings {
            t.insert(stage.to_string(), self.clock.elapsed().as_millis() as u64);
            self.clock = Instant::now();
        }
    }

    pub fn finish(
        mut self,
        command: &str,
        config_hash: String,
        data_hash: Option<String>,
        seed: u64,
        scores_source: Option<String>,
    ) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            data_hash,
            seed,
            scores_source,
            warnings: std::mem::take(&mut self.warnings),
            outputs: std::mem::take(&mut self.outputs),
            timings_ms: self.timings.take(),
        };
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        json.push('\n');
        let path = self.dir.join(RunManifest::file_name(command));
        std::fs::write(&path, json).map_err(|e| io_err("output", &path, e))?;
        Ok(manifest)
    }
}
