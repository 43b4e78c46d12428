//! Run directories: exclusive ownership, output bookkeeping and the manifest.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{io, CliError, Result};

const LOCK: &str = ".lock";
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub task: String,
    pub config_hash: String,
    pub code_version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Paths relative to the run directory.
    pub files: Vec<String>,
}

/// An output directory held by this process until dropped.
pub struct RunDir {
    root: PathBuf,
    files: Vec<String>,
    started: f64,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl RunDir {
    pub fn acquire(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(io(root))?;
        let lock = root.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => Ok(RunDir { root: root.to_path_buf(), files: Vec::new(), started: now() }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(root.to_path_buf())),
            Err(e) => Err(io(lock)(e)),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn record(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.root.join(name)
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.record(name);
        let text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json { path: path.clone(), source })?;
        fs::write(&path, text + "\n").map_err(io(path))
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.record(name);
        fs::write(&path, text).map_err(io(path))
    }

    pub fn write_f64s(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = self.record(name);
        fs::write(&path, bytes).map_err(io(path))
    }

    pub fn csv(&mut self, name: &str) -> Result<csv::Writer<File>> {
        let path = self.record(name);
        let file = File::create(&path).map_err(io(path))?;
        Ok(csv::Writer::from_writer(file))
    }

    /// Lists files written by a nested run under `prefix/`.
    pub fn adopt(&mut self, prefix: &str, manifest: &RunManifest) {
        for f in &manifest.files {
            self.record(&format!("{prefix}/{f}"));
        }
        self.record(&format!("{prefix}/{MANIFEST}"));
    }

    pub fn finish(mut self, task: &str, config_hash: String) -> Result<RunManifest> {
        let manifest = RunManifest {
            task: task.to_string(),
            config_hash,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: self.started,
            finished_unix: now(),
            files: std::mem::take(&mut self.files),
        };
        let path = self.root.join(MANIFEST);
        let text =
            serde_json::to_string_pretty(&manifest).map_err(|source| CliError::Json { path: path.clone(), source })?;
        fs::write(&path, text + "\n").map_err(io(path))?;
        Ok(manifest)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK));
    }
}

pub fn read_f64s(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(io(path))?;
    if bytes.len() % 8 != 0 {
        return Err(CliError::Config(format!("{} is not a whole number of f64 values", path.display())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}
