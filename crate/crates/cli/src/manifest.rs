//! Run manifests: enough to repeat a run and to check its artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, Config};

#[derive(Debug, Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: String,
    command: &'a str,
    args: &'a [String],
    seed: u64,
    config_hash: String,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
    config: &'a Config,
}

/// Collects the files a run reads and writes.
#[derive(Debug, Default)]
pub struct Recorder {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Record a panel CSV together with its sidecar.
    pub fn panel_input(&mut self, path: &Path) {
        self.input(path);
        self.input(&stwind::panel_io::sidecar_path(path));
    }

    pub fn panel_output(&mut self, path: &Path) {
        self.output(path);
        self.output(&stwind::panel_io::sidecar_path(path));
    }

    /// Write `manifest.toml` into `dir`. Paths are stored relative to `dir`
    /// where possible so that output trees can be moved.
    pub fn write(&self, dir: &Path, command: &str, args: &[String], config: &Config) -> anyhow::Result<PathBuf> {
        let entries = |paths: &[PathBuf]| -> anyhow::Result<Vec<FileEntry>> {
            paths
                .iter()
                .map(|p| {
                    let bytes = fs::read(p).with_context(|| format!("hashing {}", p.display()))?;
                    let shown = p.strip_prefix(dir).unwrap_or(p);
                    Ok(FileEntry {
                        path: shown.display().to_string(),
                        sha256: hex(&Sha256::digest(&bytes)),
                    })
                })
                .collect()
        };
        let manifest = Manifest {
            tool: format!("stwind {}", env!("CARGO_PKG_VERSION")),
            command,
            args,
            seed: config.seed,
            config_hash: config.hash(),
            inputs: entries(&self.inputs)?,
            outputs: entries(&self.outputs)?,
            config,
        };
        let path = dir.join("manifest.toml");
        fs::write(&path, toml::to_string(&manifest)?)?;
        Ok(path)
    }
}
