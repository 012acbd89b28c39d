//! Run manifests. Every artifact-producing command writes exactly one
//! manifest beside its outputs, capturing enough to re-run it: the command,
//! the resolved configuration, the seed, and the paths touched.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Absent for commands that use no randomness.
    pub seed: Option<u64>,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub duration_seconds: f64,
}

/// Accumulates manifest fields over the life of a command and stamps the
/// wall-clock duration when written.
pub struct ManifestBuilder {
    started: Instant,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed: None,
                config: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                duration_seconds: 0.0,
            },
        }
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.manifest.seed = Some(seed);
        self
    }

    pub fn config(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.manifest.config.insert(key.to_string(), value.to_string());
        self
    }

    /// Insert every line of a key=value block as one config entry.
    pub fn config_block(&mut self, block: &str) -> &mut Self {
        for line in block.lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.config(k.trim(), v.trim());
            }
        }
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.manifest.inputs.push(path.display().to_string());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.manifest.outputs.push(path.display().to_string());
        self
    }

    /// Serialize to `path`, stamping the elapsed wall-clock time.
    pub fn write(mut self, path: &Path) -> Result<()> {
        self.manifest.duration_seconds = self.started.elapsed().as_secs_f64();
        let json = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(path, json + "\n")
            .with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(())
    }
}
