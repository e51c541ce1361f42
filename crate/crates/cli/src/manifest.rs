//! Sidecar run records written next to every artifact.

use std::path::{Path, PathBuf};

use anyhow::Context;
use armplace::io::write_atomic;
use armplace::WorldLayout;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL: &str = "armplace";

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: Option<String>,
    pub config_digest: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub params: serde_json::Value,
}

/// SHA-256 of the canonical layout JSON, so equal layouts share a digest
/// whatever file spelling produced them.
pub fn config_digest(layout: &WorldLayout) -> String {
    hex::encode(Sha256::digest(layout.to_canonical_json().as_bytes()))
}

/// Where the sidecar for `artifact` goes: inside a directory artifact, or
/// next to a file artifact.
pub fn sidecar_path(artifact: &Path) -> PathBuf {
    if artifact.is_dir() {
        artifact.join("manifest.json")
    } else {
        let mut name = artifact.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    }
}

impl RunManifest {
    pub fn new(
        command: &'static str,
        config: Option<&Path>,
        layout: &WorldLayout,
        seed: u64,
        params: serde_json::Value,
    ) -> Self {
        Self {
            tool: TOOL,
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: config.map(|p| p.display().to_string()),
            config_digest: config_digest(layout),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            params,
        }
    }

    pub fn input(mut self, p: &Path) -> Self {
        self.inputs.push(p.display().to_string());
        self
    }

    pub fn output(mut self, p: &Path) -> Self {
        self.outputs.push(p.display().to_string());
        self
    }

    /// Writes the sidecar for `artifact`.
    pub fn write_for(&self, artifact: &Path) -> anyhow::Result<PathBuf> {
        let path = sidecar_path(artifact);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&path, text.as_bytes())
            .with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_tracks_layout_changes() {
        let a = WorldLayout::default();
        let mut b = a.clone();
        assert_eq!(config_digest(&a), config_digest(&b));
        b.tool_length += 0.01;
        assert_ne!(config_digest(&a), config_digest(&b));
        assert_eq!(config_digest(&a).len(), 64);
    }

    #[test]
    fn sidecar_sits_next_to_files_and_inside_dirs() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(sidecar_path(dir.path()), dir.path().join("manifest.json"));
        let f = dir.path().join("data.csv");
        assert_eq!(sidecar_path(&f), dir.path().join("data.csv.manifest.json"));
    }
}
