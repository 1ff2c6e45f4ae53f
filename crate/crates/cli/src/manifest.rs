//! Run manifests: what ran, with which configuration, on which files.
//!
//! Manifests carry no timestamps or absolute host details, so identical
//! inputs give byte-identical manifests.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub vcstar: &'static str,
    pub feature_format: &'static str,
    pub checkpoint_format: u32,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// SHA-256 of the compact JSON encoding of `config`.
    pub config_hash: String,
    pub versions: Versions,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path, shown_as: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(FileDigest {
        path: shown_as.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

pub struct ManifestBuilder {
    command: String,
    args: Vec<String>,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

impl ManifestBuilder {
    pub fn new(command: &str, args: &[String], seed: Option<u64>, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            args: args.to_vec(),
            seed,
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.inputs.push(file_digest(path, path)?);
        Ok(self)
    }

    /// Records outputs given relative to `root`.
    pub fn outputs(&mut self, root: &Path, files: &[PathBuf]) -> Result<&mut Self> {
        for f in files {
            self.outputs.push(file_digest(&root.join(f), f)?);
        }
        Ok(self)
    }

    pub fn finish(self) -> Result<RunManifest> {
        let compact = serde_json::to_vec(&self.config)?;
        Ok(RunManifest {
            command: self.command,
            args: self.args,
            seed: self.seed,
            config_hash: sha256_hex(&compact),
            config: self.config,
            versions: Versions {
                vcstar: env!("CARGO_PKG_VERSION"),
                feature_format: "VCF1",
                checkpoint_format: vcstar_core::training::CHECKPOINT_VERSION,
            },
            inputs: self.inputs,
            outputs: self.outputs,
        })
    }

    pub fn write(self, path: &Path) -> Result<()> {
        let m = self.finish()?;
        crate::write_json(path, &m)
    }
}
