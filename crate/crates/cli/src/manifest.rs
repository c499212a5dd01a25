//! Reproducibility manifests. Every artifact-writing command drops a
//! `<artifact>.manifest.json` beside its output recording the tool version,
//! the fully resolved configuration (seeds included), and SHA-256 digests of
//! all inputs and outputs. Nothing time-dependent goes in, so identical runs
//! produce identical manifests.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
struct ToolInfo {
    name: &'static str,
    version: &'static str,
    manifest_format: u32,
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    tool: ToolInfo,
    command: String,
    config: serde_json::Value,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes =
        std::fs::read(path).with_context(|| format!("digesting input {}", path.display()))?;
    Ok(FileDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) })
}

/// Writes `<artifact>.manifest.json`. `config` should be the fully resolved
/// effective configuration (flags merged over the config file and defaults).
pub fn write_manifest(
    command: &str,
    config: serde_json::Value,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<PathBuf> {
    let manifest = Manifest {
        tool: ToolInfo {
            name: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            manifest_format: 1,
        },
        command: command.to_string(),
        config,
        inputs: inputs.iter().map(|p| digest_file(p)).collect::<Result<_>>()?,
        outputs: outputs.iter().map(|p| digest_file(p)).collect::<Result<_>>()?,
    };
    let primary = outputs.first().expect("manifest needs at least one output artifact");
    let path = PathBuf::from(format!("{}.manifest.json", primary.display()));
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n")
        .with_context(|| format!("writing manifest {}", path.display()))?;
    Ok(path)
}
