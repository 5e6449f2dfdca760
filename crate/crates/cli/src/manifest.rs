//! Run manifest written next to every output as `<out>.manifest.json`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use fiqa_opt::seed::fnv1a;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    /// 64-bit FNV-1a of the file contents, lowercase hex.
    pub fnv1a: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {} for digest", path.display()))?;
        Ok(Self {
            path: path.display().to_string(),
            fnv1a: format!("{:016x}", fnv1a(&bytes)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub duration_ms: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: serde_json::Value, inputs: &[PathBuf], outputs: &[PathBuf], elapsed: Duration) -> Result<Self> {
        Ok(Self {
            subcommand: subcommand.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config,
            inputs: inputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_>>()?,
            outputs: outputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_>>()?,
            duration_ms: elapsed.as_secs_f64() * 1e3,
        })
    }

    pub fn path_for(out: &Path) -> PathBuf {
        sibling(out, "manifest.json")
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let path = Self::path_for(out);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// `<out>.<suffix>`, keeping the full original file name.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    out.with_file_name(name)
}
