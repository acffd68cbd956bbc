use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance of one artifact directory.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// The effective configuration, as TOML.
    pub config: String,
    pub seed: u64,
    pub version: String,
    pub out_dir: PathBuf,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Files written by the command, relative to `out_dir`.
    pub artifacts: Vec<String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Crate version plus the short git revision when one is available.
pub fn version_string() -> String {
    let rev = Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    match rev {
        Some(r) => format!("{} ({r})", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        fs::write(&path, text)?;
        Ok(path)
    }
}
