use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("PROGNOSIS_GIT_DESCRIBE"), ")");
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// One per train or evaluate invocation. Timestamps are the only fields
/// that differ between otherwise identical runs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub data: PathBuf,
    pub model_config: serde_json::Value,
    pub train_config: serde_json::Value,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    #[serde(flatten)]
    pub details: serde_json::Value,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
