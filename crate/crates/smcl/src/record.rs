//! Experiment records and fingerprints.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use smcl_core::{EvalReport, TrainConfig};

use crate::dataset::hex;
use crate::error::{IoContext, Result};

pub const RECORD_FILE: &str = "record.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.smcl";

/// SHA-256 of the config's canonical JSON (fields in declaration order).
pub fn config_fingerprint(cfg: &TrainConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex(&Sha256::digest(json))
}

/// Run directory name: a short hash over the config and dataset fingerprints.
pub fn run_id(config_fp: &str, dataset_fp: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_fp.as_bytes());
    hasher.update(b"/");
    hasher.update(dataset_fp.as_bytes());
    hex(&hasher.finalize())[..16].to_string()
}

/// `git describe` of the working tree, or the crate version outside a checkout.
pub fn code_revision() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--abbrev=12"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    /// Non-finite loss; the checkpoint holds the last good state.
    Aborted { epoch: usize, step: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub run_id: String,
    pub label: String,
    pub config: TrainConfig,
    pub config_fingerprint: String,
    pub dataset_fingerprint: String,
    pub revision: String,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub train_histogram: Vec<usize>,
    pub final_report: Option<EvalReport>,
    pub status: RunStatus,
}

impl ExperimentRecord {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RECORD_FILE);
        fs::write(&path, serde_json::to_vec_pretty(self)?).at(&path)
    }

    /// Loads `path`, or `path/record.json` when given a run directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(RECORD_FILE) } else { path.to_path_buf() };
        let bytes = fs::read(&file).at(&file)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}
