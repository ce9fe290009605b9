//! On-disk stage checkpoints.
//!
//! A checkpoint is a directory holding `weights.safetensors`,
//! `optimizer.safetensors`, `meta.json` and `losses.jsonl`; try-on stages
//! with a discriminator add `disc.safetensors` and `disc_optimizer.safetensors`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::Config;
use crate::adversarial::AdvMode;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const WEIGHTS: &str = "weights.safetensors";
pub const OPTIMIZER: &str = "optimizer.safetensors";
pub const DISC_WEIGHTS: &str = "disc.safetensors";
pub const DISC_OPTIMIZER: &str = "disc_optimizer.safetensors";
pub const META: &str = "meta.json";
pub const LOSSES: &str = "losses.jsonl";
pub const DIAGNOSTICS: &str = "diagnostics.json";

/// Environment variable naming the directory for runs and caches.
pub const HOME_ENV: &str = "TRYON_HOME";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainStage {
    Warp,
    Parse,
    Tryon,
}

impl TrainStage {
    pub const ALL: [TrainStage; 3] = [TrainStage::Warp, TrainStage::Parse, TrainStage::Tryon];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainStage::Warp => "warp",
            TrainStage::Parse => "parse",
            TrainStage::Tryon => "tryon",
        }
    }
}

impl fmt::Display for TrainStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainStage::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown stage `{s}` (warp, parse, tryon)")))
    }
}

/// Losses of one optimisation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: u64,
    pub total: f64,
    pub terms: BTreeMap<String, f64>,
}

impl LossRecord {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.get(name).copied()
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.terms.values().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub stage: TrainStage,
    pub adv_mode: Option<AdvMode>,
    /// Optimisation steps completed.
    pub iteration: u64,
    pub seed: u64,
    pub config: Config,
    pub last: Option<LossRecord>,
}

/// Directory tree of one training run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// `$TRYON_HOME/runs/<name>`, with `.tryon` in the working directory as fallback home.
    pub fn named(name: &str) -> Self {
        Self::new(tryon_home().join("runs").join(name))
    }

    pub fn stage_dir(&self, stage: TrainStage, mode: AdvMode) -> PathBuf {
        match stage {
            TrainStage::Tryon => self.root.join(format!("tryon-{}", mode.as_str())),
            other => self.root.join(other.as_str()),
        }
    }
}

pub fn tryon_home() -> PathBuf {
    std::env::var_os(HOME_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".tryon"))
}

pub fn write_meta(dir: &Path, meta: &CheckpointMeta) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(META);
    fs::write(&path, serde_json::to_string_pretty(meta)?).map_err(|e| Error::io(&path, e))
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join(META);
    if !path.exists() {
        return Err(Error::MissingCheckpoint(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Config(format!(
            "checkpoint {} has format version {}, expected {FORMAT_VERSION}",
            dir.display(),
            meta.format_version
        )));
    }
    Ok(meta)
}

pub fn write_losses(dir: &Path, history: &[LossRecord], append: bool) -> Result<()> {
    use std::io::Write;
    let path = dir.join(LOSSES);
    let mut file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let mut text = String::new();
    for r in history {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    file.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))
}

pub fn read_losses(dir: &Path) -> Result<Vec<LossRecord>> {
    let path = dir.join(LOSSES);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// SHA-256 over the names and bytes of every file directly inside `dir`, in name order.
pub fn dir_digest(dir: &Path) -> Result<String> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        h.update(p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default().as_bytes());
        h.update([0u8]);
        h.update(fs::read(&p).map_err(|e| Error::io(&p, e))?);
    }
    Ok(hex::encode(h.finalize()))
}
