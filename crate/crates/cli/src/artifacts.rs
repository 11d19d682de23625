//! On-disk artifacts: datasets with digests, checkpoints with JSON sidecars.

use std::path::{Path, PathBuf};

use mplx::checkpoint;
use mplx::model::{Fade, ModelConfig};
use mplx::sim::dataset::{sha256_hex, Dataset};
use mplx::sim::EnvConfig;
use mplx::train::{StageRecord, TrainConfig, TrainMode};
use mplx::Model;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const DATASET_FILE: &str = "episodes.jsonl";
pub const BEST_STEM: &str = "best";
pub const SIDECAR_VERSION: u32 = 1;

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    checkpoint::write_atomic(path, text.as_bytes()).map_err(|e| CliError::at(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// A dataset path may name the JSON-lines file or the directory holding it.
pub fn dataset_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(DATASET_FILE)
    } else {
        path.to_path_buf()
    }
}

pub struct LoadedDataset {
    pub path: PathBuf,
    pub digest: String,
    pub data: Dataset,
}

pub fn load_dataset(path: &Path) -> Result<LoadedDataset> {
    let path = dataset_file(path);
    let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| CliError::io(&path, e))?;
    let data = Dataset::parse(text).map_err(|e| CliError::at(&path, e))?;
    Ok(LoadedDataset {
        digest: sha256_hex(&bytes),
        path,
        data,
    })
}

/// Everything needed to rebuild and audit a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub mode: TrainMode,
    pub layers: usize,
    pub active_stages: usize,
    /// blend of the newest layer; 1 unless training stopped mid fade-in
    pub alpha: f64,
    pub fade_layer: Option<usize>,
    pub epoch: usize,
    pub best_val: f64,
    pub checkpoint_digest: String,
    pub dataset_digest: String,
    pub train_episodes: usize,
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub lineage: Vec<StageRecord>,
}

impl Sidecar {
    pub fn fade(&self) -> Option<Fade> {
        self.fade_layer.map(|layer| Fade {
            layer,
            alpha: self.alpha,
        })
    }
}

/// Provenance shared by every checkpoint of one training run.
pub struct RunInfo<'a> {
    pub dataset_digest: &'a str,
    pub train_episodes: usize,
    pub env: &'a EnvConfig,
    pub train: &'a TrainConfig,
}

pub fn save_checkpoint(
    dir: &Path,
    stem: &str,
    model: &Model,
    fade: Option<Fade>,
    lineage: &[StageRecord],
    run: &RunInfo<'_>,
) -> Result<PathBuf> {
    let path = dir.join(format!("{stem}.ckpt"));
    let bytes = checkpoint::encode(&model.params);
    checkpoint::write_atomic(&path, &bytes).map_err(|e| CliError::at(&path, e))?;
    let last = lineage.last();
    let sidecar = Sidecar {
        format_version: SIDECAR_VERSION,
        mode: run.train.mode,
        layers: model.config.layers,
        active_stages: model.active_stages(),
        alpha: fade.map_or(1.0, |f| f.alpha),
        fade_layer: fade.map(|f| f.layer),
        epoch: last.map_or(0, |r| r.best_epoch),
        best_val: last.map_or(f64::NAN, |r| r.best_val),
        checkpoint_digest: sha256_hex(&bytes),
        dataset_digest: run.dataset_digest.to_string(),
        train_episodes: run.train_episodes,
        env: run.env.clone(),
        model: model.config.clone(),
        train: run.train.clone(),
        lineage: lineage.to_vec(),
    };
    write_json(&path.with_extension("json"), &sidecar)?;
    Ok(path)
}

pub struct LoadedCheckpoint {
    pub path: PathBuf,
    pub model: Model,
    pub sidecar: Sidecar,
}

/// Loads `path` (a `.ckpt` file or a training directory) and its sidecar.
pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let path = if path.is_dir() {
        path.join(format!("{BEST_STEM}.ckpt"))
    } else {
        path.to_path_buf()
    };
    let side_path = path.with_extension("json");
    let sidecar: Sidecar = read_json(&side_path)?;
    if sidecar.format_version != SIDECAR_VERSION {
        return Err(CliError::Version {
            path: side_path,
            message: format!(
                "sidecar version {} (expected {SIDECAR_VERSION})",
                sidecar.format_version
            ),
        });
    }
    let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    let params = checkpoint::decode(&bytes).map_err(|e| CliError::at(&path, e))?;
    if sha256_hex(&bytes) != sidecar.checkpoint_digest {
        return Err(CliError::Version {
            path,
            message: "checkpoint digest differs from its sidecar".into(),
        });
    }
    let model = Model::from_params(sidecar.model.clone(), params, sidecar.active_stages)
        .map_err(|e| CliError::at(&path, e))?;
    Ok(LoadedCheckpoint {
        path,
        model,
        sidecar,
    })
}
