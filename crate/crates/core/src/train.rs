//! Training loops: joint baselines and progressive layer training.
//!
//! Progressive training fits layer 0 alone, then repeatedly freezes every existing encoder
//! stage together with its message head, grows the next stage and fades its messages in.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{Aggregation, Batch, Fade, LatentMode, Model, ModelConfig};
use crate::params::{AdamConfig, ParamStore};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::sim::{EnvConfig, Episode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainMode {
    #[serde(rename = "sg")]
    Sg,
    #[serde(rename = "mg")]
    Mg,
    #[serde(rename = "mg-plt")]
    MgPlt,
    #[serde(rename = "edge-type")]
    EdgeType,
    #[serde(rename = "edge-type-skip1")]
    EdgeTypeSkip1,
    #[serde(rename = "sigmoid")]
    Sigmoid,
}

impl TrainMode {
    pub const ALL: [TrainMode; 6] = [
        TrainMode::Sg,
        TrainMode::Mg,
        TrainMode::MgPlt,
        TrainMode::EdgeType,
        TrainMode::EdgeTypeSkip1,
        TrainMode::Sigmoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sg => "sg",
            Self::Mg => "mg",
            Self::MgPlt => "mg-plt",
            Self::EdgeType => "edge-type",
            Self::EdgeTypeSkip1 => "edge-type-skip1",
            Self::Sigmoid => "sigmoid",
        }
    }

    pub fn latent_mode(self) -> LatentMode {
        match self {
            Self::Sg | Self::Mg | Self::MgPlt => LatentMode::Multiplex,
            Self::EdgeType | Self::EdgeTypeSkip1 => LatentMode::EdgeType,
            Self::Sigmoid => LatentMode::Sigmoid,
        }
    }
}

impl FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown training mode '{s}'")))
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FadeUnit {
    Steps,
    Epochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub layers: usize,
    pub hidden: usize,
    pub lr: f64,
    pub plateau_decay: f64,
    pub plateau_patience: usize,
    pub stop_patience: usize,
    pub batch_size: usize,
    pub fade_in: usize,
    pub fade_unit: FadeUnit,
    pub max_epochs: usize,
    pub seed: u64,
    pub aggregation: Aggregation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::MgPlt,
            layers: 2,
            hidden: 64,
            lr: 1e-3,
            plateau_decay: 0.9,
            plateau_patience: 5,
            stop_patience: 20,
            batch_size: 64,
            fade_in: 500,
            fade_unit: FadeUnit::Steps,
            max_epochs: 500,
            seed: 0,
            aggregation: Aggregation::Sum,
        }
    }
}

impl TrainConfig {
    /// Learning rate and stopping patience of the original long-running setup.
    pub fn use_paper_hparams(&mut self) {
        self.lr = 1e-6;
        self.stop_patience = 100;
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config("batch_size, hidden and layers must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.plateau_decay > 0.0 && self.plateau_decay <= 1.0) {
            return Err(Error::Config("plateau_decay must lie in (0, 1]".into()));
        }
        match self.mode {
            TrainMode::Sg => {}
            TrainMode::EdgeTypeSkip1 | TrainMode::EdgeType | TrainMode::MgPlt if self.layers < 2 => {
                return Err(Error::Config(format!("{} needs at least two layers", self.mode)));
            }
            _ => {}
        }
        Ok(())
    }

    /// Model architecture for data from `env`; single-graph mode always has one layer.
    pub fn model_config(&self, env: &EnvConfig) -> ModelConfig {
        ModelConfig {
            mode: self.mode.latent_mode(),
            layers: if self.mode == TrainMode::Sg { 1 } else { self.layers },
            hidden: self.hidden,
            t_obs: env.t_obs,
            t_pred: env.t_pred,
            position_scale: env.spawn_radius(),
            skip_first: self.mode == TrainMode::EdgeTypeSkip1,
            aggregation: self.aggregation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: usize,
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub epochs: usize,
    pub steps: usize,
    /// validation loss of the pre-growth model evaluated at the start of the stage
    pub entry_val: f64,
    pub best_val: f64,
    pub best_epoch: usize,
    /// fade coefficient of the restored parameters
    pub alpha: f64,
    pub hit_max_epochs: bool,
}

/// Final trained model with its training history.
#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    pub model: Model<S>,
    pub fade: Option<Fade>,
    pub log: Vec<EpochLog>,
    pub lineage: Vec<StageRecord>,
}

impl<S> TrainOutcome<S> {
    pub fn best_val(&self) -> f64 {
        self.lineage.last().map_or(f64::NAN, |s| s.best_val)
    }
}

/// Hooks for streaming progress out of the trainer.
pub trait TrainObserver<S> {
    fn on_epoch(&mut self, _log: &EpochLog) -> Result<()> {
        Ok(())
    }

    /// Called with the restored best model at the end of every stage.
    fn on_stage_end(&mut self, _record: &StageRecord, _model: &Model<S>, _fade: Option<Fade>) -> Result<()> {
        Ok(())
    }
}

pub struct NoObserver;

impl<S> TrainObserver<S> for NoObserver {}

/// Mean trajectory MSE over `episodes`, evaluated in chunks of `batch_size`.
pub fn evaluate_loss<S: Scalar>(
    model: &Model<S>,
    episodes: &[&Episode],
    batch_size: usize,
    fade: Option<Fade>,
) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::Usage("no episodes to evaluate".into()));
    }
    let mut total = 0.0;
    for chunk in episodes.chunks(batch_size.max(1)) {
        let batch = Batch::from_episodes(chunk, &model.config)?;
        let mut tape = Tape::new();
        let loss = model.loss(&mut tape, &batch, fade)?;
        total += tape.value(loss).item()?.as_f64() * chunk.len() as f64;
    }
    Ok(total / episodes.len() as f64)
}

fn grad_norm<S: Scalar>(grads: &std::collections::HashMap<String, crate::tensor::Tensor<S>>) -> f64 {
    grads
        .values()
        .map(|g| g.norm_sq().as_f64())
        .sum::<f64>()
        .sqrt()
}

struct StageSpec {
    stage: usize,
    fade_layer: Option<usize>,
}

fn fade_alpha(cfg: &TrainConfig, step: usize, epoch: usize) -> f64 {
    let done = match cfg.fade_unit {
        FadeUnit::Steps => step,
        FadeUnit::Epochs => epoch,
    };
    if cfg.fade_in == 0 {
        1.0
    } else {
        (done as f64 / cfg.fade_in as f64).min(1.0)
    }
}

fn train_stage<S: Scalar>(
    model: &mut Model<S>,
    train: &[&Episode],
    val: &[&Episode],
    cfg: &TrainConfig,
    spec: StageSpec,
    log: &mut Vec<EpochLog>,
    observer: &mut dyn TrainObserver<S>,
) -> Result<(StageRecord, Option<Fade>)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Usage("training and validation splits must be non-empty".into()));
    }
    model.params.reset_optimizer();
    let fade_at = |alpha: f64| spec.fade_layer.map(|layer| Fade { layer, alpha });
    let mut alpha = if spec.fade_layer.is_some() { 0.0 } else { 1.0 };

    let entry_val = evaluate_loss(model, val, cfg.batch_size, fade_at(alpha))?;
    let mut best_val = entry_val;
    let mut best_params: ParamStore<S> = model.params.clone();
    let mut best_alpha = alpha;
    let mut best_epoch = 0;
    let (mut since_best, mut since_plateau) = (0, 0);
    let mut lr = cfg.lr;
    let mut step = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = 0;
    let mut hit_max = true;

    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            "shuffle",
            ((spec.stage as u64) << 32) | epoch as u64,
        ));
        order.shuffle(&mut rng);
        let mut train_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            if spec.fade_layer.is_some() {
                alpha = fade_alpha(cfg, step, epoch - 1);
            }
            let eps: Vec<&Episode> = idx.iter().map(|&i| train[i]).collect();
            let batch = Batch::from_episodes(&eps, &model.config)?;
            let mut tape = Tape::new();
            let loss = model.loss(&mut tape, &batch, fade_at(alpha))?;
            let loss_value = tape.value(loss).item()?.as_f64();
            let grads = tape.backward(loss)?.named();
            let norm = grad_norm(&grads);
            let diverged = |loss| Error::Diverged {
                step,
                lr,
                grad_norm: norm,
                loss,
            };
            if !loss_value.is_finite() || !norm.is_finite() {
                return Err(diverged(loss_value));
            }
            model
                .params
                .adam_step(&grads, &AdamConfig::with_lr(lr))
                .map_err(|e| match e {
                    Error::NonFinite(_) => diverged(loss_value),
                    other => other,
                })?;
            train_sum += loss_value * eps.len() as f64;
            step += 1;
        }
        if spec.fade_layer.is_some() {
            alpha = fade_alpha(cfg, step, epoch);
        }
        let val_loss = evaluate_loss(model, val, cfg.batch_size, fade_at(alpha))?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                step,
                lr,
                grad_norm: f64::NAN,
                loss: val_loss,
            });
        }
        let entry = EpochLog {
            stage: spec.stage,
            epoch,
            step,
            train_loss: train_sum / train.len() as f64,
            val_loss,
            lr,
            alpha,
        };
        log::info!(
            "stage {} epoch {epoch}: train {:.5} val {:.5} lr {lr:.2e} alpha {alpha:.3}",
            spec.stage,
            entry.train_loss,
            val_loss
        );
        observer.on_epoch(&entry)?;
        log.push(entry);

        if val_loss < best_val {
            best_val = val_loss;
            best_params = model.params.clone();
            best_alpha = alpha;
            best_epoch = epoch;
            since_best = 0;
            since_plateau = 0;
        } else {
            since_best += 1;
            since_plateau += 1;
            if since_plateau >= cfg.plateau_patience {
                lr *= cfg.plateau_decay;
                since_plateau = 0;
            }
        }
        // patience only counts epochs after a new layer has fully faded in
        if alpha < 1.0 {
            since_best = 0;
        }
        if since_best >= cfg.stop_patience {
            hit_max = false;
            break;
        }
    }
    if hit_max {
        log::warn!(
            "stage {} reached max_epochs={} before converging",
            spec.stage,
            cfg.max_epochs
        );
    }
    model.params = best_params;
    let record = StageRecord {
        stage: spec.stage,
        epochs,
        steps: step,
        entry_val,
        best_val,
        best_epoch,
        alpha: best_alpha,
        hit_max_epochs: hit_max,
    };
    let fade = spec
        .fade_layer
        .filter(|_| best_alpha < 1.0)
        .map(|layer| Fade {
            layer,
            alpha: best_alpha,
        });
    observer.on_stage_end(&record, model, fade)?;
    Ok((record, fade))
}

/// Trains according to `cfg.mode`: progressive for `MgPlt`, single-phase otherwise.
pub fn train<S: Scalar>(
    train: &[&Episode],
    val: &[&Episode],
    env: &EnvConfig,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver<S>,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    let model_cfg = cfg.model_config(env);
    let init_seed = derive_seed(cfg.seed, "init", 0);
    let mut log = Vec::new();
    let mut lineage = Vec::new();
    if cfg.mode != TrainMode::MgPlt {
        let mut model = Model::new(model_cfg, init_seed)?;
        let spec = StageSpec {
            stage: 0,
            fade_layer: None,
        };
        let (record, fade) = train_stage(&mut model, train, val, cfg, spec, &mut log, observer)?;
        lineage.push(record);
        return Ok(TrainOutcome {
            model,
            fade,
            log,
            lineage,
        });
    }
    let mut model = Model::progressive(model_cfg, init_seed)?;
    let mut fade = None;
    for stage in 0..cfg.layers {
        let fade_layer = if stage == 0 {
            None
        } else {
            Some(model.grow(init_seed)?)
        };
        let spec = StageSpec { stage, fade_layer };
        let (record, f) = train_stage(&mut model, train, val, cfg, spec, &mut log, observer)?;
        fade = f;
        lineage.push(record);
        if fade.is_some() {
            log::info!("stage {stage} kept its fade-in checkpoint; not growing further");
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        fade,
        log,
        lineage,
    })
}
