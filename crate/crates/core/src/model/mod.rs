//! Encoder/decoder model over batches of episodes.
//!
//! A batch stacks `B` episodes of `N` agents into `B·N` node rows (`b·N + agent`). Directed
//! edges run from a sender to a receiver inside one episode and are ordered by
//! `(b, receiver, sender)`, skipping self-edges, so each receiver's edges are contiguous.

pub mod decoder;
pub mod encoder;
pub mod latent;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::sim::Episode;
use crate::tensor::Tensor;
pub use decoder::{Decoder, Fade};
pub use encoder::{EncoderStage, LatentVars};
pub use latent::{LatentGraph, LatentMode, RowEdit};

/// How the encoder pools edge features into node features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: LatentMode,
    /// number of latent layers `K`
    pub layers: usize,
    pub hidden: usize,
    pub t_obs: usize,
    pub t_pred: usize,
    /// world units per normalised unit
    pub position_scale: f64,
    /// layer 0 is hard-wired to carry no messages
    #[serde(default)]
    pub skip_first: bool,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.t_obs == 0 || self.t_pred == 0 {
            return Err(Error::Config(
                "layers, hidden, t_obs and t_pred must all be positive".into(),
            ));
        }
        if !(self.position_scale.is_finite() && self.position_scale > 0.0) {
            return Err(Error::Config("position_scale must be positive".into()));
        }
        if self.skip_first && self.layers < 2 {
            return Err(Error::Config("skipping layer 0 needs at least two layers".into()));
        }
        if self.mode == LatentMode::EdgeType && self.layers < 2 {
            return Err(Error::Config("edge-type graphs need at least two layers".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        2 * self.t_obs
    }

    /// Multiplex graphs use one encoder per layer; the joint modes share one K-headed encoder.
    pub fn separate_stages(&self) -> bool {
        self.mode == LatentMode::Multiplex
    }

    pub fn carries_messages(&self, layer: usize) -> bool {
        !(self.skip_first && layer == 0)
    }
}

/// Edge lists for `b` episodes of `n` agents.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    pub episodes: usize,
    pub agents: usize,
    pub senders: Arc<[usize]>,
    pub receivers: Arc<[usize]>,
    /// flat position of each edge in a `[B, N, N]` (receiver-major) tensor
    pub dense: Arc<[usize]>,
    /// `false` on the diagonal of every `[N, N]` block
    pub off_diagonal: Arc<[bool]>,
}

impl EdgeIndex {
    pub fn new(episodes: usize, agents: usize) -> Self {
        let e = episodes * agents * agents.saturating_sub(1);
        let (mut senders, mut receivers, mut dense) =
            (Vec::with_capacity(e), Vec::with_capacity(e), Vec::with_capacity(e));
        for b in 0..episodes {
            for r in 0..agents {
                for s in (0..agents).filter(|&s| s != r) {
                    senders.push(b * agents + s);
                    receivers.push(b * agents + r);
                    dense.push((b * agents + r) * agents + s);
                }
            }
        }
        let off_diagonal = (0..episodes * agents * agents)
            .map(|p| (p / agents) % agents != p % agents)
            .collect::<Vec<_>>();
        Self {
            episodes,
            agents,
            senders: senders.into(),
            receivers: receivers.into(),
            dense: dense.into(),
            off_diagonal: off_diagonal.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.senders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.senders.is_empty()
    }

    pub fn nodes(&self) -> usize {
        self.episodes * self.agents
    }

    /// Edge id of `sender → receiver` in episode `b`.
    pub fn edge_id(&self, b: usize, receiver: usize, sender: usize) -> usize {
        let n = self.agents;
        let s = if sender > receiver { sender - 1 } else { sender };
        (b * n + receiver) * (n - 1) + s
    }
}

/// Model inputs and targets for a set of episodes with a common agent count.
#[derive(Debug, Clone)]
pub struct Batch<S> {
    pub edges: EdgeIndex,
    /// `[B·N, 2·T_h]`, normalised positions of the observed frames
    pub observed: Tensor<S>,
    /// `[B·N, 2]`, normalised last observed position
    pub last_observed: Tensor<S>,
    /// `T_f` tensors of `[B·N, 2]`, world-unit future positions
    pub future: Vec<Tensor<S>>,
}

impl<S: Scalar> Batch<S> {
    pub fn from_episodes(episodes: &[&Episode], config: &ModelConfig) -> Result<Self> {
        let first = episodes
            .first()
            .ok_or_else(|| Error::Usage("empty batch".into()))?;
        let n = first.n_agents();
        let (t_obs, t_pred) = (config.t_obs, config.t_pred);
        if n < 2 {
            return Err(Error::Config(format!("need at least 2 agents, got {n}")));
        }
        for ep in episodes {
            if ep.n_agents() != n {
                return Err(Error::dim(
                    "batch",
                    format!("mixed agent counts {n} and {}", ep.n_agents()),
                ));
            }
            if ep.n_frames() < t_obs + t_pred {
                return Err(Error::dim(
                    "batch",
                    format!("episode has {} frames, need {}", ep.n_frames(), t_obs + t_pred),
                ));
            }
        }
        let rows = episodes.len() * n;
        let inv = 1.0 / config.position_scale;
        let mut observed = Vec::with_capacity(rows * 2 * t_obs);
        let mut last = Vec::with_capacity(rows * 2);
        let mut future = vec![Vec::with_capacity(rows * 2); t_pred];
        for ep in episodes {
            for track in &ep.positions {
                for p in &track[..t_obs] {
                    observed.push(S::lit(p[0] * inv));
                    observed.push(S::lit(p[1] * inv));
                }
                last.push(S::lit(track[t_obs - 1][0] * inv));
                last.push(S::lit(track[t_obs - 1][1] * inv));
                for (t, f) in future.iter_mut().enumerate() {
                    let p = track[t_obs + t];
                    f.push(S::lit(p[0]));
                    f.push(S::lit(p[1]));
                }
            }
        }
        Ok(Self {
            edges: EdgeIndex::new(episodes.len(), n),
            observed: Tensor::new(&[rows, 2 * t_obs], observed)?,
            last_observed: Tensor::new(&[rows, 2], last)?,
            future: future
                .into_iter()
                .map(|f| Tensor::new(&[rows, 2], f))
                .collect::<Result<_>>()?,
        })
    }

    pub fn episodes(&self) -> usize {
        self.edges.episodes
    }

    pub fn agents(&self) -> usize {
        self.edges.agents
    }
}

/// Numeric prediction for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `predictions[agent][step] = [x, y]` in world units
    pub predictions: Vec<Vec<[f64; 2]>>,
}

impl Rollout {
    pub fn endpoint(&self, agent: usize) -> [f64; 2] {
        *self.predictions[agent].last().expect("at least one step")
    }
}

/// Encoder stages plus decoder, with their parameters.
#[derive(Debug, Clone)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub params: ParamStore<S>,
    stages: Vec<EncoderStage>,
    decoder: Decoder,
}

impl<S: Scalar> Model<S> {
    /// All layers instantiated and trainable.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let stages = if config.separate_stages() {
            config.layers
        } else {
            1
        };
        Self::with_stages(config, seed, stages)
    }

    /// Multiplex model with only the first of its `K` layers instantiated.
    pub fn progressive(config: ModelConfig, seed: u64) -> Result<Self> {
        if !config.separate_stages() {
            return Err(Error::Config(
                "progressive training needs a multiplex model".into(),
            ));
        }
        Self::with_stages(config, seed, 1)
    }

    fn with_stages(config: ModelConfig, seed: u64, stages: usize) -> Result<Self> {
        config.validate()?;
        let decoder = Decoder::new(&config);
        let mut model = Self {
            config,
            params: ParamStore::new(),
            stages: Vec::new(),
            decoder,
        };
        model.decoder.init_shared(&mut model.params, seed)?;
        for _ in 0..stages {
            model.add_stage(seed)?;
        }
        Ok(model)
    }

    /// Rebuilds the architecture around loaded parameters.
    pub fn from_params(config: ModelConfig, params: ParamStore<S>, active_stages: usize) -> Result<Self> {
        config.validate()?;
        let cap = if config.separate_stages() { config.layers } else { 1 };
        if active_stages == 0 || active_stages > cap {
            return Err(Error::Config(format!("{active_stages} stages for capacity {cap}")));
        }
        let model = Self {
            decoder: Decoder::new(&config),
            stages: (0..active_stages)
                .map(|k| EncoderStage::new(&config, k))
                .collect(),
            config,
            params,
        };
        let needed = model.stages.iter().flat_map(|s| s.param_names()).chain(
            model.decoder.param_names(model.layer_count()),
        );
        for name in needed {
            if !model.params.contains(&name) {
                return Err(Error::Format(format!("checkpoint lacks parameter {name}")));
            }
        }
        Ok(model)
    }

    fn add_stage(&mut self, seed: u64) -> Result<()> {
        let k = self.stages.len();
        let stage = EncoderStage::new(&self.config, k);
        stage.init(&mut self.params, seed)?;
        self.stages.push(stage);
        let layers = if self.config.separate_stages() {
            k..k + 1
        } else {
            0..self.config.layers
        };
        for layer in layers {
            if self.config.carries_messages(layer) {
                self.decoder.init_edge(&mut self.params, layer, seed)?;
            }
        }
        Ok(())
    }

    /// Freezes every existing stage with its message head and adds the next stage.
    pub fn grow(&mut self, seed: u64) -> Result<usize> {
        if !self.config.separate_stages() || self.stages.len() >= self.config.layers {
            return Err(Error::Usage(format!(
                "cannot grow beyond {} stages",
                self.stages.len()
            )));
        }
        for k in 0..self.stages.len() {
            self.params.freeze_prefix(&format!("{}.", EncoderStage::prefix(k)));
            self.params.freeze_prefix(&format!("{}.", Decoder::edge_prefix(k)));
        }
        self.add_stage(seed)?;
        Ok(self.stages.len() - 1)
    }

    pub fn active_stages(&self) -> usize {
        self.stages.len()
    }

    /// Latent layers currently producing weights.
    pub fn layer_count(&self) -> usize {
        if self.config.separate_stages() {
            self.stages.len()
        } else {
            self.config.layers
        }
    }

    pub fn stage_prefixes(&self, stage: usize) -> [String; 2] {
        [
            format!("{}.", EncoderStage::prefix(stage)),
            format!("{}.", Decoder::edge_prefix(stage)),
        ]
    }

    pub fn encode_vars(&self, tape: &mut Tape<S>, batch: &Batch<S>) -> Result<LatentVars> {
        self.encode_with(tape, &self.params, batch)
    }

    /// Like [`Model::encode_vars`] but reading parameters from `params`.
    pub fn encode_with(&self, tape: &mut Tape<S>, params: &ParamStore<S>, batch: &Batch<S>) -> Result<LatentVars> {
        let x = tape.constant(batch.observed.clone());
        encoder::encode(tape, params, &self.config, &self.stages, x, &batch.edges)
    }

    /// World-unit predictions per step, `[B·N, 2]` each.
    pub fn decode_vars(
        &self,
        tape: &mut Tape<S>,
        batch: &Batch<S>,
        weights: &[Option<Var>],
        fade: Option<Fade>,
    ) -> Result<Vec<Var>> {
        self.decoder.rollout(tape, &self.params, batch, weights, fade)
    }

    /// Mean squared error of the rollout against the future frames.
    pub fn loss(&self, tape: &mut Tape<S>, batch: &Batch<S>, fade: Option<Fade>) -> Result<Var> {
        self.loss_with(tape, &self.params, batch, fade)
    }

    /// [`Model::loss`] evaluated with an alternative parameter store of the same layout.
    pub fn loss_with(
        &self,
        tape: &mut Tape<S>,
        params: &ParamStore<S>,
        batch: &Batch<S>,
        fade: Option<Fade>,
    ) -> Result<Var> {
        let latent = self.encode_with(tape, params, batch)?;
        let preds = self
            .decoder
            .rollout(tape, params, batch, &latent.edge_weights, fade)?;
        squared_error(tape, &preds, &batch.future)
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn stages(&self) -> &[EncoderStage] {
        &self.stages
    }

    pub fn latent_graphs(&self, batch: &Batch<S>) -> Result<Vec<LatentGraph>> {
        let mut tape = Tape::new();
        let latent = self.encode_vars(&mut tape, batch)?;
        Ok(latent.graphs(&tape, &self.config, &batch.edges))
    }

    /// Encodes and rolls out every episode of the batch.
    pub fn predict(&self, batch: &Batch<S>, fade: Option<Fade>) -> Result<(Vec<LatentGraph>, Vec<Rollout>)> {
        let mut tape = Tape::new();
        let latent = self.encode_vars(&mut tape, batch)?;
        let graphs = latent.graphs(&tape, &self.config, &batch.edges);
        let preds = self.decode_vars(&mut tape, batch, &latent.edge_weights, fade)?;
        Ok((graphs, collect_rollouts(&tape, &preds, batch)))
    }

    /// Rolls out with caller-supplied graphs, one per episode.
    pub fn rollout_with(
        &self,
        batch: &Batch<S>,
        graphs: &[LatentGraph],
        fade: Option<Fade>,
    ) -> Result<Vec<Rollout>> {
        if graphs.len() != batch.episodes() {
            return Err(Error::dim(
                "rollout_with",
                format!("{} graphs for {} episodes", graphs.len(), batch.episodes()),
            ));
        }
        let mut tape = Tape::new();
        let weights = graph_weights(&mut tape, graphs, &batch.edges, self.config.layers)?;
        let preds = self.decode_vars(&mut tape, batch, &weights, fade)?;
        Ok(collect_rollouts(&tape, &preds, batch))
    }
}

/// Averages `mse(pred_t, truth_t)` over steps.
pub fn squared_error<S: Scalar>(tape: &mut Tape<S>, preds: &[Var], future: &[Tensor<S>]) -> Result<Var> {
    if preds.len() != future.len() || preds.is_empty() {
        return Err(Error::dim(
            "squared_error",
            format!("{} predicted steps for {} targets", preds.len(), future.len()),
        ));
    }
    let mut total: Option<Var> = None;
    for (&p, f) in preds.iter().zip(future) {
        let target = tape.constant(f.clone());
        let e = tape.mse(p, target)?;
        total = Some(match total {
            None => e,
            Some(t) => tape.add(t, e)?,
        });
    }
    let total = total.expect("non-empty");
    Ok(tape.scale(total, S::one() / S::lit(preds.len() as f64)))
}

/// Per-layer `[E, 1]` weight columns for given graphs.
pub fn graph_weights<S: Scalar>(
    tape: &mut Tape<S>,
    graphs: &[LatentGraph],
    edges: &EdgeIndex,
    layers: usize,
) -> Result<Vec<Option<Var>>> {
    let n = edges.agents;
    for g in graphs {
        if g.n != n || g.layers != layers {
            return Err(Error::dim(
                "graph_weights",
                format!("graph {}x{n}x{n} expected, got {}x{}x{}", layers, g.layers, g.n, g.n),
            ));
        }
    }
    (0..layers)
        .map(|k| {
            let mut col = Vec::with_capacity(edges.len());
            for g in graphs {
                for r in 0..n {
                    for s in (0..n).filter(|&s| s != r) {
                        col.push(S::lit(g.get(k, r, s)));
                    }
                }
            }
            Ok(Some(tape.constant(Tensor::new(&[edges.len(), 1], col)?)))
        })
        .collect()
}

fn collect_rollouts<S: Scalar>(tape: &Tape<S>, preds: &[Var], batch: &Batch<S>) -> Vec<Rollout> {
    let n = batch.agents();
    (0..batch.episodes())
        .map(|b| Rollout {
            predictions: (0..n)
                .map(|a| {
                    let row = b * n + a;
                    preds
                        .iter()
                        .map(|&p| {
                            let v = tape.value(p).data();
                            [v[row * 2].as_f64(), v[row * 2 + 1].as_f64()]
                        })
                        .collect()
                })
                .collect(),
        })
        .collect()
}
