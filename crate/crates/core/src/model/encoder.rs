//! Graph encoder: observed trajectories to latent edge weights.
//!
//! Each stage embeds every agent's observed window, runs two rounds of node-to-edge
//! message passing and reads out one logit per edge and head.

use crate::autodiff::{Activation, Tape, Var};
use crate::error::Result;
use crate::nn::Mlp;
use crate::params::ParamStore;
use crate::scalar::Scalar;

use super::{Aggregation, EdgeIndex, LatentGraph, LatentMode, ModelConfig};

#[derive(Debug, Clone)]
pub struct EncoderStage {
    pub index: usize,
    f_emb: Mlp,
    f_e1: Mlp,
    f_v1: Mlp,
    f_e2: Mlp,
    f_logit: Mlp,
    aggregation: Aggregation,
}

impl EncoderStage {
    pub fn prefix(stage: usize) -> String {
        format!("enc.stage{stage}")
    }

    pub fn new(config: &ModelConfig, index: usize) -> Self {
        let h = config.hidden;
        let heads = if config.separate_stages() {
            1
        } else {
            config.layers
        };
        let p = Self::prefix(index);
        let elu = Activation::Elu;
        Self {
            index,
            f_emb: Mlp::new(format!("{p}.f_emb"), &[config.input_dim(), h, h, h], elu, true),
            f_e1: Mlp::new(format!("{p}.f_e1"), &[2 * h, h, h, h], elu, true),
            f_v1: Mlp::new(format!("{p}.f_v1"), &[h, h, h, h], elu, true),
            f_e2: Mlp::new(format!("{p}.f_e2"), &[2 * h, h, h, h], elu, true),
            f_logit: Mlp::new(format!("{p}.f_logit"), &[h, heads], elu, false),
            aggregation: config.aggregation,
        }
    }

    fn mlps(&self) -> [&Mlp; 5] {
        [&self.f_emb, &self.f_e1, &self.f_v1, &self.f_e2, &self.f_logit]
    }

    pub fn init<S: Scalar>(&self, store: &mut ParamStore<S>, seed: u64) -> Result<()> {
        for m in self.mlps() {
            m.init(store, seed)?;
        }
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        self.mlps()
            .iter()
            .flat_map(|m| (0..m.layers()).flat_map(|l| [m.weight_name(l), m.bias_name(l)]))
            .collect()
    }

    /// Edge logits `[E, heads]` for node features `x` (`[B·N, 2·T_h]`).
    pub fn logits<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        x: Var,
        edges: &EdgeIndex,
    ) -> Result<Var> {
        let h1 = self.f_emb.forward(tape, store, x)?;
        let e1 = self
            .f_e1
            .forward_pairs(tape, store, h1, &edges.senders, &edges.receivers)?;
        let mut pooled = tape.scatter_add_rows(e1, edges.receivers.clone(), edges.nodes())?;
        if self.aggregation == Aggregation::Mean {
            pooled = tape.scale(pooled, S::one() / S::lit((edges.agents - 1) as f64));
        }
        let h2 = self.f_v1.forward(tape, store, pooled)?;
        let e2 = self
            .f_e2
            .forward_pairs(tape, store, h2, &edges.senders, &edges.receivers)?;
        self.f_logit.forward(tape, store, e2)
    }
}

/// Normalised weights produced by the encoder.
#[derive(Debug, Clone)]
pub struct LatentVars {
    /// Per latent layer, an `[E, 1]` column of edge weights; `None` for layers not yet grown.
    pub edge_weights: Vec<Option<Var>>,
    /// Per layer, the `[B, N, N]` weights (multiplex) or, at index 0, the `[E, K]` matrix.
    dense: Vec<Var>,
    mode: LatentMode,
}

/// Runs every active stage and normalises according to the latent mode.
pub fn encode<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    config: &ModelConfig,
    stages: &[EncoderStage],
    x: Var,
    edges: &EdgeIndex,
) -> Result<LatentVars> {
    let (b, n, e) = (edges.episodes, edges.agents, edges.len());
    let mut edge_weights = vec![None; config.layers];
    let mut dense = Vec::new();
    match config.mode {
        LatentMode::Multiplex => {
            for stage in stages {
                let logits = stage.logits(tape, store, x, edges)?;
                let full = tape.scatter(logits, edges.dense.clone(), &[b, n, n])?;
                let soft = tape.softmax_axis(full, 2, Some(&edges.off_diagonal))?;
                edge_weights[stage.index] = Some(tape.gather(soft, edges.dense.clone(), &[e, 1])?);
                dense.push(soft);
            }
        }
        LatentMode::EdgeType | LatentMode::Sigmoid => {
            let logits = stages[0].logits(tape, store, x, edges)?;
            let w = if config.mode == LatentMode::EdgeType {
                tape.softmax_axis(logits, 1, None)?
            } else {
                tape.activation(logits, Activation::Sigmoid)
            };
            for (k, slot) in edge_weights.iter_mut().enumerate() {
                *slot = Some(tape.slice_cols(w, k, 1)?);
            }
            dense.push(w);
        }
    }
    Ok(LatentVars {
        edge_weights,
        dense,
        mode: config.mode,
    })
}

impl LatentVars {
    /// Numeric `K×N×N` graph for every episode of the batch.
    pub fn graphs<S: Scalar>(&self, tape: &Tape<S>, config: &ModelConfig, edges: &EdgeIndex) -> Vec<LatentGraph> {
        let (n, layers) = (edges.agents, config.layers);
        let mut out: Vec<LatentGraph> = (0..edges.episodes)
            .map(|_| LatentGraph::zeros(self.mode, layers, n))
            .collect();
        match self.mode {
            LatentMode::Multiplex => {
                for (k, &d) in self.dense.iter().enumerate() {
                    let v = tape.value(d).data();
                    for (b, g) in out.iter_mut().enumerate() {
                        for i in 0..n {
                            for j in 0..n {
                                g.set(k, i, j, v[(b * n + i) * n + j].as_f64());
                            }
                        }
                    }
                }
            }
            LatentMode::EdgeType | LatentMode::Sigmoid => {
                let v = tape.value(self.dense[0]).data();
                for (b, g) in out.iter_mut().enumerate() {
                    for i in 0..n {
                        for j in (0..n).filter(|&j| j != i) {
                            let id = edges.edge_id(b, i, j);
                            for k in 0..layers {
                                g.set(k, i, j, v[id * layers + k].as_f64());
                            }
                        }
                    }
                }
            }
        }
        out
    }
}
