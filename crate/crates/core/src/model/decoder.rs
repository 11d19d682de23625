//! Graph-gated recurrent decoder with residual position readout.

use crate::autodiff::{Activation, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{Batch, EdgeIndex, ModelConfig};

/// Blends a newly grown layer in: its messages are scaled by `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fade {
    pub layer: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    hidden: usize,
    position_scale: f64,
    t_pred: usize,
    emb: Mlp,
    /// `None` for layers wired to carry no messages
    edge: Vec<Option<Mlp>>,
    gate_update: Mlp,
    gate_reset: Mlp,
    candidate: Mlp,
    out: Mlp,
}

impl Decoder {
    pub fn edge_prefix(layer: usize) -> String {
        format!("dec.edge.{layer}")
    }

    pub fn new(config: &ModelConfig) -> Self {
        let h = config.hidden;
        let elu = Activation::Elu;
        Self {
            hidden: h,
            position_scale: config.position_scale,
            t_pred: config.t_pred,
            emb: Mlp::new("dec.emb", &[config.input_dim(), h, h, h], elu, false),
            edge: (0..config.layers)
                .map(|k| {
                    config
                        .carries_messages(k)
                        .then(|| Mlp::new(Self::edge_prefix(k), &[2 * h, h, h], elu, true))
                })
                .collect(),
            gate_update: Mlp::new("dec.gru.z", &[2 * h, h], Activation::Sigmoid, true),
            gate_reset: Mlp::new("dec.gru.r", &[2 * h, h], Activation::Sigmoid, true),
            candidate: Mlp::new("dec.gru.h", &[2 * h, h], Activation::Tanh, true),
            out: Mlp::new("dec.out", &[h, h, 2], elu, false),
        }
    }

    fn shared(&self) -> [&Mlp; 5] {
        [
            &self.emb,
            &self.gate_update,
            &self.gate_reset,
            &self.candidate,
            &self.out,
        ]
    }

    pub fn init_shared<S: Scalar>(&self, store: &mut ParamStore<S>, seed: u64) -> Result<()> {
        for m in self.shared() {
            m.init(store, seed)?;
        }
        Ok(())
    }

    pub fn init_edge<S: Scalar>(&self, store: &mut ParamStore<S>, layer: usize, seed: u64) -> Result<()> {
        match self.edge.get(layer) {
            Some(Some(m)) => m.init(store, seed),
            _ => Err(Error::Config(format!("layer {layer} has no message head"))),
        }
    }

    pub fn param_names(&self, layers: usize) -> Vec<String> {
        let edge = self.edge.iter().take(layers).flatten();
        self.shared()
            .into_iter()
            .chain(edge)
            .flat_map(|m| (0..m.layers()).flat_map(|l| [m.weight_name(l), m.bias_name(l)]))
            .collect()
    }

    /// Per-agent initial hidden state from its own observed window.
    pub fn embed<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        self.emb.forward(tape, store, x)
    }

    /// `MSG_r = Σ_k Σ_{s≠r} w_k(s→r) · edge_k([h_s, h_r])`, the faded layer scaled by `alpha`.
    pub fn message<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        h: Var,
        weights: &[Option<Var>],
        edges: &EdgeIndex,
        fade: Option<Fade>,
    ) -> Result<Var> {
        if weights.len() != self.edge.len() {
            return Err(Error::Config(format!(
                "{} latent layers for {} message heads",
                weights.len(),
                self.edge.len()
            )));
        }
        let mut acc: Option<Var> = None;
        for (k, (w, head)) in weights.iter().zip(&self.edge).enumerate() {
            let (Some(w), Some(head)) = (w, head) else {
                continue;
            };
            if !store.contains(&head.weight_name(0)) {
                continue;
            }
            let m = head.forward_pairs(tape, store, h, &edges.senders, &edges.receivers)?;
            let w = match fade {
                Some(f) if f.layer == k => tape.scale(*w, S::lit(f.alpha)),
                _ => *w,
            };
            let term = tape.mul_col(m, w)?;
            acc = Some(match acc {
                None => term,
                Some(a) => tape.add(a, term)?,
            });
        }
        match acc {
            Some(a) => tape.scatter_add_rows(a, edges.receivers.clone(), edges.nodes()),
            None => Ok(tape.constant(Tensor::zeros(&[edges.nodes(), self.hidden]))),
        }
    }

    /// Gated recurrent update `h' = h + u ⊙ (n − h)` with input `msg`.
    pub fn gru<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, msg: Var, h: Var) -> Result<Var> {
        let mh = tape.concat_cols(msg, h)?;
        let u = self.gate_update.forward(tape, store, mh)?;
        let r = self.gate_reset.forward(tape, store, mh)?;
        let rh = tape.mul(r, h)?;
        let mrh = tape.concat_cols(msg, rh)?;
        let n = self.candidate.forward(tape, store, mrh)?;
        let d = tape.sub(n, h)?;
        let ud = tape.mul(u, d)?;
        tape.add(h, ud)
    }

    /// Normalised position offset for the next step.
    pub fn readout<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, h: Var) -> Result<Var> {
        self.out.forward(tape, store, h)
    }

    /// Predicted world-unit positions for each future step, `[B·N, 2]` each.
    pub fn rollout<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        batch: &Batch<S>,
        weights: &[Option<Var>],
        fade: Option<Fade>,
    ) -> Result<Vec<Var>> {
        let x = tape.constant(batch.observed.clone());
        let mut h = self.embed(tape, store, x)?;
        let mut pos = tape.constant(batch.last_observed.clone());
        let scale = S::lit(self.position_scale);
        let mut preds = Vec::with_capacity(self.t_pred);
        for _ in 0..self.t_pred {
            let msg = self.message(tape, store, h, weights, &batch.edges, fade)?;
            h = self.gru(tape, store, msg, h)?;
            let offset = self.readout(tape, store, h)?;
            pos = tape.add(pos, offset)?;
            preds.push(tape.scale(pos, scale));
        }
        Ok(preds)
    }
}
