//! Multi-layer perceptrons on the tape.

use std::sync::Arc;

use crate::autodiff::{Activation, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{init_uniform, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A stack of affine layers named `{prefix}.{layer}.{W|b}`.
///
/// The activation follows every layer except the last; `final_act` applies it there too.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub prefix: String,
    pub dims: Vec<usize>,
    pub act: Activation,
    pub final_act: bool,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, dims: &[usize], act: Activation, final_act: bool) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        Self {
            prefix: prefix.into(),
            dims: dims.to_vec(),
            act,
            final_act,
        }
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.{layer}.W", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.{layer}.b", self.prefix)
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty")
    }

    /// Registers fan-in-scaled weights and zero biases.
    pub fn init<S: Scalar>(&self, store: &mut ParamStore<S>, seed: u64) -> Result<()> {
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let w = self.weight_name(l);
            store.insert(&w, init_uniform(seed, &w, &[fan_in, fan_out], fan_in))?;
            store.insert(&self.bias_name(l), Tensor::zeros(&[fan_out]))?;
        }
        Ok(())
    }

    fn check_input<S: Scalar>(&self, tape: &Tape<S>, x: Var) -> Result<()> {
        let (_, c) = tape.value(x).dims2()?;
        if c != self.dims[0] {
            return Err(Error::dim(
                "mlp",
                format!("{} expects width {}, got {c}", self.prefix, self.dims[0]),
            ));
        }
        Ok(())
    }

    fn finish_layer<S: Scalar>(&self, tape: &mut Tape<S>, pre: Var, layer: usize) -> Var {
        if layer + 1 < self.layers() || self.final_act {
            tape.activation(pre, self.act)
        } else {
            pre
        }
    }

    fn rest<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, mut h: Var) -> Result<Var> {
        for l in 1..self.layers() {
            let w = tape.param(store, &self.weight_name(l))?;
            let b = tape.param(store, &self.bias_name(l))?;
            let y = tape.matmul(h, w)?;
            let y = tape.add_bias(y, b)?;
            h = self.finish_layer(tape, y, l);
        }
        Ok(h)
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        self.check_input(tape, x)?;
        let w = tape.param(store, &self.weight_name(0))?;
        let b = tape.param(store, &self.bias_name(0))?;
        let y = tape.matmul(x, w)?;
        let y = tape.add_bias(y, b)?;
        let h = self.finish_layer(tape, y, 0);
        self.rest(tape, store, h)
    }

    /// Evaluates the MLP on `[nodes[senders[e]], nodes[receivers[e]]]` for every edge `e`.
    ///
    /// The first layer is applied per node and then gathered, which equals applying it
    /// to the concatenated pair because the layer is linear in each half.
    pub fn forward_pairs<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        nodes: Var,
        senders: &Arc<[usize]>,
        receivers: &Arc<[usize]>,
    ) -> Result<Var> {
        let (_, width) = tape.value(nodes).dims2()?;
        if 2 * width != self.dims[0] {
            return Err(Error::dim(
                "mlp pairs",
                format!("{} expects width {}, got 2x{width}", self.prefix, self.dims[0]),
            ));
        }
        let w = tape.param(store, &self.weight_name(0))?;
        let b = tape.param(store, &self.bias_name(0))?;
        let w_send = tape.slice_rows(w, 0, width)?;
        let w_recv = tape.slice_rows(w, width, width)?;
        let p = tape.matmul(nodes, w_send)?;
        let q = tape.matmul(nodes, w_recv)?;
        let ps = tape.gather_rows(p, senders.clone())?;
        let qr = tape.gather_rows(q, receivers.clone())?;
        let y = tape.add(ps, qr)?;
        let y = tape.add_bias(y, b)?;
        let h = self.finish_layer(tape, y, 0);
        self.rest(tape, store, h)
    }
}
