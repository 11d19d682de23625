//! Central finite-difference verification of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn scalar_of<S: Scalar>(tape: &Tape<S>, v: Var) -> Result<f64> {
    Ok(tape.value(v).item()?.as_f64())
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Max over coordinates of `|analytic − central difference| / max(1, |analytic|)`
/// for the scalar function `f` at `x`.
pub fn grad_check<S, F>(f: F, x: &Tensor<S>, h: f64) -> Result<f64>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let loss = f(&mut tape, xv)?;
    let grads = tape.backward(loss)?;
    let analytic = grads
        .get(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |p: &Tensor<S>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.input(p.clone());
        let out = f(&mut tape, v)?;
        scalar_of(&tape, out)
    };

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += S::lit(h);
        let mut minus = x.clone();
        minus.data_mut()[i] -= S::lit(h);
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        worst = worst.max(rel_err(analytic.data()[i].as_f64(), numeric));
    }
    Ok(worst)
}

/// Same measure over the named parameters of a store. `f` builds the loss from the store;
/// frozen parameters are skipped. When `max_coords` is set, only that many evenly strided
/// coordinates per parameter are probed.
pub fn grad_check_params<S, F>(
    store: &ParamStore<S>,
    f: F,
    h: f64,
    max_coords: Option<usize>,
) -> Result<f64>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &ParamStore<S>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?.named();
    if grads.is_empty() {
        return Err(Error::Usage("loss does not depend on any parameter".into()));
    }
    let eval = |s: &ParamStore<S>| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, s)?;
        scalar_of(&tape, out)
    };
    let mut worst: f64 = 0.0;
    let mut probe = store.clone();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        if store.is_frozen(&name) {
            continue;
        }
        let len = store.get(&name).map_or(0, |t| t.len());
        let analytic = grads.get(&name);
        let stride = max_coords.map_or(1, |m| len.div_ceil(m.max(1)).max(1));
        for i in (0..len).step_by(stride) {
            let orig = probe.get(&name).expect("present").data()[i];
            probe.get_mut(&name).expect("present").data_mut()[i] = orig + S::lit(h);
            let up = eval(&probe)?;
            probe.get_mut(&name).expect("present").data_mut()[i] = orig - S::lit(h);
            let down = eval(&probe)?;
            probe.get_mut(&name).expect("present").data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.map_or(0.0, |g| g.data()[i].as_f64());
            worst = worst.max(rel_err(a, numeric));
        }
    }
    Ok(worst)
}
