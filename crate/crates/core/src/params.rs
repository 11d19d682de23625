//! Named parameter storage with per-parameter freeze flags and Adam state.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub m: Tensor<S>,
    pub v: Tensor<S>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<S> {
    pub value: Tensor<S>,
    pub frozen: bool,
    pub adam: AdamState<S>,
}

/// Ordered by name, so iteration (and checkpoint layout) is deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<S> {
    entries: BTreeMap<String, ParamEntry<S>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct StepReport {
    pub updated: usize,
    pub skipped: Vec<String>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let shape = value.shape().to_vec();
        self.entries.insert(
            name.to_string(),
            ParamEntry {
                value,
                frozen: false,
                adam: AdamState {
                    m: Tensor::zeros(&shape),
                    v: Tensor::zeros(&shape),
                    step: 0,
                },
            },
        );
        Ok(())
    }

    /// Inserts a fully specified entry (used when loading checkpoints).
    pub fn insert_entry(&mut self, name: &str, entry: ParamEntry<S>) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name.to_string(), entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.entries.get_mut(name).map(|e| &mut e.value)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry<S>> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<S>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|e| e.frozen)
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Usage(format!("unknown parameter `{name}`")))?;
        e.frozen = frozen;
        Ok(())
    }

    /// Freezes every parameter whose name starts with `prefix`; returns how many matched.
    pub fn freeze_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for (name, e) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                e.frozen = true;
                n += 1;
            }
        }
        n
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Bias-corrected Adam update of every unfrozen parameter.
    pub fn adam_step(&mut self, grads: &HashMap<String, Tensor<S>>, cfg: &AdamConfig) -> Result<StepReport> {
        let (b1, b2, eps, lr) = (
            S::lit(cfg.beta1),
            S::lit(cfg.beta2),
            S::lit(cfg.eps),
            S::lit(cfg.lr),
        );
        let mut report = StepReport::default();
        for (name, e) in self.entries.iter_mut() {
            if e.frozen {
                continue;
            }
            let Some(g) = grads.get(name) else {
                log::warn!("no gradient for unfrozen parameter `{name}`; skipped");
                report.skipped.push(name.clone());
                continue;
            };
            if g.shape() != e.value.shape() {
                return Err(Error::dim(
                    "adam_step",
                    format!("{name}: grad {:?} vs param {:?}", g.shape(), e.value.shape()),
                ));
            }
            e.adam.step += 1;
            let t = e.adam.step as i32;
            let c1 = S::one() - b1.powi(t);
            let c2 = S::one() - b2.powi(t);
            let ParamEntry { value, adam, .. } = e;
            let AdamState { m, v, .. } = adam;
            for (((wi, &gi), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = b1 * *mi + (S::one() - b1) * gi;
                *vi = b2 * *vi + (S::one() - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *wi -= lr * mhat / (vhat.sqrt() + eps);
            }
            if !e.value.is_finite() {
                return Err(Error::NonFinite(format!("parameter `{name}` after Adam step")));
            }
            report.updated += 1;
        }
        Ok(report)
    }

    /// Zeroes optimizer moments (new stage, fresh optimizer).
    pub fn reset_optimizer(&mut self) {
        for e in self.entries.values_mut() {
            let shape = e.value.shape().to_vec();
            e.adam = AdamState {
                m: Tensor::zeros(&shape),
                v: Tensor::zeros(&shape),
                step: 0,
            };
        }
    }
}

/// 64-bit FNV-1a, used to derive per-parameter seeds from names.
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Uniform fan-in initialisation `U(-1/√fan_in, 1/√fan_in)`. The stream depends only on
/// `(seed, name)`, so a parameter gets the same values regardless of creation order.
pub fn init_uniform<S: Scalar>(seed: u64, name: &str, shape: &[usize], fan_in: usize) -> Tensor<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name));
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::lit(rng.gen_range(-bound..bound))).collect();
    Tensor::raw(shape.to_vec(), data)
}
