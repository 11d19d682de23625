//! Shared fixtures and independent reference implementations for the integration tests.
#![allow(dead_code)]

use mplx::model::{ModelConfig, LatentMode, Aggregation};
use mplx::params::ParamStore;
use mplx::sim::{simulate_episode, EnvConfig, Episode};

pub fn small_env(n: usize, t_obs: usize, t_pred: usize) -> EnvConfig {
    EnvConfig {
        n_agents: n,
        t_obs,
        t_pred,
        ..EnvConfig::default()
    }
}

pub fn episodes(env: &EnvConfig, count: usize, seed: u64) -> Vec<Episode> {
    (0..count as u64)
        .map(|i| simulate_episode(env, seed * 1000 + i).unwrap())
        .collect()
}

pub fn model_config(mode: LatentMode, layers: usize, hidden: usize, env: &EnvConfig) -> ModelConfig {
    ModelConfig {
        mode,
        layers,
        hidden,
        t_obs: env.t_obs,
        t_pred: env.t_pred,
        position_scale: env.spawn_radius(),
        skip_first: false,
        aggregation: Aggregation::Sum,
    }
}

/// Overwrites every parameter with a fixed smooth pattern of moderate magnitude.
pub fn hand_set(store: &mut ParamStore<f64>) {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for (p, name) in names.iter().enumerate() {
        let t = store.get_mut(name).unwrap();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = 0.6 * ((p * 31 + i * 7) as f64 * 0.37).sin();
        }
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dense layer stack evaluated with explicit loops; `W` is `[in, out]` row-major.
pub fn mlp(store: &ParamStore<f64>, prefix: &str, x: &[f64], act: fn(f64) -> f64, final_act: bool) -> Vec<f64> {
    let mut h = x.to_vec();
    let mut layer = 0;
    while let Some(w) = store.get(&format!("{prefix}.{layer}.W")) {
        let b = store.get(&format!("{prefix}.{layer}.b")).unwrap();
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        assert_eq!(rows, h.len(), "{prefix}.{layer}");
        let mut y = vec![0.0; cols];
        for (j, yj) in y.iter_mut().enumerate() {
            let mut s = b.data()[j];
            for (i, hi) in h.iter().enumerate() {
                s += hi * w.data()[i * cols + j];
            }
            *yj = s;
        }
        layer += 1;
        let last = store.get(&format!("{prefix}.{layer}.W")).is_none();
        if !last || final_act {
            y.iter_mut().for_each(|v| *v = act(*v));
        }
        h = y;
    }
    assert!(layer > 0, "no layers under {prefix}");
    h
}

pub fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

/// Agent features: observed positions divided by the position scale, flattened by frame.
pub fn features(ep: &Episode, t_obs: usize, scale: f64) -> Vec<Vec<f64>> {
    ep.positions
        .iter()
        .map(|t| t[..t_obs].iter().flat_map(|p| [p[0] / scale, p[1] / scale]).collect())
        .collect()
}

/// Multiplex edge logits `[receiver][sender]` of one encoder stage, by direct double loops.
pub fn encoder_logits(store: &ParamStore<f64>, stage: usize, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len();
    let p = format!("enc.stage{stage}");
    let h1: Vec<Vec<f64>> = x.iter().map(|xi| mlp(store, &format!("{p}.f_emb"), xi, elu, true)).collect();
    let width = h1[0].len();
    let mut pooled = vec![vec![0.0; width]; n];
    for r in 0..n {
        for s in 0..n {
            if s != r {
                let e1 = mlp(store, &format!("{p}.f_e1"), &concat(&h1[s], &h1[r]), elu, true);
                for (acc, v) in pooled[r].iter_mut().zip(e1) {
                    *acc += v;
                }
            }
        }
    }
    let h2: Vec<Vec<f64>> = pooled.iter().map(|v| mlp(store, &format!("{p}.f_v1"), v, elu, true)).collect();
    let mut logits = vec![vec![f64::NEG_INFINITY; n]; n];
    for r in 0..n {
        for s in 0..n {
            if s != r {
                let e2 = mlp(store, &format!("{p}.f_e2"), &concat(&h2[s], &h2[r]), elu, true);
                logits[r][s] = mlp(store, &format!("{p}.f_logit"), &e2, elu, false)[0];
            }
        }
    }
    logits
}

pub fn softmax_rows(logits: &[Vec<f64>]) -> Vec<Vec<f64>> {
    logits
        .iter()
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|&v| if v == f64::NEG_INFINITY { 0.0 } else { (v - m).exp() }).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        })
        .collect()
}

/// `MSG_r = Σ_k Σ_{s≠r} z[k][r][s] · edge_k([h_s, h_r])` by explicit loops.
pub fn graph_message(store: &ParamStore<f64>, h: &[Vec<f64>], z: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let n = h.len();
    let width = h[0].len();
    let mut msg = vec![vec![0.0; width]; n];
    for (k, zk) in z.iter().enumerate() {
        for r in 0..n {
            for s in 0..n {
                if s == r {
                    continue;
                }
                let m = mlp(store, &format!("dec.edge.{k}"), &concat(&h[s], &h[r]), elu, true);
                for (acc, v) in msg[r].iter_mut().zip(m) {
                    *acc += zk[r][s] * v;
                }
            }
        }
    }
    msg
}

/// One gated recurrent update per agent.
pub fn gru_step(store: &ParamStore<f64>, msg: &[f64], h: &[f64]) -> Vec<f64> {
    let mh = concat(msg, h);
    let u = mlp(store, "dec.gru.z", &mh, sigmoid, true);
    let r = mlp(store, "dec.gru.r", &mh, sigmoid, true);
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let n = mlp(store, "dec.gru.h", &concat(msg, &rh), f64::tanh, true);
    (0..h.len()).map(|i| u[i] * n[i] + (1.0 - u[i]) * h[i]).collect()
}
