//! Trajectory error, relational accuracy, inter-layer dependency and counterfactual probes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Batch, Fade, LatentGraph, LatentMode, Model, Rollout, RowEdit};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::sim::dataset::Dataset;
use crate::sim::{EnvConfig, Episode, LeaderGraph};

/// `[agent][step] = [x, y]`
pub type Track = [Vec<[f64; 2]>];

fn check_tracks(pred: &Track, truth: &Track) -> Result<()> {
    let same = pred.len() == truth.len()
        && pred.iter().zip(truth).all(|(p, t)| p.len() == t.len() && !p.is_empty());
    if same && !pred.is_empty() {
        Ok(())
    } else {
        Err(Error::dim("displacement error", "prediction and truth shapes differ"))
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Mean Euclidean error over agents and steps.
pub fn ade(pred: &Track, truth: &Track) -> Result<f64> {
    check_tracks(pred, truth)?;
    let mut total = 0.0;
    let mut count = 0;
    for (p, t) in pred.iter().zip(truth) {
        for (&a, &b) in p.iter().zip(t) {
            total += dist(a, b);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean Euclidean error at the last step.
pub fn fde(pred: &Track, truth: &Track) -> Result<f64> {
    check_tracks(pred, truth)?;
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| dist(*p.last().unwrap(), *t.last().unwrap()))
        .sum();
    Ok(total / pred.len() as f64)
}

/// Rows of layer `k` whose largest weight sits on the true leader.
pub fn correct_rows(z: &LatentGraph, k: usize, gt: &LeaderGraph) -> usize {
    (0..z.n).filter(|&i| z.row_argmax(k, i) == gt.leader[i]).count()
}

pub fn graph_accuracy(z: &LatentGraph, k: usize, gt: &LeaderGraph) -> f64 {
    correct_rows(z, k, gt) as f64 / z.n as f64
}

/// Ranks of the off-diagonal entries of row `i` (1 = largest; ties by column index).
fn row_ranks(row: &[f64], i: usize) -> Vec<usize> {
    let mut cols: Vec<usize> = (0..row.len()).filter(|&j| j != i).collect();
    cols.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    let mut rank = vec![0; row.len()];
    for (r, &j) in cols.iter().enumerate() {
        rank[j] = r + 1;
    }
    (0..row.len()).filter(|&j| j != i).map(|j| rank[j]).collect()
}

/// Normalised mutual information `I(U;V) / sqrt(H(U)·H(V))` of two label sequences.
///
/// Two constant sequences score 1; one constant and one varying sequence score 0.
pub fn normalized_mutual_information(u: &[usize], v: &[usize]) -> f64 {
    assert_eq!(u.len(), v.len());
    let n = u.len() as f64;
    let ku = u.iter().max().map_or(0, |m| m + 1);
    let kv = v.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0usize; ku * kv];
    let (mut pu, mut pv) = (vec![0usize; ku], vec![0usize; kv]);
    for (&a, &b) in u.iter().zip(v) {
        joint[a * kv + b] += 1;
        pu[a] += 1;
        pv[b] += 1;
    }
    let entropy = |c: &[usize]| -> f64 {
        c.iter()
            .filter(|&&x| x > 0)
            .map(|&x| {
                let p = x as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let (hu, hv) = (entropy(&pu), entropy(&pv));
    if hu <= 0.0 && hv <= 0.0 {
        return 1.0;
    }
    if hu <= 0.0 || hv <= 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for a in 0..ku {
        for b in 0..kv {
            let c = joint[a * kv + b];
            if c > 0 {
                let pab = c as f64 / n;
                mi += pab * (pab * n * n / (pu[a] as f64 * pv[b] as f64)).ln();
            }
        }
    }
    (mi / (hu * hv).sqrt()).clamp(0.0, 1.0)
}

/// Dependency between two `N×N` weight matrices via within-row rank labels.
///
/// Every row is rank-transformed over its off-diagonal entries; the rank labels of all rows
/// are pooled and compared with normalised mutual information.
pub fn nmi_score(z1: &[f64], z2: &[f64], n: usize) -> Result<f64> {
    nmi_score_pooled(&[(z1, z2)], n)
}

/// [`nmi_score`] over one contingency table pooled across many graph pairs.
pub fn nmi_score_pooled(pairs: &[(&[f64], &[f64])], n: usize) -> Result<f64> {
    if n < 2 || pairs.iter().any(|(a, b)| a.len() != n * n || b.len() != n * n) {
        return Err(Error::dim("nmi_score", format!("expected pairs of {n}x{n} matrices")));
    }
    let mut u = Vec::with_capacity(pairs.len() * n * (n - 1));
    let mut v = Vec::with_capacity(u.capacity());
    for (z1, z2) in pairs {
        for i in 0..n {
            u.extend(row_ranks(&z1[i * n..(i + 1) * n], i));
            v.extend(row_ranks(&z2[i * n..(i + 1) * n], i));
        }
    }
    Ok(normalized_mutual_information(&u, &v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_seed: u64,
    pub ade: f64,
    pub fde: f64,
    /// correct rows of the headline layer
    pub correct_rows: usize,
    pub n_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub n_agents: usize,
    pub ade: f64,
    pub fde: f64,
    /// accuracy of every latent layer
    pub graph_accuracy: Vec<f64>,
    pub headline_layer: usize,
    pub headline_accuracy: f64,
    pub chance_accuracy: f64,
    /// mean dependency between layers 0 and 1; absent for single-layer models
    pub nmi: Option<f64>,
    pub per_episode: Vec<EpisodeRecord>,
}

impl EvalReport {
    pub fn per_episode_csv(&self) -> String {
        let mut out = String::from("episode_seed,ade,fde,correct_rows,n_rows\n");
        for r in &self.per_episode {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.episode_seed, r.ade, r.fde, r.correct_rows, r.n_rows
            ));
        }
        out
    }
}

/// Which layer's accuracy is reported as the headline number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Headline {
    /// a fixed layer (the first stage of progressively trained models)
    Layer(usize),
    /// whichever layer scores best
    BestLayer,
}

pub fn ground_truth(ep: &Episode, t_obs: usize, t_pred: usize) -> Vec<Vec<[f64; 2]>> {
    ep.positions
        .iter()
        .map(|t| t[t_obs..t_obs + t_pred].to_vec())
        .collect()
}

/// Predicts every episode in batches of `batch_size` and aggregates the metrics.
pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    episodes: &[&Episode],
    fade: Option<Fade>,
    headline: Headline,
    batch_size: usize,
    jobs: usize,
) -> Result<EvalReport> {
    let first = episodes
        .first()
        .ok_or_else(|| Error::Usage("no episodes to evaluate".into()))?;
    let n = first.n_agents();
    let cfg = &model.config;
    let layers = cfg.layers;
    let mut correct = vec![0usize; layers];
    let (graphs, preds) = predict_chunks(model, episodes, fade, batch_size, jobs)?;
    let active = model.layer_count();
    let mut ade_sum = 0.0;
    let mut fde_sum = 0.0;
    let mut rows_per_ep = Vec::with_capacity(episodes.len());
    let mut records = Vec::with_capacity(episodes.len());
    for ((ep, g), r) in episodes.iter().zip(&graphs).zip(&preds) {
        let truth = ground_truth(ep, cfg.t_obs, cfg.t_pred);
        let a = ade(&r.predictions, &truth)?;
        let f = fde(&r.predictions, &truth)?;
        ade_sum += a;
        fde_sum += f;
        let rows: Vec<usize> = (0..layers).map(|k| correct_rows(g, k, &ep.leader)).collect();
        for (c, x) in correct.iter_mut().zip(&rows) {
            *c += x;
        }
        records.push(EpisodeRecord {
            episode_seed: ep.seed,
            ade: a,
            fde: f,
            correct_rows: 0,
            n_rows: n,
        });
        rows_per_ep.push(rows);
    }
    let total_rows = (episodes.len() * n) as f64;
    let graph_accuracy: Vec<f64> = correct.iter().map(|&c| c as f64 / total_rows).collect();
    let headline_layer = match headline {
        Headline::Layer(k) => k.min(layers - 1),
        Headline::BestLayer => (0..active)
            .max_by(|&a, &b| graph_accuracy[a].total_cmp(&graph_accuracy[b]).then(b.cmp(&a)))
            .unwrap_or(0),
    };
    for (rec, rows) in records.iter_mut().zip(&rows_per_ep) {
        rec.correct_rows = rows[headline_layer];
    }
    let nmi = if active >= 2 {
        let pairs: Vec<(&[f64], &[f64])> = graphs.iter().map(|g| (g.layer(0), g.layer(1))).collect();
        Some(nmi_score_pooled(&pairs, n)?)
    } else {
        None
    };
    let m = episodes.len() as f64;
    Ok(EvalReport {
        episodes: episodes.len(),
        n_agents: n,
        ade: ade_sum / m,
        fde: fde_sum / m,
        headline_accuracy: graph_accuracy[headline_layer],
        graph_accuracy,
        headline_layer,
        chance_accuracy: 1.0 / (n - 1) as f64,
        nmi,
        per_episode: records,
    })
}

type Predictions = (Vec<LatentGraph>, Vec<Rollout>);

/// Predicts fixed-size chunks on up to `jobs` threads; output is in episode order and
/// independent of `jobs`.
fn predict_chunks<S: Scalar>(
    model: &Model<S>,
    episodes: &[&Episode],
    fade: Option<Fade>,
    batch_size: usize,
    jobs: usize,
) -> Result<Predictions> {
    let chunks: Vec<&[&Episode]> = episodes.chunks(batch_size.max(1)).collect();
    let run = |chunk: &[&Episode]| -> Result<Predictions> {
        let batch = Batch::<S>::from_episodes(chunk, &model.config)?;
        model.predict(&batch, fade)
    };
    let jobs = jobs.clamp(1, chunks.len().max(1));
    let results: Vec<Result<Predictions>> = if jobs == 1 {
        chunks.iter().map(|c| run(c)).collect()
    } else {
        let mut slots: Vec<Option<Result<Predictions>>> = (0..chunks.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..jobs)
                .map(|w| {
                    let chunks = &chunks;
                    let run = &run;
                    scope.spawn(move || {
                        (w..chunks.len())
                            .step_by(jobs)
                            .map(|i| (i, run(chunks[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("evaluation worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every chunk evaluated")).collect()
    };
    let mut graphs = Vec::with_capacity(episodes.len());
    let mut preds = Vec::with_capacity(episodes.len());
    for r in results {
        let (g, p) = r?;
        graphs.extend(g);
        preds.extend(p);
    }
    Ok((graphs, preds))
}

/// ADE of holding every agent at its last observed position.
pub fn stand_still_ade(episodes: &[&Episode], t_obs: usize, t_pred: usize) -> Result<f64> {
    let mut total = 0.0;
    for ep in episodes {
        let truth = ground_truth(ep, t_obs, t_pred);
        let still: Vec<Vec<[f64; 2]>> = ep
            .positions
            .iter()
            .map(|t| vec![t[t_obs - 1]; t_pred])
            .collect();
        total += ade(&still, &truth)?;
    }
    Ok(total / episodes.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counterfactual {
    pub original: Rollout,
    pub edited: Rollout,
    pub graph_before: LatentGraph,
    pub graph_after: LatentGraph,
}

/// Decodes an episode with its inferred graph and with `edits` applied to that graph.
pub fn counterfactual_rollout<S: Scalar>(
    model: &Model<S>,
    episode: &Episode,
    edits: &[RowEdit],
    fade: Option<Fade>,
) -> Result<Counterfactual> {
    let batch = Batch::<S>::from_episodes(&[episode], &model.config)?;
    let (mut graphs, mut rollouts) = model.predict(&batch, fade)?;
    let before = graphs.pop().expect("one episode");
    let mut after = before.clone();
    for e in edits {
        if e.layer >= model.layer_count() {
            return Err(Error::Config(format!(
                "edit {e} targets layer {} but only {} are active",
                e.layer,
                model.layer_count()
            )));
        }
        after.apply_edit(e)?;
    }
    after.check_invariants(model.layer_count(), 1e-9)?;
    let edited = if edits.is_empty() {
        rollouts[0].clone()
    } else {
        model
            .rollout_with(&batch, std::slice::from_ref(&after), fade)?
            .pop()
            .expect("one episode")
    };
    Ok(Counterfactual {
        original: rollouts.pop().expect("one episode"),
        edited,
        graph_before: before,
        graph_after: after,
    })
}

/// Distance from `p` to the polyline through `path`.
fn distance_to_path(p: [f64; 2], path: &[[f64; 2]]) -> f64 {
    if path.len() == 1 {
        return dist(p, path[0]);
    }
    path.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let d = [b[0] - a[0], b[1] - a[1]];
            let len2 = d[0] * d[0] + d[1] * d[1];
            let t = if len2 > 0.0 {
                (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            dist(p, [a[0] + t * d[0], a[1] + t * d[1]])
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualSummary {
    pub episodes: usize,
    /// fraction of edits that moved the edited agent's endpoint closer to the new leader's
    /// true path over the forecast window
    pub closer_fraction: f64,
    /// median relative ADE change of the agents that were not edited
    pub median_other_change: f64,
}

/// Redirects one random agent per episode to a random non-leader and measures the effect.
pub fn counterfactual_probe<S: Scalar>(
    model: &Model<S>,
    episodes: &[&Episode],
    layer: usize,
    fade: Option<Fade>,
    seed: u64,
) -> Result<CounterfactualSummary> {
    let cfg = &model.config;
    let mut closer = 0;
    let mut changes = Vec::with_capacity(episodes.len());
    for (idx, ep) in episodes.iter().enumerate() {
        let n = ep.n_agents();
        if n < 3 {
            return Err(Error::Config("redirecting a leader needs at least 3 agents".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "counterfactual", idx as u64));
        let i = rng.gen_range(0..n);
        let choices: Vec<usize> = (0..n).filter(|&j| j != i && j != ep.leader.leader[i]).collect();
        let j = choices[rng.gen_range(0..choices.len())];
        let cf = counterfactual_rollout(model, ep, &[RowEdit { layer, row: i, target: j }], fade)?;
        let path = &ep.positions[j][cfg.t_obs - 1..cfg.t_obs + cfg.t_pred];
        if distance_to_path(cf.edited.endpoint(i), path) < distance_to_path(cf.original.endpoint(i), path) {
            closer += 1;
        }
        let truth = ground_truth(ep, cfg.t_obs, cfg.t_pred);
        let others = |r: &Rollout| -> Vec<Vec<[f64; 2]>> {
            (0..n).filter(|&a| a != i).map(|a| r.predictions[a].clone()).collect()
        };
        let truth_others: Vec<Vec<[f64; 2]>> =
            (0..n).filter(|&a| a != i).map(|a| truth[a].clone()).collect();
        let before = ade(&others(&cf.original), &truth_others)?;
        let after = ade(&others(&cf.edited), &truth_others)?;
        changes.push((after - before).abs() / before.max(1e-12));
    }
    changes.sort_by(f64::total_cmp);
    let m = changes.len();
    let median = if m == 0 {
        0.0
    } else if m % 2 == 1 {
        changes[m / 2]
    } else {
        0.5 * (changes[m / 2 - 1] + changes[m / 2])
    };
    Ok(CounterfactualSummary {
        episodes: m,
        closer_fraction: closer as f64 / m.max(1) as f64,
        median_other_change: median,
    })
}

/// Out-of-distribution environments derived from a base configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    DoubleSpeed,
    HalfArena,
    DoubleAgents,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::DoubleSpeed, Scenario::HalfArena, Scenario::DoubleAgents];

    pub fn apply(self, base: &EnvConfig) -> EnvConfig {
        let mut c = base.clone();
        match self {
            Scenario::DoubleSpeed => c.speed_multiplier *= 2.0,
            Scenario::HalfArena => c.arena_scale *= 0.5,
            Scenario::DoubleAgents => c.n_agents *= 2,
        }
        c
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::DoubleSpeed => "double_speed",
            Scenario::HalfArena => "half_arena",
            Scenario::DoubleAgents => "double_agents",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub config: EnvConfig,
    pub report: EvalReport,
}

/// Evaluates the model zero-shot on freshly simulated episodes of each scenario.
#[allow(clippy::too_many_arguments)]
pub fn generalization_sweep<S: Scalar>(
    model: &Model<S>,
    base: &EnvConfig,
    scenarios: &[Scenario],
    episodes: usize,
    seed: u64,
    fade: Option<Fade>,
    headline: Headline,
    jobs: usize,
) -> Result<Vec<ScenarioReport>> {
    scenarios
        .iter()
        .map(|&s| {
            let config = s.apply(base);
            let data = Dataset::generate(&config, episodes, derive_seed(seed, s.name(), 0), jobs)?;
            let eps: Vec<&Episode> = data.episodes.iter().collect();
            let report = evaluate(model, &eps, fade, headline, 64, jobs)?;
            Ok(ScenarioReport {
                scenario: s,
                config,
                report,
            })
        })
        .collect()
}

/// Headline layer convention: the first stage for multiplex models, else the best layer.
pub fn default_headline(mode: LatentMode) -> Headline {
    match mode {
        LatentMode::Multiplex => Headline::Layer(0),
        _ => Headline::BestLayer,
    }
}
