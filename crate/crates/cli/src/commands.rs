use std::fs::File;
use std::path::{Path, PathBuf};

use mplx::metrics::{
    counterfactual_rollout, evaluate, generalization_sweep, stand_still_ade, EvalReport, Scenario,
    ScenarioReport,
};
use mplx::model::{Fade, LatentGraph, RowEdit};
use mplx::sim::dataset::{generate_dataset, Split};
use mplx::sim::Episode;
use mplx::train::{EpochLog, StageRecord, TrainObserver};
use mplx::Model;
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    create_dir, load_checkpoint, load_dataset, read_json, save_checkpoint, write_json, RunInfo, BEST_STEM,
    DATASET_FILE,
};
use crate::config::{LayerChoice, Settings};
use crate::error::{CliError, Result};
use crate::svg::{self, AgentTrack, Series};
use crate::{Common, CounterfactualArgs, EvalArgs, GenDataArgs, PlotKind, TrainArgs};

const RESOLVED_FILE: &str = "resolved.json";

#[derive(Serialize)]
struct Resolved<'a, I: Serialize> {
    command: &'a str,
    inputs: I,
    config: &'a Settings,
}

fn settings(common: &Common) -> Result<Settings> {
    let mut s = Settings::load(common.config.as_deref())?;
    s.resolve(common.seed, common.jobs)?;
    Ok(s)
}

fn echo<I: Serialize>(dir: &Path, command: &str, inputs: I, config: &Settings) -> Result<()> {
    write_json(
        &dir.join(RESOLVED_FILE),
        &Resolved {
            command,
            inputs,
            config,
        },
    )
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut s = settings(&a.common)?;
    let env = &mut s.env;
    if let Some(v) = a.agents {
        env.n_agents = v;
    }
    if let Some(v) = a.speed {
        env.speed_multiplier = v;
    }
    if let Some(v) = a.arena_scale {
        env.arena_scale = v;
    }
    if let Some(v) = a.t_obs {
        env.t_obs = v;
    }
    if let Some(v) = a.t_pred {
        env.t_pred = v;
    }
    env.validate()?;
    create_dir(&a.out)?;
    let path = a.out.join(DATASET_FILE);
    let (_, manifest) =
        generate_dataset(&s.env, a.n, s.seed(), &path, s.jobs()).map_err(|e| CliError::at(&path, e))?;
    write_json(&a.out.join("manifest.json"), &manifest)?;
    echo(
        &a.out,
        "gen-data",
        serde_json::json!({ "n": a.n, "out": display(&a.out) }),
        &s,
    )?;
    log::info!("wrote {} episodes to {} ({})", a.n, path.display(), manifest.digest);
    Ok(())
}

fn io_core(path: &Path, err: impl std::fmt::Display) -> mplx::Error {
    mplx::Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(err.to_string()),
    }
}

/// Streams the loss log and writes a checkpoint at every stage boundary.
struct RunWriter<'a> {
    dir: PathBuf,
    csv: csv::Writer<File>,
    csv_path: PathBuf,
    lineage: Vec<StageRecord>,
    run: RunInfo<'a>,
}

impl TrainObserver<f64> for RunWriter<'_> {
    fn on_epoch(&mut self, log: &EpochLog) -> mplx::Result<()> {
        self.csv.serialize(log).map_err(|e| io_core(&self.csv_path, e))?;
        self.csv.flush().map_err(|e| io_core(&self.csv_path, e))
    }

    fn on_stage_end(&mut self, record: &StageRecord, model: &Model, fade: Option<Fade>) -> mplx::Result<()> {
        self.lineage.push(record.clone());
        let stem = format!("stage{}", record.stage);
        save_checkpoint(&self.dir, &stem, model, fade, &self.lineage, &self.run)
            .map_err(|e| io_core(&self.dir.join(&stem), e))?;
        Ok(())
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut s = settings(&a.common)?;
    let (m, t) = (&mut s.model, &mut s.train);
    if let Some(v) = a.mode {
        m.mode = v;
    }
    if let Some(v) = a.k {
        m.layers = v;
    }
    if let Some(v) = a.hidden {
        m.hidden = v;
    }
    if let Some(v) = a.aggregation {
        m.aggregation = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.epochs {
        t.max_epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.fade_in {
        t.fade_in = v;
    }
    if let Some(v) = a.fade_unit {
        t.fade_unit = v;
    }
    if let Some(v) = a.stop_patience {
        t.stop_patience = v;
    }
    t.paper_hparams |= a.paper_hparams;

    let ds = load_dataset(&a.data)?;
    s.env = ds.data.header.config.clone();
    let cfg = s.train_config();
    cfg.validate()?;
    create_dir(&a.out)?;
    echo(
        &a.out,
        "train",
        serde_json::json!({
            "data": display(&ds.path),
            "dataset_digest": ds.digest,
            "out": display(&a.out),
            "train_config": cfg,
        }),
        &s,
    )?;

    let train_eps = ds.data.split(Split::Train);
    let val_eps = ds.data.split(Split::Val);
    let csv_path = a.out.join("loss.csv");
    let csv = csv::Writer::from_path(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    let mut writer = RunWriter {
        dir: a.out.clone(),
        csv,
        csv_path,
        lineage: Vec::new(),
        run: RunInfo {
            dataset_digest: &ds.digest,
            train_episodes: train_eps.len(),
            env: &s.env,
            train: &cfg,
        },
    };
    let outcome = mplx::train::train(&train_eps, &val_eps, &s.env, &cfg, &mut writer)?;
    let best = save_checkpoint(&a.out, BEST_STEM, &outcome.model, outcome.fade, &outcome.lineage, &writer.run)?;
    log::info!(
        "best validation loss {:.6} after {} stage(s); checkpoint {}",
        outcome.best_val(),
        outcome.lineage.len(),
        best.display()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct EvalOutput {
    checkpoint: String,
    checkpoint_digest: String,
    dataset: String,
    dataset_digest: String,
    training_dataset_digest: String,
    digests_match: bool,
    train_episodes: usize,
    alpha: f64,
    stand_still_ade: f64,
    report: EvalReport,
    sweep: Option<Vec<ScenarioReport>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SummaryRow {
    train_episodes: usize,
    ade: f64,
    fde: f64,
    graph_accuracy: f64,
}

fn check_compatible(model: &Model, ep: &Episode, path: &Path) -> Result<()> {
    let cfg = &model.config;
    if cfg.t_obs + cfg.t_pred > ep.n_frames() {
        return Err(CliError::Version {
            path: path.to_path_buf(),
            message: format!(
                "episodes have {} frames but the model needs {} observed + {} predicted",
                ep.n_frames(),
                cfg.t_obs,
                cfg.t_pred
            ),
        });
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut s = settings(&a.common)?;
    if let Some(v) = a.layer {
        s.eval.layer = v;
    }
    if let Some(v) = a.sweep_episodes {
        s.eval.sweep_episodes = v;
    }
    s.eval.sweep |= a.sweep;

    let ck = load_checkpoint(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    let test = ds.data.split(Split::Test);
    let first = test
        .first()
        .ok_or_else(|| CliError::Config(format!("{}: test split is empty", ds.path.display())))?;
    check_compatible(&ck.model, first, &ds.path)?;
    if let LayerChoice::Index(k) = s.eval.layer {
        if k >= ck.model.config.layers {
            return Err(CliError::Config(format!(
                "layer {k} out of range for a {}-layer model",
                ck.model.config.layers
            )));
        }
    }
    let model = &ck.model;
    let fade = ck.sidecar.fade();
    let headline = s.eval.layer.headline(model.config.mode);
    let report = evaluate(model, &test, fade, headline, s.eval.batch_size, s.jobs())?;
    let still = stand_still_ade(&test, model.config.t_obs, model.config.t_pred)?;
    let sweep = if s.eval.sweep {
        Some(generalization_sweep(
            model,
            &ds.data.header.config,
            &Scenario::ALL,
            s.eval.sweep_episodes,
            s.seed(),
            fade,
            headline,
            s.jobs(),
        )?)
    } else {
        None
    };

    create_dir(&a.out)?;
    let out = EvalOutput {
        checkpoint: display(&ck.path),
        checkpoint_digest: ck.sidecar.checkpoint_digest.clone(),
        dataset: display(&ds.path),
        digests_match: ds.digest == ck.sidecar.dataset_digest,
        dataset_digest: ds.digest.clone(),
        training_dataset_digest: ck.sidecar.dataset_digest.clone(),
        train_episodes: ck.sidecar.train_episodes,
        alpha: ck.sidecar.alpha,
        stand_still_ade: still,
        report,
        sweep,
    };
    write_json(&a.out.join("report.json"), &out)?;
    let csv_path = a.out.join("per_episode.csv");
    mplx::checkpoint::write_atomic(&csv_path, out.report.per_episode_csv().as_bytes())
        .map_err(|e| CliError::at(&csv_path, e))?;
    let summary_path = a.out.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path).map_err(|e| CliError::io(&summary_path, e))?;
    w.serialize(SummaryRow {
        train_episodes: out.train_episodes,
        ade: out.report.ade,
        fde: out.report.fde,
        graph_accuracy: out.report.headline_accuracy,
    })
    .and_then(|_| w.flush().map_err(csv::Error::from))
    .map_err(|e| CliError::io(&summary_path, e))?;
    echo(
        &a.out,
        "eval",
        serde_json::json!({ "checkpoint": out.checkpoint, "data": out.dataset }),
        &s,
    )?;
    let r = &out.report;
    log::info!(
        "ade {:.4} fde {:.4} graph accuracy {:?} (headline layer {} = {:.3}, chance {:.3})",
        r.ade,
        r.fde,
        r.graph_accuracy,
        r.headline_layer,
        r.headline_accuracy,
        r.chance_accuracy
    );
    Ok(())
}

#[derive(Serialize)]
struct CounterfactualOutput<'a> {
    episode_index: usize,
    episode_seed: u64,
    edits: Vec<String>,
    original: &'a [Vec<[f64; 2]>],
    edited: &'a [Vec<[f64; 2]>],
    graph_before: &'a LatentGraph,
    graph_after: &'a LatentGraph,
}

fn rows(g: &LatentGraph, layer: usize) -> Vec<Vec<f64>> {
    g.layer(layer).chunks(g.n).map(<[f64]>::to_vec).collect()
}

pub fn counterfactual(a: CounterfactualArgs) -> Result<()> {
    let s = settings(&a.common)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    let test = ds.data.split(Split::Test);
    let ep = *test.get(a.episode).ok_or_else(|| {
        CliError::Config(format!(
            "episode {} out of range: the test split has {} episodes",
            a.episode,
            test.len()
        ))
    })?;
    check_compatible(&ck.model, ep, &ds.path)?;
    let cf = counterfactual_rollout(&ck.model, ep, &a.edit, ck.sidecar.fade())?;
    let (t_obs, t_pred) = (ck.model.config.t_obs, ck.model.config.t_pred);

    let panel = |size: f64, title: &str, predictions: &[Vec<[f64; 2]>]| {
        let tracks: Vec<AgentTrack<'_>> = (0..ep.n_agents())
            .map(|i| AgentTrack {
                observed: &ep.positions[i][..t_obs],
                future: &ep.positions[i][t_obs..t_obs + t_pred],
                predicted: &predictions[i],
            })
            .collect();
        svg::trajectory_panel(title, &tracks, ep.config.spawn_radius() * 1.3, size)
    };
    let size = 360.0;
    let layers = ck.model.layer_count();
    let cell = 24.0;
    let map_height = ep.n_agents() as f64 * cell + 30.0;
    let mut body = String::new();
    body.push_str(&svg::group("panel", "original", 10.0, 10.0, &panel(size, "trajectories", &cf.original.predictions)));
    body.push_str(&svg::group("panel", "edited", 20.0 + size, 10.0, &panel(size, "trajectories", &cf.edited.predictions)));
    for k in 0..layers {
        let y = 30.0 + size + k as f64 * map_height;
        let title = format!("layer {k}");
        body.push_str(&svg::group("heatmap", &format!("original-{k}"), 10.0, y, &svg::heatmap(&title, &rows(&cf.graph_before, k), cell)));
        body.push_str(&svg::group("heatmap", &format!("edited-{k}"), 20.0 + size, y, &svg::heatmap(&title, &rows(&cf.graph_after, k), cell)));
    }
    let height = 40.0 + size + layers as f64 * map_height;
    create_dir(&a.out)?;
    let svg_path = a.out.join("counterfactual.svg");
    mplx::checkpoint::write_atomic(&svg_path, svg::document(30.0 + 2.0 * size, height, &body).as_bytes())
        .map_err(|e| CliError::at(&svg_path, e))?;
    write_json(
        &a.out.join("counterfactual.json"),
        &CounterfactualOutput {
            episode_index: a.episode,
            episode_seed: ep.seed,
            edits: a.edit.iter().map(RowEdit::to_string).collect(),
            original: &cf.original.predictions,
            edited: &cf.edited.predictions,
            graph_before: &cf.graph_before,
            graph_after: &cf.graph_after,
        },
    )?;
    echo(
        &a.out,
        "counterfactual",
        serde_json::json!({
            "checkpoint": display(&ck.path),
            "data": display(&ds.path),
            "episode": a.episode,
            "edits": a.edit.iter().map(RowEdit::to_string).collect::<Vec<_>>(),
        }),
        &s,
    )?;
    log::info!("wrote {}", svg_path.display());
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| CliError::io(path, e))?;
    if rows.is_empty() {
        return Err(CliError::io(path, "no data rows"));
    }
    Ok(rows)
}

fn write_svg(dir: &Path, name: &str, doc: &str) -> Result<PathBuf> {
    create_dir(dir)?;
    let path = dir.join(name);
    mplx::checkpoint::write_atomic(&path, doc.as_bytes()).map_err(|e| CliError::at(&path, e))?;
    Ok(path)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MatrixFile {
    Graph(LatentGraph),
    Stack(Vec<Vec<Vec<f64>>>),
    Single(Vec<Vec<f64>>),
    Counterfactual { graph_before: LatentGraph },
}

pub fn plot(kind: PlotKind) -> Result<()> {
    let written = match kind {
        PlotKind::Loss { log, out } => {
            let rows: Vec<EpochLog> = read_rows(&log)?;
            let series = |name: &str, f: fn(&EpochLog) -> f64| Series {
                name: name.to_string(),
                points: rows.iter().enumerate().map(|(i, r)| ((i + 1) as f64, f(r))).collect(),
            };
            let chart = svg::line_chart(
                "loss",
                "epoch (all stages)",
                &[series("train", |r| r.train_loss), series("val", |r| r.val_loss)],
                640.0,
                360.0,
            );
            write_svg(&out, "loss.svg", &svg::document(640.0, 360.0, &chart))?
        }
        PlotKind::Efficiency { log, out } => {
            let runs: Vec<(String, Vec<SummaryRow>)> = log
                .iter()
                .map(|p| {
                    let name = p.file_stem().map_or_else(|| display(p), |s| s.to_string_lossy().into_owned());
                    read_rows(p).map(|mut rows: Vec<SummaryRow>| {
                        rows.sort_by_key(|r| r.train_episodes);
                        (name, rows)
                    })
                })
                .collect::<Result<_>>()?;
            let metrics: [(&str, fn(&SummaryRow) -> f64); 3] = [
                ("ade", |r| r.ade),
                ("fde", |r| r.fde),
                ("graph_accuracy", |r| r.graph_accuracy),
            ];
            let (w, h) = (480.0, 300.0);
            let mut body = String::new();
            for (m, (metric, f)) in metrics.iter().enumerate() {
                let series: Vec<Series> = runs
                    .iter()
                    .map(|(name, rows)| Series {
                        name: name.clone(),
                        points: rows.iter().map(|r| (r.train_episodes as f64, f(r))).collect(),
                    })
                    .collect();
                let chart = svg::line_chart(metric, "training episodes", &series, w, h);
                body.push_str(&svg::group("chart", metric, m as f64 * w, 0.0, &chart));
            }
            write_svg(&out, "efficiency.svg", &svg::document(3.0 * w, h, &body))?
        }
        PlotKind::Heatmap { matrix, out } => {
            let layers: Vec<Vec<Vec<f64>>> = match read_json::<MatrixFile>(&matrix)? {
                MatrixFile::Graph(g) | MatrixFile::Counterfactual { graph_before: g } => {
                    (0..g.layers).map(|k| rows(&g, k)).collect()
                }
                MatrixFile::Stack(s) => s,
                MatrixFile::Single(m) => vec![m],
            };
            if layers.iter().all(|m| m.is_empty()) {
                return Err(CliError::io(&matrix, "matrix is empty"));
            }
            let cell = 28.0;
            let n = layers.iter().map(Vec::len).max().unwrap_or(0) as f64;
            let mut body = String::new();
            for (k, m) in layers.iter().enumerate() {
                let x = 10.0 + k as f64 * (n * cell + 60.0);
                let map = svg::heatmap(&format!("layer {k}"), m, cell);
                body.push_str(&svg::group("heatmap", &format!("layer-{k}"), x, 24.0, &map));
            }
            let width = 20.0 + layers.len() as f64 * (n * cell + 60.0);
            write_svg(&out, "heatmap.svg", &svg::document(width, n * cell + 40.0, &body))?
        }
    };
    log::info!("wrote {}", written.display());
    Ok(())
}
