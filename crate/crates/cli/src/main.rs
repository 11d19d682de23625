//! `mplx`: dataset generation, training, evaluation, counterfactual probing and plotting.

mod artifacts;
mod commands;
mod config;
mod error;
mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mplx::model::{Aggregation, RowEdit};
use mplx::train::{FadeUnit, TrainMode};

use config::LayerChoice;
use error::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "mplx", version, about = "Multiplex relational trajectory forecasting workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML file with [env], [model], [train] and [eval] sections
    #[arg(long)]
    config: Option<PathBuf>,
    /// master seed (falls back to the file, then MPLX_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
    /// worker threads (falls back to the file, then MPLX_JOBS, then all cores)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate episodes and write them with a digest manifest
    GenData(GenDataArgs),
    /// Train a model on a generated dataset
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset's test split
    Eval(EvalArgs),
    /// Re-decode one episode with edited latent rows
    Counterfactual(CounterfactualArgs),
    /// Render figures from logs and matrices
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    /// number of episodes
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value = "data")]
    out: PathBuf,
    #[arg(long)]
    agents: Option<usize>,
    /// speed multiplier
    #[arg(long)]
    speed: Option<f64>,
    #[arg(long)]
    arena_scale: Option<f64>,
    #[arg(long)]
    t_obs: Option<usize>,
    #[arg(long)]
    t_pred: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// dataset file or the directory written by gen-data
    #[arg(long, default_value = "data")]
    data: PathBuf,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long)]
    mode: Option<TrainMode>,
    /// number of latent layers
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// maximum epochs per stage
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    fade_in: Option<usize>,
    #[arg(long, value_parser = parse_serde::<FadeUnit>)]
    fade_unit: Option<FadeUnit>,
    #[arg(long)]
    stop_patience: Option<usize>,
    #[arg(long, value_parser = parse_serde::<Aggregation>)]
    aggregation: Option<Aggregation>,
    /// learning rate 1e-6 and stopping patience 100
    #[arg(long)]
    paper_hparams: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// checkpoint file or training directory
    #[arg(long, default_value = "run")]
    checkpoint: PathBuf,
    #[arg(long, default_value = "data")]
    data: PathBuf,
    #[arg(long, default_value = "eval")]
    out: PathBuf,
    /// headline layer: `all` (mode default), `best` or an index
    #[arg(long)]
    layer: Option<LayerChoice>,
    /// also run the zero-shot generalization scenarios
    #[arg(long)]
    sweep: bool,
    #[arg(long)]
    sweep_episodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CounterfactualArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "run")]
    checkpoint: PathBuf,
    #[arg(long, default_value = "data")]
    data: PathBuf,
    #[arg(long, default_value = "counterfactual")]
    out: PathBuf,
    /// index into the test split
    #[arg(long, default_value_t = 0)]
    episode: usize,
    /// `layer:row->column`, repeatable
    #[arg(long)]
    edit: Vec<RowEdit>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[command(subcommand)]
    kind: PlotKind,
}

#[derive(Debug, Subcommand)]
pub enum PlotKind {
    /// Training and validation loss from a train run's loss.csv
    Loss {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
    /// ADE, FDE and graph accuracy against training-set size, one series per log
    Efficiency {
        #[arg(long, required = true)]
        log: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
    /// Heatmap of a latent graph JSON or a plain nested matrix
    Heatmap {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

fn parse_serde<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Counterfactual(a) => commands::counterfactual(a),
        Command::Plot(a) => commands::plot(a.kind),
    };
    let code = match result {
        Ok(()) => ExitCode::Success,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code as i32);
}
