//! Layered configuration: defaults, then the TOML file, then command-line flags.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use mplx::metrics::{default_headline, Headline};
use mplx::model::{Aggregation, LatentMode};
use mplx::sim::EnvConfig;
use mplx::train::{FadeUnit, TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SEED_VAR: &str = "MPLX_SEED";
pub const JOBS_VAR: &str = "MPLX_JOBS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub mode: TrainMode,
    pub layers: usize,
    pub hidden: usize,
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub plateau_decay: f64,
    pub plateau_patience: usize,
    pub stop_patience: usize,
    pub batch_size: usize,
    pub fade_in: usize,
    pub fade_unit: FadeUnit,
    pub max_epochs: usize,
    pub paper_hparams: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub layer: LayerChoice,
    pub sweep: bool,
    pub sweep_episodes: usize,
    pub batch_size: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            mode: t.mode,
            layers: t.layers,
            hidden: t.hidden,
            aggregation: t.aggregation,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.lr,
            plateau_decay: t.plateau_decay,
            plateau_patience: t.plateau_patience,
            stop_patience: t.stop_patience,
            batch_size: t.batch_size,
            fade_in: t.fade_in,
            fade_unit: t.fade_unit,
            max_epochs: t.max_epochs,
            paper_hparams: false,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            layer: LayerChoice::All,
            sweep: false,
            sweep_episodes: 200,
            batch_size: 64,
        }
    }
}

/// Which latent layer headlines an evaluation; every layer is always reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum LayerChoice {
    /// the mode's default headline layer
    All,
    Best,
    Index(usize),
}

impl LayerChoice {
    pub fn headline(self, mode: LatentMode) -> Headline {
        match self {
            LayerChoice::All => default_headline(mode),
            LayerChoice::Best => Headline::BestLayer,
            LayerChoice::Index(k) => Headline::Layer(k),
        }
    }
}

impl FromStr for LayerChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "all" => Ok(LayerChoice::All),
            "best" => Ok(LayerChoice::Best),
            k => k
                .parse()
                .map(LayerChoice::Index)
                .map_err(|_| format!("layer must be `all`, `best` or an index, got `{k}`")),
        }
    }
}

impl fmt::Display for LayerChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerChoice::All => f.write_str("all"),
            LayerChoice::Best => f.write_str("best"),
            LayerChoice::Index(k) => write!(f, "{k}"),
        }
    }
}

impl From<LayerChoice> for String {
    fn from(l: LayerChoice) -> String {
        l.to_string()
    }
}

impl TryFrom<String> for LayerChoice {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

/// Everything a subcommand reads from configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub env: EnvConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fills the seed and job count from flags, the file, the environment and defaults, in that order.
    pub fn resolve(&mut self, seed_flag: Option<u64>, jobs_flag: Option<usize>) -> Result<()> {
        let seed = match seed_flag.or(self.seed) {
            Some(s) => s,
            None => env_number(SEED_VAR)?.unwrap_or(0),
        };
        let jobs = match jobs_flag.or(self.jobs) {
            Some(j) => j,
            None => match env_number(JOBS_VAR)? {
                Some(j) => j as usize,
                None => std::thread::available_parallelism().map_or(1, |n| n.get()),
            },
        };
        if jobs == 0 {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        self.seed = Some(seed);
        self.jobs = Some(jobs);
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn jobs(&self) -> usize {
        self.jobs.unwrap_or(1)
    }

    pub fn train_config(&self) -> TrainConfig {
        let (m, t) = (&self.model, &self.train);
        let mut cfg = TrainConfig {
            mode: m.mode,
            layers: m.layers,
            hidden: m.hidden,
            lr: t.lr,
            plateau_decay: t.plateau_decay,
            plateau_patience: t.plateau_patience,
            stop_patience: t.stop_patience,
            batch_size: t.batch_size,
            fade_in: t.fade_in,
            fade_unit: t.fade_unit,
            max_epochs: t.max_epochs,
            seed: self.seed(),
            aggregation: m.aggregation,
        };
        if t.paper_hparams {
            cfg.use_paper_hparams();
        }
        cfg
    }
}

fn env_number(var: &str) -> Result<Option<u64>> {
    match std::env::var(var) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{var} must be a non-negative integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}
