//! JSON-lines episode datasets.
//!
//! Line 1 is a header `{format_version, config, count, master_seed}`; each further line is
//! one episode `{seed, split, leader, positions}` with `positions[agent][frame] = [x, y]`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{simulate_episode, EnvConfig, Episode, LeaderGraph};
use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// 80/10/10 assignment by position in the dataset.
    pub fn for_index(index: usize, count: usize) -> Split {
        let train = count * 8 / 10;
        let val = count / 10;
        if index < train {
            Split::Train
        } else if index < train + val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub config: EnvConfig,
    pub count: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub episodes: Vec<Episode>,
    pub splits: Vec<Split>,
}

#[derive(Deserialize)]
struct EpisodeLine {
    seed: u64,
    split: Split,
    leader: Vec<usize>,
    positions: Vec<Vec<[f64; 2]>>,
}

impl Dataset {
    /// Simulates `count` episodes; episode `i` uses seed `derive_seed(master, "data", i)`.
    pub fn generate(config: &EnvConfig, count: usize, master_seed: u64, jobs: usize) -> Result<Self> {
        config.validate()?;
        let seeds: Vec<u64> = (0..count as u64)
            .map(|i| derive_seed(master_seed, "data", i))
            .collect();
        let jobs = jobs.max(1).min(count.max(1));
        let chunk = count.div_ceil(jobs).max(1);
        let episodes = std::thread::scope(|scope| {
            let handles: Vec<_> = seeds
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|&s| simulate_episode(config, s))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            let mut all = Vec::with_capacity(count);
            for h in handles {
                all.extend(h.join().expect("simulation worker panicked")?);
            }
            Ok::<_, Error>(all)
        })?;
        Ok(Self {
            header: DatasetHeader {
                format_version: DATASET_VERSION,
                config: config.clone(),
                count,
                master_seed,
            },
            splits: (0..count).map(|i| Split::for_index(i, count)).collect(),
            episodes,
        })
    }

    pub fn split(&self, which: Split) -> Vec<&Episode> {
        self.episodes
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == which)
            .map(|(e, _)| e)
            .collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)
            .map_err(|e| Error::Format(format!("dataset header: {e}")))?;
        out.push('\n');
        for (ep, split) in self.episodes.iter().zip(&self.splits) {
            write_episode(&mut out, ep, *split);
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines
            .next()
            .ok_or_else(|| Error::Format("empty dataset".into()))?;
        let header: DatasetHeader = serde_json::from_str(first)
            .map_err(|e| Error::Format(format!("dataset header: {e}")))?;
        if header.format_version != DATASET_VERSION {
            return Err(Error::Version {
                what: "dataset",
                found: header.format_version,
                expected: DATASET_VERSION,
            });
        }
        let n = header.config.n_agents;
        let frames = header.config.horizon();
        let mut episodes = Vec::with_capacity(header.count);
        let mut splits = Vec::with_capacity(header.count);
        for (k, line) in lines.enumerate() {
            let rec: EpisodeLine = serde_json::from_str(line)
                .map_err(|e| Error::Format(format!("episode line {}: {e}", k + 2)))?;
            if rec.positions.len() != n || rec.positions.iter().any(|p| p.len() != frames) {
                return Err(Error::Format(format!(
                    "episode line {}: expected {n} agents x {frames} frames",
                    k + 2
                )));
            }
            episodes.push(Episode {
                config: header.config.clone(),
                seed: rec.seed,
                leader: LeaderGraph::new(rec.leader)?,
                positions: rec.positions,
            });
            splits.push(rec.split);
        }
        if episodes.len() != header.count {
            return Err(Error::Format(format!(
                "header announces {} episodes, found {}",
                header.count,
                episodes.len()
            )));
        }
        Ok(Self {
            header,
            episodes,
            splits,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn write_episode(out: &mut String, ep: &Episode, split: Split) {
    let split = match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    };
    let leader: Vec<String> = ep.leader.leader.iter().map(|l| l.to_string()).collect();
    let _ = write!(
        out,
        "{{\"seed\":{},\"split\":\"{split}\",\"leader\":[{}],\"positions\":[",
        ep.seed,
        leader.join(",")
    );
    for (a, track) in ep.positions.iter().enumerate() {
        if a > 0 {
            out.push(',');
        }
        out.push('[');
        for (t, [x, y]) in track.iter().enumerate() {
            if t > 0 {
                out.push(',');
            }
            // 17 significant digits round-trip every f64
            let _ = write!(out, "[{x:.16e},{y:.16e}]");
        }
        out.push(']');
    }
    out.push_str("]}\n");
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub digest: String,
    pub count: usize,
    pub config: EnvConfig,
    pub master_seed: u64,
}

/// Generates and writes a dataset, returning its digest manifest.
pub fn generate_dataset(
    config: &EnvConfig,
    count: usize,
    master_seed: u64,
    path: &Path,
    jobs: usize,
) -> Result<(Dataset, DatasetManifest)> {
    let data = Dataset::generate(config, count, master_seed, jobs)?;
    let text = data.to_jsonl()?;
    write_atomic(path, text.as_bytes())?;
    let manifest = DatasetManifest {
        digest: sha256_hex(text.as_bytes()),
        count,
        config: config.clone(),
        master_seed,
    };
    Ok((data, manifest))
}
