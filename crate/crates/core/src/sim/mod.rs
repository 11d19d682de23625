//! Social navigation environment.
//!
//! Every agent follows another agent (its leader), steering toward the leader's current
//! position, while ORCA keeps agents from colliding. Agents spawn spread around a circle.

pub mod dataset;
pub mod lp;
pub mod orca;
pub mod vec2;

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use lp::{solve_velocity_lp, HalfPlane};
pub use orca::orca_halfplanes;
pub use vec2::Vec2;

const SPAWN_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub n_agents: usize,
    pub agent_radius: f64,
    pub arena_radius: f64,
    pub safety_space: f64,
    pub orca_time_horizon: f64,
    pub preferred_speed: f64,
    pub dt: f64,
    pub t_obs: usize,
    pub t_pred: usize,
    pub speed_multiplier: f64,
    pub arena_scale: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_agents: 5,
            agent_radius: 0.3,
            arena_radius: 8.0,
            safety_space: 0.09,
            orca_time_horizon: 1.0,
            preferred_speed: 1.0,
            dt: 0.25,
            t_obs: 24,
            t_pred: 10,
            speed_multiplier: 1.0,
            arena_scale: 1.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::Config(format!(
                "need at least 2 agents, got {}",
                self.n_agents
            )));
        }
        let positive = [
            ("agent_radius", self.agent_radius),
            ("arena_radius", self.arena_radius),
            ("orca_time_horizon", self.orca_time_horizon),
            ("preferred_speed", self.preferred_speed),
            ("dt", self.dt),
            ("speed_multiplier", self.speed_multiplier),
            ("arena_scale", self.arena_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.safety_space.is_finite() && self.safety_space >= 0.0) {
            return Err(Error::Config("safety_space must be non-negative".into()));
        }
        if self.t_obs == 0 || self.t_pred == 0 {
            return Err(Error::Config("t_obs and t_pred must be at least 1".into()));
        }
        let need = 4.0 * self.agent_radius * (self.n_agents as f64).sqrt();
        if self.spawn_radius() <= need {
            return Err(Error::Config(format!(
                "arena radius {} too small to spawn {} agents (needs > {need})",
                self.spawn_radius(),
                self.n_agents
            )));
        }
        Ok(())
    }

    pub fn max_speed(&self) -> f64 {
        self.preferred_speed * self.speed_multiplier
    }

    pub fn spawn_radius(&self) -> f64 {
        self.arena_radius * self.arena_scale
    }

    pub fn combined_radius(&self) -> f64 {
        2.0 * self.agent_radius + self.safety_space
    }

    pub fn horizon(&self) -> usize {
        self.t_obs + self.t_pred
    }
}

/// `leader[i]` is the agent that agent `i` follows; never `i` itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LeaderGraph {
    pub leader: Vec<usize>,
}

impl LeaderGraph {
    pub fn new(leader: Vec<usize>) -> Result<Self> {
        let n = leader.len();
        for (i, &l) in leader.iter().enumerate() {
            if l == i || l >= n {
                return Err(Error::Config(format!("agent {i} cannot follow {l}")));
            }
        }
        Ok(Self { leader })
    }

    pub fn len(&self) -> usize {
        self.leader.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leader.is_empty()
    }
}

/// Uniform random functional graph without self-loops.
pub fn sample_leader_graph(rng: &mut impl Rng, n: usize) -> Result<LeaderGraph> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 agents, got {n}")));
    }
    let leader = (0..n)
        .map(|i| {
            let k = rng.gen_range(0..n - 1);
            if k >= i {
                k + 1
            } else {
                k
            }
        })
        .collect();
    Ok(LeaderGraph { leader })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub position: Vec2,
    pub velocity: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    pub spawn_jitter: bool,
    /// every preferred velocity is zero
    pub static_agents: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            spawn_jitter: true,
            static_agents: false,
        }
    }
}

/// Agents on a circle at angles `2πi/N + jitter`, jitter uniform in `±π/(4N)`.
pub fn init_positions(rng: &mut impl Rng, config: &EnvConfig, jitter: bool) -> Result<Vec<Vec2>> {
    config.validate()?;
    let n = config.n_agents;
    let radius = config.spawn_radius();
    let span = PI / (4.0 * n as f64);
    let min_gap = 2.0 * config.agent_radius;
    for _ in 0..SPAWN_ATTEMPTS {
        let pts: Vec<Vec2> = (0..n)
            .map(|i| {
                let j = if jitter { rng.gen_range(-span..span) } else { 0.0 };
                let a = TAU * i as f64 / n as f64 + j;
                Vec2::new(radius * a.cos(), radius * a.sin())
            })
            .collect();
        let ok = (0..n).all(|i| (i + 1..n).all(|k| pts[i].dist(pts[k]) >= min_gap));
        if ok {
            return Ok(pts);
        }
    }
    Err(Error::Spawn {
        attempts: SPAWN_ATTEMPTS,
    })
}

/// Heads for the leader at full speed, slowing so as not to overshoot within one step.
pub fn preferred_velocity(agent: &AgentState, leader_pos: Vec2, config: &EnvConfig) -> Vec2 {
    let to = leader_pos - agent.position;
    let d = to.norm();
    if d < 1e-9 {
        return Vec2::ZERO;
    }
    let speed = config.max_speed().min(d / config.dt);
    to * (speed / d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub config: EnvConfig,
    pub seed: u64,
    pub leader: LeaderGraph,
    /// `positions[agent][frame]`, `T_h + T_f` frames
    pub positions: Vec<Vec<[f64; 2]>>,
}

impl Episode {
    pub fn n_agents(&self) -> usize {
        self.positions.len()
    }

    pub fn n_frames(&self) -> usize {
        self.positions.first().map_or(0, |p| p.len())
    }

    pub fn pos(&self, agent: usize, frame: usize) -> Vec2 {
        let [x, y] = self.positions[agent][frame];
        Vec2::new(x, y)
    }

    /// Smallest distance between any two agents over the episode.
    pub fn min_pairwise_distance(&self) -> f64 {
        let n = self.n_agents();
        let mut best = f64::INFINITY;
        for t in 0..self.n_frames() {
            for i in 0..n {
                for k in i + 1..n {
                    best = best.min(self.pos(i, t).dist(self.pos(k, t)));
                }
            }
        }
        best
    }

    /// Largest single-step displacement of any agent.
    pub fn max_step(&self) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..self.n_agents() {
            for t in 1..self.n_frames() {
                best = best.max(self.pos(i, t).dist(self.pos(i, t - 1)));
            }
        }
        best
    }
}

/// One synchronous ORCA step: every agent plans from the same start-of-step state.
pub fn step_agents(states: &mut [AgentState], leader: &LeaderGraph, config: &EnvConfig, opts: &SimOptions) {
    let snapshot = states.to_vec();
    let max_speed = config.max_speed();
    let new_vel: Vec<Vec2> = (0..snapshot.len())
        .map(|i| {
            let pref = if opts.static_agents {
                Vec2::ZERO
            } else {
                preferred_velocity(&snapshot[i], snapshot[leader.leader[i]].position, config)
            };
            let lines = orca_halfplanes(i, &snapshot, config);
            solve_velocity_lp(&lines, pref, max_speed)
        })
        .collect();
    for (s, v) in states.iter_mut().zip(new_vel) {
        s.velocity = v;
        s.position += v * config.dt;
    }
}

pub fn simulate_with(config: &EnvConfig, seed: u64, opts: &SimOptions) -> Result<Episode> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leader = sample_leader_graph(&mut rng, config.n_agents)?;
    let start = init_positions(&mut rng, config, opts.spawn_jitter)?;
    let mut states: Vec<AgentState> = start
        .iter()
        .map(|&p| AgentState {
            position: p,
            velocity: Vec2::ZERO,
        })
        .collect();
    let frames = config.horizon();
    let mut positions: Vec<Vec<[f64; 2]>> = states
        .iter()
        .map(|s| {
            let mut v = Vec::with_capacity(frames);
            v.push([s.position.x, s.position.y]);
            v
        })
        .collect();
    for _ in 1..frames {
        step_agents(&mut states, &leader, config, opts);
        for (track, s) in positions.iter_mut().zip(&states) {
            track.push([s.position.x, s.position.y]);
        }
    }
    Ok(Episode {
        config: config.clone(),
        seed,
        leader,
        positions,
    })
}

/// Frame 0 is the spawn configuration; each later frame is one ORCA step of `dt`.
pub fn simulate_episode(config: &EnvConfig, seed: u64) -> Result<Episode> {
    simulate_with(config, seed, &SimOptions::default())
}
