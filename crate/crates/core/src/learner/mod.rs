//! Function approximators, replay, the actor-critic trainers, and the baselines.

pub mod checkpoint;
pub mod ga;
pub mod maddpg;
pub mod madqn;
pub mod nn;
pub mod replay;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{Env, FeasibilityReport, Observation, RewardVector, StepMetrics};
use crate::error::{Error, Result};
use crate::seed::{self, stream};

pub use ga::{Ga, GaResult};
pub use maddpg::{Maddpg, Objective, UpdateStats};
pub use madqn::Madqn;
pub use replay::{Experience, ReplayBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    MoMaddpg,
    Maddpg,
    Madqn,
    Ga,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::MoMaddpg, Algorithm::Maddpg, Algorithm::Madqn, Algorithm::Ga];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::MoMaddpg => "mo-maddpg",
            Algorithm::Maddpg => "maddpg",
            Algorithm::Madqn => "madqn",
            Algorithm::Ga => "ga",
        }
    }

    /// Stream label so that algorithms never share random numbers.
    pub fn stream_id(self) -> u64 {
        match self {
            Algorithm::MoMaddpg => 1,
            Algorithm::Maddpg => 2,
            Algorithm::Madqn => 3,
            Algorithm::Ga => 4,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown algorithm `{s}` (expected mo-maddpg, maddpg, madqn or ga)")))
    }
}

/// Seed of episode `episode` in a run; shared by every algorithm.
pub fn episode_seed(run_seed: u64, episode: usize) -> u64 {
    seed::derive(run_seed, &[stream::EPISODE, episode as u64])
}

/// Per-episode aggregate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub seed: u64,
    pub steps: usize,
    /// Sum of the scalarized per-step reward.
    pub reward: f64,
    /// Per-step means of the five reward components.
    pub reward_vector: RewardVector,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub latency: f64,
    pub energy: f64,
    pub cost: f64,
    pub ux: f64,
    pub utility: f64,
    pub energy_by_tier: [f64; 3],
    pub migrations: usize,
    pub migration_successes: usize,
    pub tasks: usize,
    pub feasibility: FeasibilityReport,
    pub channel_violations: usize,
}

impl EpisodeStats {
    pub fn migration_success_rate(&self) -> Option<f64> {
        (self.migrations > 0).then(|| self.migration_successes as f64 / self.migrations as f64)
    }

    /// Named numeric series, in a stable order, for the metrics sink.
    pub fn named_values(&self) -> Vec<(&'static str, f64)> {
        let r = self.reward_vector;
        let mut out = vec![
            ("reward", self.reward),
            ("r_ux", r.r_ux),
            ("r_util", r.r_util),
            ("r_lat", r.r_lat),
            ("r_en", r.r_en),
            ("r_cost", r.r_cost),
            ("latency", self.latency),
            ("energy", self.energy),
            ("energy_vehicle", self.energy_by_tier[0]),
            ("energy_edge", self.energy_by_tier[1]),
            ("energy_cloud", self.energy_by_tier[2]),
            ("cost", self.cost),
            ("ux", self.ux),
            ("utility", self.utility),
            ("migrations", self.migrations as f64),
            ("tasks", self.tasks as f64),
            ("channel_violations", self.channel_violations as f64),
        ];
        if let Some(l) = self.critic_loss {
            out.push(("loss", l));
        }
        if let Some(l) = self.actor_loss {
            out.push(("actor_loss", l));
        }
        if let Some(m) = self.migration_success_rate() {
            out.push(("msr", m));
        }
        for c in 1..=10 {
            out.push((VIOLATION_NAMES[c - 1], self.feasibility.violations(c) as f64));
        }
        out
    }
}

const VIOLATION_NAMES: [&str; 10] = [
    "violations_c1",
    "violations_c2",
    "violations_c3",
    "violations_c4",
    "violations_c5",
    "violations_c6",
    "violations_c7",
    "violations_c8",
    "violations_c9",
    "violations_c10",
];

/// Running sums for one episode.
#[derive(Debug, Clone)]
pub struct EpisodeAccumulator {
    stats: EpisodeStats,
    sums: [f64; 5],
    vector: [f64; 5],
    tiers: [f64; 3],
    loss: (f64, usize),
    actor: (f64, usize),
}

impl EpisodeAccumulator {
    pub fn new(episode: usize, seed: u64) -> Self {
        EpisodeAccumulator {
            stats: EpisodeStats { episode, seed, ..EpisodeStats::default() },
            sums: [0.0; 5],
            vector: [0.0; 5],
            tiers: [0.0; 3],
            loss: (0.0, 0),
            actor: (0.0, 0),
        }
    }

    pub fn push(&mut self, m: &StepMetrics) {
        let s = &mut self.stats;
        s.steps += 1;
        s.reward += m.scalar;
        for (acc, x) in self.vector.iter_mut().zip(m.reward.to_array()) {
            *acc += x;
        }
        for (acc, x) in self.sums.iter_mut().zip([m.latency_mean, m.energy_mean, m.cost_mean, m.ux_mean, m.utility]) {
            *acc += x;
        }
        for (acc, x) in self.tiers.iter_mut().zip(m.energy_by_tier) {
            *acc += x;
        }
        s.migrations += m.migrations;
        s.migration_successes += m.migration_successes;
        s.tasks += m.tasks;
        s.feasibility.add(&m.feasibility);
        s.channel_violations += m.channel_violations;
    }

    pub fn push_update(&mut self, u: &UpdateStats) {
        self.loss.0 += u.critic_loss;
        self.loss.1 += 1;
        if let Some(a) = u.actor_loss {
            self.actor.0 += a;
            self.actor.1 += 1;
        }
    }

    pub fn finish(mut self) -> EpisodeStats {
        let n = self.stats.steps.max(1) as f64;
        let s = &mut self.stats;
        s.reward_vector = RewardVector::from_array(self.vector.map(|x| x / n));
        [s.latency, s.energy, s.cost, s.ux, s.utility] = self.sums.map(|x| x / n);
        s.energy_by_tier = self.tiers.map(|x| x / n);
        s.critic_loss = (self.loss.1 > 0).then(|| self.loss.0 / self.loss.1 as f64);
        s.actor_loss = (self.actor.1 > 0).then(|| self.actor.0 / self.actor.1 as f64);
        self.stats
    }
}

/// Anything that maps an observation to a joint action.
pub trait Policy {
    fn act(&mut self, obs: &Observation, explore: bool) -> Result<Vec<Vec<f64>>>;
}

/// A policy that also learns from transitions.
pub trait Learner: Policy {
    /// Store a transition; returns statistics when an update ran.
    fn observe(&mut self, e: Experience) -> Result<Option<UpdateStats>>;
}

/// Where runs report progress.
pub trait Sink {
    fn step(&mut self, _episode: usize, _m: &StepMetrics) -> Result<()> {
        Ok(())
    }
    fn episode(&mut self, _s: &EpisodeStats) -> Result<()> {
        Ok(())
    }
    fn generation(&mut self, _g: &ga::GenerationStats) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl Sink for NullSink {}

pub fn flatten(actions: &[Vec<f64>]) -> Vec<f64> {
    actions.iter().flatten().copied().collect()
}

/// Roll out one episode without learning.
pub fn run_episode(
    env: &mut Env,
    policy: &mut dyn Policy,
    episode: usize,
    seed_value: u64,
    explore: bool,
    sink: &mut dyn Sink,
) -> Result<EpisodeStats> {
    let mut obs = env.reset(seed_value)?;
    let mut acc = EpisodeAccumulator::new(episode, seed_value);
    loop {
        let acts = policy.act(&obs, explore)?;
        let out = env.step(&acts)?;
        sink.step(episode, &out.metrics)?;
        acc.push(&out.metrics);
        obs = out.obs;
        if out.done {
            break;
        }
    }
    let stats = acc.finish();
    sink.episode(&stats)?;
    Ok(stats)
}

/// Train for `episodes` episodes whose seeds derive from `run_seed`.
pub fn train_loop(
    learner: &mut dyn Learner,
    env: &mut Env,
    run_seed: u64,
    episodes: usize,
    sink: &mut dyn Sink,
) -> Result<Vec<EpisodeStats>> {
    let mut history = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let s = episode_seed(run_seed, e);
        let mut obs = Arc::new(env.reset(s)?);
        let mut acc = EpisodeAccumulator::new(e, s);
        loop {
            let acts = learner.act(&obs, true)?;
            let out = env.step(&acts)?;
            sink.step(e, &out.metrics)?;
            acc.push(&out.metrics);
            let next = Arc::new(out.obs);
            let update = learner.observe(Experience {
                obs,
                action: flatten(&acts),
                reward: out.reward,
                next_obs: Arc::clone(&next),
                done: out.done,
            })?;
            if let Some(u) = update {
                acc.push_update(&u);
            }
            obs = next;
            if out.done {
                break;
            }
        }
        let stats = acc.finish();
        sink.episode(&stats)?;
        history.push(stats);
    }
    Ok(history)
}

/// Independent uniform actions, for baselines and sweeps.
pub struct RandomPolicy {
    layout: crate::env::AgentLayout,
    rng: rand_chacha::ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(layout: crate::env::AgentLayout, seed_value: u64) -> Self {
        RandomPolicy { layout, rng: seed::rng(seed_value, &[stream::POLICY]) }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _obs: &Observation, _explore: bool) -> Result<Vec<Vec<f64>>> {
        use rand::Rng;
        Ok(self.layout.act_dims().into_iter().map(|d| (0..d).map(|_| self.rng.gen::<f64>()).collect()).collect())
    }
}
