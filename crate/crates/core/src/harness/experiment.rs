//! Running (algorithm, seed) jobs and sweeps, and persisting what they produce.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{MetricsWriter, SweepRecord};
use super::summary::{summarize, RunSummary};
use crate::env::Env;
use crate::error::{Error, Result};
use crate::learner::ga::SchedulePolicy;
use crate::learner::{
    checkpoint, episode_seed, run_episode, train_loop, Algorithm, EpisodeAccumulator, EpisodeStats, Ga, Maddpg, Madqn,
    NullSink, Objective, Policy, RandomPolicy, Sink,
};
use crate::scenario::{ExperimentConfig, Range};

/// Run-level facts that cannot be recovered from the metric rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub config_hash: String,
    pub final_window: usize,
    pub seeds: Vec<u64>,
    /// Wall-clock seconds per algorithm, summed over seeds.
    pub wall_clock_s: BTreeMap<String, f64>,
}

impl RunMeta {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join("meta.json")
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(Self::path(dir))?)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(Self::path(dir), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// What a finished job leaves behind in memory.
pub enum Trained {
    Actor(Box<Maddpg>),
    Q(Box<Madqn>),
    Schedule(Vec<f64>),
}

/// Train or evolve one algorithm on one seed, reporting into `sink`.
///
/// GA reports its generations, then the evaluation of its best schedule on
/// the same final-window episode seeds the learners end on.
pub fn run_algorithm(
    cfg: &ExperimentConfig,
    algo: Algorithm,
    seed: u64,
    sink: &mut dyn Sink,
) -> Result<(Vec<EpisodeStats>, Trained)> {
    let mut env = Env::new(cfg)?;
    let episodes = cfg.learner.episodes;
    match algo {
        Algorithm::MoMaddpg | Algorithm::Maddpg => {
            let objective = if algo == Algorithm::MoMaddpg { Objective::Multi } else { Objective::Scalar };
            let mut m = Maddpg::new(cfg, objective, seed)?;
            let h = train_loop(&mut m, &mut env, seed, episodes, sink)?;
            Ok((h, Trained::Actor(Box::new(m))))
        }
        Algorithm::Madqn => {
            let mut m = Madqn::new(cfg, seed)?;
            let h = train_loop(&mut m, &mut env, seed, episodes, sink)?;
            Ok((h, Trained::Q(Box::new(m))))
        }
        Algorithm::Ga => {
            let mut ga = Ga::new(cfg, seed)?;
            let mut gens = Vec::new();
            let res = ga.run(&mut env, |g| gens.push(*g))?;
            for g in &gens {
                sink.generation(g)?;
            }
            let mut policy = SchedulePolicy::new(env.layout(), res.best.clone());
            let window = cfg.harness.final_window.min(episodes);
            let mut h = Vec::with_capacity(window);
            for e in episodes - window..episodes {
                h.push(run_episode(&mut env, &mut policy, e, episode_seed(seed, e), false, sink)?);
            }
            Ok((h, Trained::Schedule(res.best)))
        }
    }
}

pub struct RunRequest {
    pub cfg: ExperimentConfig,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub run_id: String,
    pub save_checkpoints: bool,
}

pub fn checkpoint_path(run_dir: &Path, algo: Algorithm, seed: u64) -> PathBuf {
    run_dir.join(format!("{}-seed{seed}.ckpt.json", algo.name()))
}

/// Execute every (algorithm, seed) pair and summarize the run directory.
pub fn run_experiment(req: &RunRequest) -> Result<Vec<RunSummary>> {
    if req.algorithms.is_empty() || req.seeds.is_empty() {
        return Err(Error::domain("need at least one algorithm and one seed"));
    }
    req.cfg.validate()?;
    let dir = req.out_dir.join(&req.run_id);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), req.cfg.to_toml_string())?;
    let mut meta = RunMeta {
        run_id: req.run_id.clone(),
        config_hash: req.cfg.hash(),
        final_window: req.cfg.harness.final_window,
        seeds: req.seeds.clone(),
        wall_clock_s: BTreeMap::new(),
    };
    for &algo in &req.algorithms {
        let started = Instant::now();
        let mut w = MetricsWriter::create(
            &dir.join(format!("{}.csv", algo.name())),
            &req.run_id,
            algo.name(),
            req.cfg.harness.step_metrics,
        )?;
        for &seed in &req.seeds {
            w.set_seed(seed);
            let (_, trained) = run_algorithm(&req.cfg, algo, seed, &mut w)?;
            if req.save_checkpoints {
                let path = checkpoint_path(&dir, algo, seed);
                match &trained {
                    Trained::Actor(m) => checkpoint::save(&path, &req.cfg, algo.name(), seed, m.as_ref())?,
                    Trained::Q(m) => checkpoint::save(&path, &req.cfg, algo.name(), seed, m.as_ref())?,
                    Trained::Schedule(g) => checkpoint::save(&path, &req.cfg, algo.name(), seed, g)?,
                }
            }
        }
        w.finish()?;
        meta.wall_clock_s.insert(algo.name().to_string(), started.elapsed().as_secs_f64());
    }
    meta.save(&dir)?;
    Ok(summarize(&dir)?.0)
}

/// Evaluate a saved policy greedily on the last `episodes` episode seeds of
/// the run it came from. With `embeddings`, actor-critic checkpoints also
/// write each step's node embeddings as JSON lines.
pub fn evaluate_checkpoint(
    cfg: &ExperimentConfig,
    algo: Algorithm,
    path: &Path,
    episodes: usize,
    sink: &mut dyn Sink,
    mut embeddings: Option<&mut dyn Write>,
) -> Result<Vec<EpisodeStats>> {
    let mut env = Env::new(cfg)?;
    let first = cfg.learner.episodes.saturating_sub(episodes);
    let mut out = Vec::new();
    match algo {
        Algorithm::MoMaddpg | Algorithm::Maddpg => {
            let ck = checkpoint::load::<Maddpg>(path, cfg, algo.name())?;
            let mut m = ck.payload;
            m.resume(ck.seed);
            for e in first..first + episodes {
                let s = episode_seed(ck.seed, e);
                match embeddings.as_deref_mut() {
                    Some(w) => out.push(embed_episode(&mut env, &mut m, e, s, sink, w)?),
                    None => out.push(run_episode(&mut env, &mut m, e, s, false, sink)?),
                }
            }
        }
        Algorithm::Madqn => {
            let ck = checkpoint::load::<Madqn>(path, cfg, algo.name())?;
            let mut m = ck.payload;
            m.resume(ck.seed);
            for e in first..first + episodes {
                out.push(run_episode(&mut env, &mut m, e, episode_seed(ck.seed, e), false, sink)?);
            }
        }
        Algorithm::Ga => {
            let ck = checkpoint::load::<Vec<f64>>(path, cfg, algo.name())?;
            let mut p = SchedulePolicy::new(env.layout(), ck.payload);
            for e in first..first + episodes {
                out.push(run_episode(&mut env, &mut p, e, episode_seed(ck.seed, e), false, sink)?);
            }
        }
    }
    Ok(out)
}

fn embed_episode(
    env: &mut Env,
    m: &mut Maddpg,
    episode: usize,
    seed: u64,
    sink: &mut dyn Sink,
    w: &mut dyn Write,
) -> Result<EpisodeStats> {
    let mut obs = env.reset(seed)?;
    let mut acc = EpisodeAccumulator::new(episode, seed);
    loop {
        let z = m.embed(&obs)?;
        let rows: Vec<Vec<f64>> = z.rows().into_iter().map(|r| r.to_vec()).collect();
        serde_json::to_writer(&mut *w, &serde_json::json!({"episode": episode, "step": obs.step, "embeddings": rows}))?;
        w.write_all(b"\n")?;
        let acts = m.act(&obs, false)?;
        let outcome = env.step(&acts)?;
        sink.step(episode, &outcome.metrics)?;
        acc.push(&outcome.metrics);
        obs = outcome.obs;
        if outcome.done {
            break;
        }
    }
    let stats = acc.finish();
    sink.episode(&stats)?;
    Ok(stats)
}

/// Roll the random policy for `steps` slots and write every node as one JSON
/// object per line: the reset state as step 0, then the state after each slot.
pub fn dump_world(cfg: &ExperimentConfig, seed: u64, steps: usize, w: &mut dyn Write) -> Result<()> {
    let mut cfg = cfg.clone();
    cfg.learner.steps_per_episode = steps.max(1);
    let mut env = Env::new(&cfg)?;
    let mut policy = RandomPolicy::new(env.layout(), seed);
    let mut obs = env.reset(seed)?;
    for step in 0..=steps {
        for mut rec in env.world().snapshot_records() {
            rec["step"] = step.into();
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
        if step == steps {
            break;
        }
        let acts = policy.act(&obs, false)?;
        obs = env.step(&acts)?.obs;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    TaskSize,
    Resource,
    Demand,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 3] = [SweepAxis::TaskSize, SweepAxis::Resource, SweepAxis::Demand];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::TaskSize => "task_size",
            SweepAxis::Resource => "resource",
            SweepAxis::Demand => "demand",
        }
    }

    pub fn values(self, cfg: &ExperimentConfig) -> Vec<f64> {
        match self {
            SweepAxis::TaskSize => cfg.sweep.task_size_mb.clone(),
            SweepAxis::Resource => cfg.sweep.resource_scale.clone(),
            SweepAxis::Demand => cfg.sweep.demand.clone(),
        }
    }

    /// The config of one grid point.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> ExperimentConfig {
        let mut c = cfg.clone();
        match self {
            SweepAxis::TaskSize => c.task.data_mb = Range::point(value),
            SweepAxis::Resource => {
                let w = &mut c.world;
                w.edge_cpu_hz = Range(w.edge_cpu_hz.lo() * value, w.edge_cpu_hz.hi() * value);
                w.cloud_cpu_hz = Range(w.cloud_cpu_hz.lo() * value, w.cloud_cpu_hz.hi() * value);
            }
            SweepAxis::Demand => c.task.arrival_prob = value,
        }
        c
    }
}

/// Mean per-episode metrics of the fixed random policy at each grid point.
///
/// Every point replays the same episode seeds and the same action stream,
/// so differences come from the physics alone.
pub fn sweep_random_policy(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    seed: u64,
) -> Result<Vec<(f64, Vec<EpisodeStats>)>> {
    let mut out = Vec::new();
    for value in axis.values(cfg) {
        let c = axis.apply(cfg, value);
        c.validate()?;
        let mut env = Env::new(&c)?;
        let mut policy = RandomPolicy::new(env.layout(), seed);
        let mut stats = Vec::with_capacity(c.sweep.episodes);
        for e in 0..c.sweep.episodes {
            stats.push(run_episode(&mut env, &mut policy, e, episode_seed(seed, e), false, &mut NullSink)?);
        }
        out.push((value, stats));
    }
    Ok(out)
}

/// Write `sweep_<axis>.csv` for each configured axis.
pub fn run_sweeps(cfg: &ExperimentConfig, seeds: &[u64], dir: &Path, run_id: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for axis in SweepAxis::ALL {
        if axis.values(cfg).is_empty() {
            continue;
        }
        let path = dir.join(format!("sweep_{}.csv", axis.name()));
        let mut w = csv::Writer::from_path(&path)?;
        for &seed in seeds {
            for (value, stats) in sweep_random_policy(cfg, axis, seed)? {
                for s in stats {
                    for (metric, v) in s.named_values() {
                        w.serialize(SweepRecord {
                            run_id: run_id.to_string(),
                            axis: axis.name().to_string(),
                            axis_value: value,
                            policy: "random".into(),
                            seed,
                            episode: s.episode,
                            metric: metric.to_string(),
                            value: v,
                        })?;
                    }
                }
            }
        }
        w.flush()?;
        files.push(path);
    }
    Ok(files)
}
