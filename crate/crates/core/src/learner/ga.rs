//! Genetic search over open-loop joint-action schedules.
//!
//! A chromosome holds every agent's action at every step of one episode.
//! Fitness is the episodic sum of scalar rewards, averaged over a fixed set
//! of training episodes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Algorithm, NullSink, Policy};
use crate::env::{AgentLayout, Env, Observation};
use crate::error::{Error, Result};
use crate::scenario::{ExperimentConfig, GaConfig};
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub best: Vec<f64>,
    pub best_fitness: f64,
    pub generations: Vec<GenerationStats>,
}

/// Replays a chromosome step by step.
#[derive(Debug, Clone)]
pub struct SchedulePolicy {
    layout: AgentLayout,
    genes: Vec<f64>,
}

impl SchedulePolicy {
    pub fn new(layout: AgentLayout, genes: Vec<f64>) -> Self {
        SchedulePolicy { layout, genes }
    }
}

impl Policy for SchedulePolicy {
    fn act(&mut self, obs: &Observation, _explore: bool) -> Result<Vec<Vec<f64>>> {
        let width = self.layout.joint_action_dim();
        let start = obs.step * width;
        let slot = self
            .genes
            .get(start..start + width)
            .ok_or_else(|| Error::dim(format!("schedule has no genes for step {}", obs.step)))?;
        let mut out = Vec::with_capacity(self.layout.count());
        let mut off = 0;
        for d in self.layout.act_dims() {
            out.push(slot[off..off + d].to_vec());
            off += d;
        }
        Ok(out)
    }
}

pub struct Ga {
    cfg: GaConfig,
    layout: AgentLayout,
    steps: usize,
    rng: ChaCha8Rng,
    train_seeds: Vec<u64>,
    population: Vec<Vec<f64>>,
}

impl Ga {
    pub fn new(cfg: &ExperimentConfig, run_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = AgentLayout::from_config(cfg);
        let steps = cfg.learner.steps_per_episode;
        let base = [stream::ALGORITHM, Algorithm::Ga.stream_id()];
        let mut rng = seed::rng(run_seed, &[base[0], base[1], stream::GA]);
        let genes = steps * layout.joint_action_dim();
        let population =
            (0..cfg.baselines.ga.population).map(|_| (0..genes).map(|_| rng.gen::<f64>()).collect()).collect();
        let train_seeds = (0..cfg.baselines.ga.fitness_episodes)
            .map(|k| seed::derive(run_seed, &[base[0], base[1], stream::EPISODE, k as u64]))
            .collect();
        Ok(Ga { cfg: cfg.baselines.ga.clone(), layout, steps, rng, train_seeds, population })
    }

    pub fn chromosome_len(&self) -> usize {
        self.steps * self.layout.joint_action_dim()
    }

    pub fn population(&self) -> &[Vec<f64>] {
        &self.population
    }

    /// Replace the population, e.g. to seed it with known schedules.
    pub fn set_population(&mut self, population: Vec<Vec<f64>>) -> Result<()> {
        let n = self.chromosome_len();
        if population.len() < 2 || population.iter().any(|c| c.len() != n) {
            return Err(Error::dim(format!("population needs >= 2 chromosomes of {n} genes")));
        }
        self.population = population;
        Ok(())
    }

    pub fn fitness(&self, env: &mut Env, genes: &[f64]) -> Result<f64> {
        let mut policy = SchedulePolicy::new(self.layout, genes.to_vec());
        let mut total = 0.0;
        for (k, &s) in self.train_seeds.iter().enumerate() {
            total += super::run_episode(env, &mut policy, k, s, false, &mut NullSink)?.reward;
        }
        Ok(total / self.train_seeds.len() as f64)
    }

    fn tournament(&mut self, fit: &[f64]) -> usize {
        let n = fit.len();
        let mut best = self.rng.gen_range(0..n);
        for _ in 1..self.cfg.tournament {
            let c = self.rng.gen_range(0..n);
            if fit[c] > fit[best] {
                best = c;
            }
        }
        best
    }

    /// Evolve for the configured number of generations. The best
    /// chromosome always survives unchanged.
    pub fn run(&mut self, env: &mut Env, mut on_generation: impl FnMut(&GenerationStats)) -> Result<GaResult> {
        let mut history = Vec::with_capacity(self.cfg.generations);
        let mut fit: Vec<f64> = Vec::with_capacity(self.population.len());
        for c in &self.population {
            fit.push(self.fitness(env, c)?);
        }
        for generation in 0..self.cfg.generations {
            let elite = argmax(&fit);
            let stats =
                GenerationStats { generation, best: fit[elite], mean: fit.iter().sum::<f64>() / fit.len() as f64 };
            on_generation(&stats);
            history.push(stats);

            let n = self.population.len();
            let len = self.chromosome_len();
            let mut next = Vec::with_capacity(n);
            let mut next_fit = Vec::with_capacity(n);
            next.push(self.population[elite].clone());
            next_fit.push(fit[elite]);
            while next.len() < n {
                let pa = self.tournament(&fit);
                let pb = self.tournament(&fit);
                let mut a = self.population[pa].clone();
                let mut b = self.population[pb].clone();
                if len > 1 && self.rng.gen::<f64>() < self.cfg.crossover_prob {
                    let cut = self.rng.gen_range(1..len);
                    a[cut..].swap_with_slice(&mut b[cut..]);
                }
                for child in [a, b] {
                    if next.len() == n {
                        break;
                    }
                    let mut child = child;
                    let mut mutated = false;
                    for g in child.iter_mut() {
                        if self.rng.gen::<f64>() < self.cfg.mutation_prob {
                            *g = self.rng.gen::<f64>();
                            mutated = true;
                        }
                    }
                    // Unchanged copies keep their parent's score.
                    let known = (!mutated).then(|| {
                        if child == self.population[pa] {
                            Some(fit[pa])
                        } else if child == self.population[pb] {
                            Some(fit[pb])
                        } else {
                            None
                        }
                    });
                    let f = match known.flatten() {
                        Some(f) => f,
                        None => self.fitness(env, &child)?,
                    };
                    next.push(child);
                    next_fit.push(f);
                }
            }
            self.population = next;
            fit = next_fit;
        }
        let elite = argmax(&fit);
        Ok(GaResult { best: self.population[elite].clone(), best_fitness: fit[elite], generations: history })
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = k;
        }
    }
    best
}
