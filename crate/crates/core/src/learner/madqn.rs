//! Independent Q-learners over a discretized action grid.
//!
//! Each action component is quantized to `bins` levels and gets its own
//! output branch, so a network outputs `dims × bins` values.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::maddpg::UpdateStats;
use super::nn::{bellman_target, soft_update_mlp, Act, Adam, Mlp};
use super::replay::{Experience, ReplayBuffer};
use super::{Algorithm, Learner, Policy};
use crate::env::{scalarize, AgentKind, AgentLayout, Observation};
use crate::error::{Error, Result};
use crate::scenario::{ExperimentConfig, LearnerConfig, MadqnConfig};
use crate::seed::{self, stream};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QGroup {
    kind: AgentKind,
    members: Vec<usize>,
    net: Mlp,
    target: Mlp,
    opt: Adam,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Madqn {
    layout: AgentLayout,
    groups: Vec<QGroup>,
    weights: [f64; 5],
    hp: LearnerConfig,
    dq: MadqnConfig,
    planned_steps: usize,
    steps: usize,
    #[serde(skip)]
    replay: Option<ReplayBuffer>,
    #[serde(skip)]
    explore_rng: Option<ChaCha8Rng>,
    #[serde(skip)]
    replay_rng: Option<ChaCha8Rng>,
}

/// Value of bin `b` out of `bins` on `[0, 1]`.
pub fn bin_value(b: usize, bins: usize) -> f64 {
    b as f64 / (bins - 1) as f64
}

/// Nearest bin of an action value.
pub fn bin_of(x: f64, bins: usize) -> usize {
    ((x.clamp(0.0, 1.0) * (bins - 1) as f64).round() as usize).min(bins - 1)
}

impl Madqn {
    pub fn new(cfg: &ExperimentConfig, run_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let hp = cfg.learner.clone();
        let dq = cfg.baselines.madqn.clone();
        let layout = AgentLayout::from_config(cfg);
        let base = [stream::ALGORITHM, Algorithm::Madqn.stream_id()];
        let mut groups = Vec::new();
        for kind in AgentKind::ALL {
            let tier: Vec<usize> = layout.tier(kind).collect();
            if tier.is_empty() {
                continue;
            }
            let sets: Vec<Vec<usize>> =
                if hp.share_weights { vec![tier] } else { tier.into_iter().map(|a| vec![a]).collect() };
            for members in sets {
                let gid = groups.len() as u64;
                let mut sizes = vec![kind.obs_dim()];
                sizes.extend(&hp.hidden);
                sizes.push(kind.act_dim() * dq.bins);
                let net = Mlp::init(
                    &sizes,
                    Act::Relu,
                    Act::Identity,
                    &mut seed::rng(run_seed, &[base[0], base[1], stream::NETWORK_INIT, gid]),
                );
                groups.push(QGroup { kind, members, target: net.clone(), net, opt: Adam::new(dq.lr) });
            }
        }
        Ok(Madqn {
            layout,
            groups,
            weights: cfg.objective.weights,
            planned_steps: hp.episodes * hp.steps_per_episode,
            steps: 0,
            replay: Some(ReplayBuffer::new(hp.buffer_capacity)),
            explore_rng: Some(seed::rng(run_seed, &[base[0], base[1], stream::EXPLORATION])),
            replay_rng: Some(seed::rng(run_seed, &[base[0], base[1], stream::REPLAY])),
            hp,
            dq,
        })
    }

    /// Restore the streams a checkpoint does not carry.
    pub fn resume(&mut self, run_seed: u64) {
        let base = [stream::ALGORITHM, Algorithm::Madqn.stream_id()];
        self.replay = Some(ReplayBuffer::new(self.hp.buffer_capacity));
        self.explore_rng = Some(seed::rng(run_seed, &[base[0], base[1], stream::EXPLORATION]));
        self.replay_rng = Some(seed::rng(run_seed, &[base[0], base[1], stream::REPLAY]));
    }

    /// Linear decay from `epsilon_start` to `epsilon_end` over the first half of training.
    pub fn epsilon(&self) -> f64 {
        let half = (self.planned_steps / 2).max(1) as f64;
        let frac = (self.steps as f64 / half).min(1.0);
        self.dq.epsilon_start + (self.dq.epsilon_end - self.dq.epsilon_start) * frac
    }

    fn inputs(&self, g: &QGroup, obs: &Observation) -> Result<Array2<f64>> {
        let w = g.kind.obs_dim();
        let mut data = Vec::with_capacity(w * g.members.len());
        for &a in &g.members {
            data.extend_from_slice(&obs.locals[a]);
        }
        Array2::from_shape_vec((g.members.len(), w), data).map_err(|e| Error::dim(e.to_string()))
    }

    fn greedy_bins(&self, obs: &Observation) -> Result<Vec<Vec<usize>>> {
        let bins = self.dq.bins;
        let mut out = vec![Vec::new(); self.layout.count()];
        for g in &self.groups {
            let q = g.net.predict(&self.inputs(g, obs)?)?;
            for (r, &a) in g.members.iter().enumerate() {
                out[a] = (0..g.kind.act_dim())
                    .map(|d| {
                        let row = q.row(r);
                        let branch = &row.as_slice().expect("row-major")[d * bins..(d + 1) * bins];
                        let mut best = 0;
                        for b in 1..bins {
                            if branch[b] > branch[best] {
                                best = b;
                            }
                        }
                        best
                    })
                    .collect();
            }
        }
        Ok(out)
    }

    pub fn update(&mut self) -> Result<UpdateStats> {
        let replay = self.replay.take().ok_or(Error::EmptyBatch)?;
        let mut rng = self.replay_rng.take().expect("replay stream present while training");
        let res = self.update_with(&replay, &mut rng);
        self.replay = Some(replay);
        self.replay_rng = Some(rng);
        res
    }

    fn update_with(&mut self, replay: &ReplayBuffer, rng: &mut ChaCha8Rng) -> Result<UpdateStats> {
        let bsz = self.hp.batch_size.min(replay.len());
        let idx = replay.sample_indices(bsz, rng)?;
        let batch: Vec<&Experience> = idx.iter().map(|i| replay.get(*i)).collect();
        let bins = self.dq.bins;
        let gamma = self.hp.gamma;
        let mut total = 0.0;
        let n_groups = self.groups.len() as f64;
        let layout = self.layout;
        let weights = self.weights;
        for g in &mut self.groups {
            let chosen: Vec<usize> = (0..bsz).map(|_| g.members[rng.gen_range(0..g.members.len())]).collect();
            let w = g.kind.obs_dim();
            let ad = g.kind.act_dim();
            let mut xd = Vec::with_capacity(bsz * w);
            let mut xnd = Vec::with_capacity(bsz * w);
            for (b, e) in batch.iter().enumerate() {
                xd.extend_from_slice(&e.obs.locals[chosen[b]]);
                xnd.extend_from_slice(&e.next_obs.locals[chosen[b]]);
            }
            let x = Array2::from_shape_vec((bsz, w), xd).map_err(|e| Error::dim(e.to_string()))?;
            let xn = Array2::from_shape_vec((bsz, w), xnd).map_err(|e| Error::dim(e.to_string()))?;
            let qn = g.target.predict(&xn)?;
            let (q, cache) = g.net.forward(&x)?;
            let mut grad = Array2::zeros(q.raw_dim());
            let mut loss = 0.0;
            let norm = (bsz * ad) as f64;
            for b in 0..bsz {
                let e = batch[b];
                let r = scalarize(&weights, &e.reward);
                let off = layout.action_offset(chosen[b]);
                for d in 0..ad {
                    let taken = bin_of(e.action[off + d], bins);
                    let next_best = (0..bins).map(|k| qn[[b, d * bins + k]]).fold(f64::NEG_INFINITY, f64::max);
                    let y = bellman_target(r, gamma, next_best, e.done);
                    let td = q[[b, d * bins + taken]] - y;
                    loss += td * td / norm;
                    grad[[b, d * bins + taken]] = 2.0 * td / norm;
                }
            }
            let (grads, _) = g.net.backward(&cache, &grad)?;
            let params = g.net.params_mut();
            g.opt.step(params, &grads.params)?;
            soft_update_mlp(&g.net, &mut g.target, self.hp.tau)?;
            total += loss / n_groups;
        }
        Ok(UpdateStats { critic_loss: total, head_losses: vec![total], actor_loss: None })
    }
}

impl Policy for Madqn {
    fn act(&mut self, obs: &Observation, explore: bool) -> Result<Vec<Vec<f64>>> {
        let bins = self.dq.bins;
        let eps = self.epsilon();
        let need_greedy = !explore || eps < 1.0;
        let greedy = if need_greedy { Some(self.greedy_bins(obs)?) } else { None };
        let dims = self.layout.act_dims();
        let rng = self.explore_rng.as_mut().expect("exploration stream present");
        Ok(dims
            .iter()
            .enumerate()
            .map(|(a, &d)| {
                (0..d)
                    .map(|k| {
                        let b = if explore && rng.gen::<f64>() < eps {
                            rng.gen_range(0..bins)
                        } else {
                            greedy.as_ref().expect("greedy bins computed")[a][k]
                        };
                        bin_value(b, bins)
                    })
                    .collect()
            })
            .collect())
    }
}

impl Learner for Madqn {
    fn observe(&mut self, e: Experience) -> Result<Option<UpdateStats>> {
        let replay = self.replay.as_mut().expect("replay present while training");
        replay.push(e);
        self.steps += 1;
        let ready = replay.len() >= self.hp.warmup.max(self.hp.batch_size);
        if ready && self.steps % self.hp.update_every == 0 {
            return self.update().map(Some);
        }
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_round_trip() {
        for b in 0..5 {
            assert_eq!(bin_of(bin_value(b, 5), 5), b);
        }
        assert_eq!(bin_of(-3.0, 5), 0);
        assert_eq!(bin_of(7.0, 5), 4);
    }
}
