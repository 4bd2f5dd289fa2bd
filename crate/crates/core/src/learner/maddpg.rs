//! Centralized-critic, decentralized-actor training.
//!
//! [`Objective::Multi`] keeps one critic per reward component and moves each
//! actor along the ω-weighted sum of their action gradients.
//! [`Objective::Scalar`] is plain MADDPG on the scalarized reward.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::nn::{bellman_target, soft_update_mlp, Act, Adam, Mlp, MlpGrads};
use super::replay::{Experience, ReplayBuffer};
use super::{Learner, Policy};
use crate::env::{global_dim, scalarize, AgentKind, AgentLayout, Observation, RewardVector};
use crate::error::{Error, Result};
use crate::gcn::{FeatureNormalizer, Gcn, FEATURE_DIM};
use crate::scenario::{ExperimentConfig, LearnerConfig};
use crate::seed::{self, stream};

const GCN_STREAM: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    Multi,
    Scalar,
}

/// What one gradient update did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Mean over heads (and groups) of the per-head TD losses.
    pub critic_loss: f64,
    /// Per-head TD losses, averaged over groups.
    pub head_losses: Vec<f64>,
    pub actor_loss: Option<f64>,
}

/// Actor and critics for a set of same-tier agents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Group {
    pub kind: AgentKind,
    pub members: Vec<usize>,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critics: Vec<Mlp>,
    pub critic_targets: Vec<Mlp>,
    actor_opt: Adam,
    critic_opts: Vec<Adam>,
}

/// Loss, per-head losses, per-head gradients and per-head input gradients.
pub type CriticLoss = (f64, Vec<f64>, Vec<MlpGrads>, Vec<Array2<f64>>);

/// Critic loss of an ensemble: `(1/K)·Σ_k mean_b (Q_k(x_b) − y_bk)²`.
///
/// Returns the loss, the per-head losses, and for each head the gradients
/// of its own loss `mean_b (Q_k − y_k)²` with respect to its parameters.
/// Heads have disjoint parameters, so stepping each head on its own loss
/// descends the averaged loss too.
pub fn critic_loss(critics: &[Mlp], x: &Array2<f64>, y: &Array2<f64>) -> Result<CriticLoss> {
    let b = x.nrows();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    if y.dim() != (b, critics.len()) {
        return Err(Error::dim(format!("targets {:?}, expected ({b}, {})", y.dim(), critics.len())));
    }
    let mut heads = Vec::with_capacity(critics.len());
    let mut grads = Vec::with_capacity(critics.len());
    let mut dxs = Vec::with_capacity(critics.len());
    for (k, c) in critics.iter().enumerate() {
        let (q, cache) = c.forward(x)?;
        let mut td = q;
        for r in 0..b {
            td[[r, 0]] -= y[[r, k]];
        }
        heads.push(td.iter().map(|d| d * d).sum::<f64>() / b as f64);
        let g = td.mapv(|d| 2.0 * d / b as f64);
        let (gr, dx) = c.backward(&cache, &g)?;
        grads.push(gr);
        dxs.push(dx);
    }
    let loss = heads.iter().sum::<f64>() / heads.len().max(1) as f64;
    Ok((loss, heads, grads, dxs))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Maddpg {
    pub objective: Objective,
    pub weights: [f64; 5],
    pub layout: AgentLayout,
    pub groups: Vec<Group>,
    group_of: Vec<usize>,
    pub gcn: Gcn,
    gcn_opt: Adam,
    pub normalizer: FeatureNormalizer,
    hp: LearnerConfig,
    planned_steps: usize,
    steps: usize,
    #[serde(skip)]
    replay: Option<ReplayBuffer>,
    #[serde(skip)]
    explore_rng: Option<ChaCha8Rng>,
    #[serde(skip)]
    replay_rng: Option<ChaCha8Rng>,
}

fn heads(objective: Objective) -> usize {
    match objective {
        Objective::Multi => 5,
        Objective::Scalar => 1,
    }
}

fn argmax(w: &[f64; 5]) -> usize {
    let mut best = 0;
    for k in 1..5 {
        if w[k] > w[best] {
            best = k;
        }
    }
    best
}

impl Maddpg {
    pub fn new(cfg: &ExperimentConfig, objective: Objective, run_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let hp = cfg.learner.clone();
        let layout = AgentLayout::from_config(cfg);
        let emb = hp.gcn_out;
        let gdim = global_dim(layout.vehicles);
        let jdim = layout.joint_action_dim();
        // Both variants draw networks from the same streams so that a
        // one-hot ω makes them coincide.
        let init = |path: &[u64]| {
            let mut p = vec![stream::NETWORK_INIT];
            p.extend_from_slice(path);
            seed::rng(run_seed, &p)
        };

        let mut member_sets: Vec<(AgentKind, Vec<usize>)> = Vec::new();
        for kind in AgentKind::ALL {
            let tier: Vec<usize> = layout.tier(kind).collect();
            if tier.is_empty() {
                continue;
            }
            if hp.share_weights {
                member_sets.push((kind, tier));
            } else {
                member_sets.extend(tier.into_iter().map(|a| (kind, vec![a])));
            }
        }
        let mut group_of = vec![0; layout.count()];
        let mut groups = Vec::with_capacity(member_sets.len());
        for (g, (kind, members)) in member_sets.into_iter().enumerate() {
            for &a in &members {
                group_of[a] = g;
            }
            let gid = g as u64;
            let mut actor_sizes = vec![kind.obs_dim() + emb];
            actor_sizes.extend(&hp.hidden);
            actor_sizes.push(kind.act_dim());
            let actor = Mlp::init(&actor_sizes, Act::Relu, Act::Sigmoid, &mut init(&[gid, 0]));
            let mut critic_sizes = vec![gdim + 3 * emb + jdim + kind.obs_dim()];
            critic_sizes.extend(&hp.hidden);
            critic_sizes.push(1);
            let critics: Vec<Mlp> = match objective {
                Objective::Multi => (0..5)
                    .map(|k| Mlp::init(&critic_sizes, Act::Relu, Act::Identity, &mut init(&[gid, 1 + k as u64])))
                    .collect(),
                Objective::Scalar => {
                    let k = argmax(&cfg.objective.weights) as u64;
                    vec![Mlp::init(&critic_sizes, Act::Relu, Act::Identity, &mut init(&[gid, 1 + k]))]
                }
            };
            groups.push(Group {
                kind,
                members,
                actor_target: actor.clone(),
                actor,
                critic_targets: critics.clone(),
                critic_opts: critics.iter().map(|_| Adam::new(hp.critic_lr)).collect(),
                critics,
                actor_opt: Adam::new(hp.actor_lr),
            });
        }
        let gcn = Gcn::init(FEATURE_DIM, hp.gcn_hidden, emb, &mut init(&[GCN_STREAM]));
        Ok(Maddpg {
            objective,
            weights: cfg.objective.weights,
            layout,
            groups,
            group_of,
            gcn,
            gcn_opt: Adam::new(hp.gcn_lr),
            normalizer: FeatureNormalizer::new(FEATURE_DIM),
            planned_steps: hp.episodes * hp.steps_per_episode,
            steps: 0,
            replay: Some(ReplayBuffer::new(hp.buffer_capacity)),
            explore_rng: Some(seed::rng(run_seed, &[stream::EXPLORATION])),
            replay_rng: Some(seed::rng(run_seed, &[stream::REPLAY])),
            hp,
        })
    }

    pub fn replay(&self) -> Option<&ReplayBuffer> {
        self.replay.as_ref()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Weight each head's action gradient gets in the actor step.
    fn head_weights(&self) -> Vec<f64> {
        match self.objective {
            Objective::Multi => self.weights.to_vec(),
            Objective::Scalar => vec![1.0],
        }
    }

    fn head_rewards(&self, r: &RewardVector) -> Vec<f64> {
        match self.objective {
            Objective::Multi => r.signed().to_vec(),
            Objective::Scalar => vec![scalarize(&self.weights, r)],
        }
    }

    /// Gaussian exploration scale after `steps` environment steps.
    pub fn noise_scale(&self) -> f64 {
        let half = (self.planned_steps / 2).max(1) as f64;
        let frac = (self.steps as f64 / half).min(1.0);
        self.hp.noise_start + (self.hp.noise_end - self.hp.noise_start) * frac
    }

    fn normalized(&self, obs: &Observation) -> Array2<f64> {
        self.normalizer.normalize(&obs.features)
    }

    /// Node embeddings of an observation.
    pub fn embed(&self, obs: &Observation) -> Result<Array2<f64>> {
        Ok(self.gcn.forward_op(&self.normalized(obs), &obs.operator)?.0)
    }

    fn pooled(&self, z: &Array2<f64>) -> Vec<f64> {
        let emb = self.hp.gcn_out;
        let mut out = vec![0.0; 3 * emb];
        for kind in AgentKind::ALL {
            let tier = self.layout.tier(kind);
            if tier.is_empty() {
                continue;
            }
            let n = tier.len() as f64;
            let base = kind.index() * emb;
            for a in tier {
                for d in 0..emb {
                    out[base + d] += z[[a, d]] / n;
                }
            }
        }
        out
    }

    fn actor_input(obs: &Observation, z: &Array2<f64>, agent: usize, row: &mut Vec<f64>) {
        row.extend_from_slice(&obs.locals[agent]);
        row.extend(z.row(agent).iter());
    }

    fn critic_row(obs: &Observation, pooled: &[f64], action: &[f64], agent: usize, row: &mut Vec<f64>) {
        row.extend_from_slice(&obs.global);
        row.extend_from_slice(pooled);
        row.extend_from_slice(action);
        row.extend_from_slice(&obs.locals[agent]);
    }

    /// Deterministic joint action (no exploration).
    pub fn greedy(&self, obs: &Observation) -> Result<Vec<Vec<f64>>> {
        if obs.locals.len() != self.layout.count() {
            return Err(Error::dim(format!(
                "observation has {} agents, policy expects {}",
                obs.locals.len(),
                self.layout.count()
            )));
        }
        let z = self.embed(obs)?;
        let mut out = vec![Vec::new(); self.layout.count()];
        for g in &self.groups {
            let width = g.actor.input_dim();
            let mut data = Vec::with_capacity(width * g.members.len());
            for &a in &g.members {
                Self::actor_input(obs, &z, a, &mut data);
            }
            let x = Array2::from_shape_vec((g.members.len(), width), data).map_err(|e| Error::dim(e.to_string()))?;
            let y = g.actor.predict(&x)?;
            for (r, &a) in g.members.iter().enumerate() {
                out[a] = y.row(r).to_vec();
            }
        }
        Ok(out)
    }

    /// Run one gradient update on a sampled batch.
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
        let emb = self.hp.gcn_out;
        let gamma = self.hp.gamma;
        let k_heads = heads(self.objective);
        let jdim = self.layout.joint_action_dim();

        // Embeddings: online with caches for s, online without gradient for s'.
        let mut z = Vec::with_capacity(bsz);
        let mut caches = Vec::with_capacity(bsz);
        let mut z_next = Vec::with_capacity(bsz);
        for e in &batch {
            let (zb, cache) = self.gcn.forward_op(&self.normalized(&e.obs), &e.obs.operator)?;
            z.push(zb);
            caches.push(cache);
            z_next.push(self.embed(&e.next_obs)?);
        }
        let pooled: Vec<Vec<f64>> = z.iter().map(|zb| self.pooled(zb)).collect();
        let pooled_next: Vec<Vec<f64>> = z_next.iter().map(|zb| self.pooled(zb)).collect();

        // Target joint actions at s'.
        let mut next_actions = vec![vec![0.0; jdim]; bsz];
        for g in &self.groups {
            let width = g.actor_target.input_dim();
            let mut data = Vec::with_capacity(bsz * g.members.len() * width);
            for (b, e) in batch.iter().enumerate() {
                for &a in &g.members {
                    Self::actor_input(&e.next_obs, &z_next[b], a, &mut data);
                }
            }
            let x =
                Array2::from_shape_vec((bsz * g.members.len(), width), data).map_err(|e| Error::dim(e.to_string()))?;
            let y = g.actor_target.predict(&x)?;
            let ad = g.kind.act_dim();
            for b in 0..bsz {
                for (m, &a) in g.members.iter().enumerate() {
                    let off = self.layout.action_offset(a);
                    for d in 0..ad {
                        next_actions[b][off + d] = y[[b * g.members.len() + m, d]];
                    }
                }
            }
        }

        // One acting member per row and group.
        let chosen: Vec<Vec<usize>> = self
            .groups
            .iter()
            .map(|g| (0..bsz).map(|_| g.members[rng.gen_range(0..g.members.len())]).collect())
            .collect();
        let rewards: Vec<Vec<f64>> = batch.iter().map(|e| self.head_rewards(&e.reward)).collect();

        let gdim = global_dim(self.layout.vehicles);
        let pool_off = gdim;
        let mut pooled_grad = vec![vec![0.0; 3 * emb]; bsz];
        let mut head_losses = vec![0.0; k_heads];
        let n_groups = self.groups.len() as f64;

        for (gi, g) in self.groups.iter_mut().enumerate() {
            let width = g.critics[0].input_dim();
            let mut xd = Vec::with_capacity(bsz * width);
            let mut xnd = Vec::with_capacity(bsz * width);
            for (b, e) in batch.iter().enumerate() {
                let a = chosen[gi][b];
                Self::critic_row(&e.obs, &pooled[b], &e.action, a, &mut xd);
                Self::critic_row(&e.next_obs, &pooled_next[b], &next_actions[b], a, &mut xnd);
            }
            let x = Array2::from_shape_vec((bsz, width), xd).map_err(|e| Error::dim(e.to_string()))?;
            let xn = Array2::from_shape_vec((bsz, width), xnd).map_err(|e| Error::dim(e.to_string()))?;
            let mut y = Array2::zeros((bsz, k_heads));
            for k in 0..k_heads {
                let qn = g.critic_targets[k].predict(&xn)?;
                for b in 0..bsz {
                    y[[b, k]] = bellman_target(rewards[b][k], gamma, qn[[b, 0]], batch[b].done);
                }
            }
            let (_, losses, grads, dxs) = critic_loss(&g.critics, &x, &y)?;
            for k in 0..k_heads {
                head_losses[k] += losses[k] / n_groups;
                let params = g.critics[k].params_mut();
                g.critic_opts[k].step(params, &grads[k].params)?;
            }
            if self.hp.train_gcn {
                // Gradient of the head-averaged loss.
                for dx in &dxs {
                    for b in 0..bsz {
                        for d in 0..3 * emb {
                            pooled_grad[b][d] += dx[[b, pool_off + d]] / k_heads as f64;
                        }
                    }
                }
            }
        }

        if self.hp.train_gcn {
            let mut total: Option<Vec<Array2<f64>>> = None;
            for b in 0..bsz {
                let mut up = Array2::zeros((self.layout.count(), emb));
                for kind in AgentKind::ALL {
                    let tier = self.layout.tier(kind);
                    let n = tier.len() as f64;
                    for a in tier {
                        for d in 0..emb {
                            up[[a, d]] = pooled_grad[b][kind.index() * emb + d] / n;
                        }
                    }
                }
                let (gw, _) = self.gcn.backward_cache(&caches[b], &up)?;
                match total.as_mut() {
                    None => total = Some(gw),
                    Some(t) => {
                        for (t, g) in t.iter_mut().zip(gw) {
                            *t += &g;
                        }
                    }
                }
            }
            if let Some(t) = total {
                let params = self.gcn.params_mut();
                self.gcn_opt.step(params, &t)?;
            }
        }

        // Actor step against the freshly updated critics.
        let w = self.head_weights();
        let mut actor_loss = 0.0;
        for (gi, g) in self.groups.iter_mut().enumerate() {
            let ad = g.kind.act_dim();
            let awidth = g.actor.input_dim();
            let mut ad_in = Vec::with_capacity(bsz * awidth);
            for (b, e) in batch.iter().enumerate() {
                Self::actor_input(&e.obs, &z[b], chosen[gi][b], &mut ad_in);
            }
            let ax = Array2::from_shape_vec((bsz, awidth), ad_in).map_err(|e| Error::dim(e.to_string()))?;
            let (act, acache) = g.actor.forward(&ax)?;
            let width = g.critics[0].input_dim();
            let mut xd = Vec::with_capacity(bsz * width);
            let mut offsets = Vec::with_capacity(bsz);
            for (b, e) in batch.iter().enumerate() {
                let a = chosen[gi][b];
                let off = self.layout.action_offset(a);
                let mut joint = e.action.clone();
                joint[off..off + ad].copy_from_slice(act.row(b).as_slice().expect("row-major actions"));
                Self::critic_row(&e.obs, &pooled[b], &joint, a, &mut xd);
                offsets.push(gdim + 3 * emb + off);
            }
            let x = Array2::from_shape_vec((bsz, width), xd).map_err(|e| Error::dim(e.to_string()))?;
            let mut d_act = Array2::zeros((bsz, ad));
            let mut value = 0.0;
            for (k, &wk) in w.iter().enumerate() {
                if wk == 0.0 {
                    continue;
                }
                let (q, cache) = g.critics[k].forward(&x)?;
                value += wk * q.sum() / bsz as f64;
                let up = Array2::from_elem((bsz, 1), -wk / bsz as f64);
                let (_, dx) = g.critics[k].backward(&cache, &up)?;
                for b in 0..bsz {
                    for d in 0..ad {
                        d_act[[b, d]] += dx[[b, offsets[b] + d]];
                    }
                }
            }
            actor_loss -= value / n_groups;
            let (grads, _) = g.actor.backward(&acache, &d_act)?;
            let params = g.actor.params_mut();
            g.actor_opt.step(params, &grads.params)?;
        }

        let tau = self.hp.tau;
        for g in &mut self.groups {
            soft_update_mlp(&g.actor, &mut g.actor_target, tau)?;
            for (c, t) in g.critics.iter().zip(g.critic_targets.iter_mut()) {
                soft_update_mlp(c, t, tau)?;
            }
        }

        Ok(UpdateStats {
            critic_loss: head_losses.iter().sum::<f64>() / k_heads as f64,
            head_losses,
            actor_loss: Some(actor_loss),
        })
    }

    pub fn group_of(&self, agent: usize) -> usize {
        self.group_of[agent]
    }

    /// Reattach training state after loading from a checkpoint.
    pub fn resume(&mut self, run_seed: u64) {
        self.replay = Some(ReplayBuffer::new(self.hp.buffer_capacity));
        self.explore_rng = Some(seed::rng(run_seed, &[stream::EXPLORATION]));
        self.replay_rng = Some(seed::rng(run_seed, &[stream::REPLAY]));
    }
}

impl Policy for Maddpg {
    fn act(&mut self, obs: &Observation, explore: bool) -> Result<Vec<Vec<f64>>> {
        if !explore {
            return self.greedy(obs);
        }
        if self.steps < self.hp.warmup {
            self.normalizer.update(&obs.features);
            let dims = self.layout.act_dims();
            let rng = self.explore_rng.as_mut().expect("exploration stream present while training");
            return Ok(dims.into_iter().map(|d| (0..d).map(|_| rng.gen::<f64>()).collect()).collect());
        }
        let mut acts = self.greedy(obs)?;
        let sigma = self.noise_scale();
        let rng = self.explore_rng.as_mut().expect("exploration stream present while training");
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::domain(e.to_string()))?;
            for a in acts.iter_mut().flatten() {
                *a = (*a + normal.sample(rng)).clamp(0.0, 1.0);
            }
        }
        Ok(acts)
    }
}

impl Learner for Maddpg {
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
    use ndarray::array;

    #[test]
    fn critic_loss_unit_error_is_one() {
        let mut rng = seed::rng(1, &[0]);
        let critics: Vec<Mlp> = (0..5).map(|_| Mlp::init(&[3, 4, 1], Act::Relu, Act::Identity, &mut rng)).collect();
        let x = array![[0.1, 0.2, 0.3], [0.5, -0.4, 1.0]];
        let mut y = Array2::zeros((2, 5));
        for k in 0..5 {
            let q = critics[k].predict(&x).unwrap();
            for b in 0..2 {
                y[[b, k]] = q[[b, 0]] + if b == 0 { 1.0 } else { -1.0 };
            }
        }
        let (loss, heads, _, _) = critic_loss(&critics, &x, &y).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
        assert!(heads.iter().all(|h| (h - 1.0).abs() < 1e-12));
        assert!(matches!(
            critic_loss(&critics, &Array2::zeros((0, 3)), &Array2::zeros((0, 5))),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn zero_td_gives_zero_gradients() {
        let mut rng = seed::rng(2, &[0]);
        let critics: Vec<Mlp> = (0..2).map(|_| Mlp::init(&[2, 3, 1], Act::Relu, Act::Identity, &mut rng)).collect();
        let x = array![[0.3, 0.7]];
        let mut y = Array2::zeros((1, 2));
        for k in 0..2 {
            y[[0, k]] = critics[k].predict(&x).unwrap()[[0, 0]];
        }
        let (loss, _, grads, _) = critic_loss(&critics, &x, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|g| g.norm_sq() == 0.0));
    }
}
