//! The decision process: agents observe the network, pick routing and
//! allocation actions, and receive a five-component team reward.
//!
//! Agents are ordered vehicles, edges, clouds, which is also the node order
//! of the network graph. Every action component is a number in `[0, 1]`.
//!
//! Vehicle actions: `[edge logit, cloud logit, edge→cloud logit, offload
//! fraction, premium QoS request]`. Edge actions: `[CPU share, forward
//! threshold, spare-bandwidth share]`. Cloud actions: `[CPU share, refresh
//! pricing, hosting bid]`.

mod obs;
mod reward;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costs::{self, check_qos_constraints, EnergyInputs, PricingMode, QosMetrics};
use crate::error::{Error, Result};
use crate::netlink::{
    self, check_channel_constraints, LatencyComponents, LinkParams, MigrationDecision, QueueState, Route, ServerId,
};
use crate::scenario::{sample_task, ExperimentConfig, VtStatus, VtTaskProfile, World};
use crate::seed::{self, stream};
use crate::stackelberg::{self, CloudSpec, EdgeSpec, GameSpec, Leader, StackelbergOutcome, VehicleSpec};

pub use obs::{global_dim, Observation, CLOUD_OBS, EDGE_OBS, VEHICLE_OBS};
pub use reward::{scalarize, FeasibilityReport, RewardVector, OBJECTIVES};

pub const VEHICLE_ACT: usize = 5;
pub const EDGE_ACT: usize = 3;
pub const CLOUD_ACT: usize = 3;
/// Share of a task that moves with the twin whenever it is offloaded.
pub const MIN_OFFLOAD: f64 = 0.1;
/// Slot length in seconds.
pub const SLOT_S: f64 = 1.0;
const RELIABILITY_RATE: f64 = 0.1;
const QUEUE_HEADROOM: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentKind {
    Vehicle,
    Edge,
    Cloud,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [AgentKind::Vehicle, AgentKind::Edge, AgentKind::Cloud];

    pub fn obs_dim(self) -> usize {
        match self {
            AgentKind::Vehicle => VEHICLE_OBS,
            AgentKind::Edge => EDGE_OBS,
            AgentKind::Cloud => CLOUD_OBS,
        }
    }

    pub fn act_dim(self) -> usize {
        match self {
            AgentKind::Vehicle => VEHICLE_ACT,
            AgentKind::Edge => EDGE_ACT,
            AgentKind::Cloud => CLOUD_ACT,
        }
    }

    pub fn index(self) -> usize {
        match self {
            AgentKind::Vehicle => 0,
            AgentKind::Edge => 1,
            AgentKind::Cloud => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentLayout {
    pub vehicles: usize,
    pub edges: usize,
    pub clouds: usize,
}

impl AgentLayout {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        AgentLayout { vehicles: cfg.counts.vehicles, edges: cfg.counts.edges, clouds: cfg.counts.clouds }
    }

    pub fn count(&self) -> usize {
        self.vehicles + self.edges + self.clouds
    }

    pub fn kind(&self, agent: usize) -> AgentKind {
        if agent < self.vehicles {
            AgentKind::Vehicle
        } else if agent < self.vehicles + self.edges {
            AgentKind::Edge
        } else {
            AgentKind::Cloud
        }
    }

    /// Agents of one tier, as a contiguous index range.
    pub fn tier(&self, kind: AgentKind) -> std::ops::Range<usize> {
        match kind {
            AgentKind::Vehicle => 0..self.vehicles,
            AgentKind::Edge => self.vehicles..self.vehicles + self.edges,
            AgentKind::Cloud => self.vehicles + self.edges..self.count(),
        }
    }

    pub fn act_dims(&self) -> Vec<usize> {
        (0..self.count()).map(|a| self.kind(a).act_dim()).collect()
    }

    pub fn joint_action_dim(&self) -> usize {
        self.vehicles * VEHICLE_ACT + self.edges * EDGE_ACT + self.clouds * CLOUD_ACT
    }

    /// Offset of an agent's action inside the flattened joint action.
    pub fn action_offset(&self, agent: usize) -> usize {
        match self.kind(agent) {
            AgentKind::Vehicle => agent * VEHICLE_ACT,
            AgentKind::Edge => self.vehicles * VEHICLE_ACT + (agent - self.vehicles) * EDGE_ACT,
            AgentKind::Cloud => {
                self.vehicles * VEHICLE_ACT + self.edges * EDGE_ACT + (agent - self.vehicles - self.edges) * CLOUD_ACT
            }
        }
    }

    /// All-zero actions: no offloading, minimal allocations.
    pub fn idle_actions(&self) -> Vec<Vec<f64>> {
        self.act_dims().into_iter().map(|d| vec![0.0; d]).collect()
    }
}

/// What one step did, in raw units plus the reward derived from it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub tasks: usize,
    pub to_edge: usize,
    pub to_cloud: usize,
    pub edge_to_cloud: usize,
    pub latency_mean: f64,
    pub energy_mean: f64,
    pub cost_mean: f64,
    pub ux_mean: f64,
    pub quality_mean: f64,
    pub reliability_mean: f64,
    pub utility: f64,
    /// Mean energy per task spent by vehicles, edges, and clouds.
    pub energy_by_tier: [f64; 3],
    pub migrations: usize,
    pub migration_successes: usize,
    /// Penalties subtracted from the UX reward and added to the latency,
    /// energy, and cost rewards.
    pub penalty_ux: f64,
    pub penalty_lat: f64,
    pub penalty_en: f64,
    pub penalty_cost: f64,
    pub feasibility: FeasibilityReport,
    pub channel_violations: usize,
    /// Vehicle actions with more than one routing flag raised before masking.
    pub masked_multi_flags: usize,
    pub overload: bool,
    pub game_resolved: bool,
    pub reward: RewardVector,
    pub scalar: f64,
}

/// Threshold normalization; infinite or nonpositive thresholds leave the value as is.
pub fn normalize_by(x: f64, threshold: f64) -> f64 {
    if threshold.is_finite() && threshold > 0.0 {
        x / threshold
    } else {
        x
    }
}

/// Reward components from the logged metrics.
pub fn reward_from_metrics(m: &StepMetrics, cfg: &ExperimentConfig) -> RewardVector {
    let t = &cfg.thresholds;
    RewardVector {
        r_ux: normalize_by(m.ux_mean, t.ux_min) - m.penalty_ux,
        r_util: m.utility / cfg.objective.utility_scale,
        r_lat: normalize_by(m.latency_mean, t.latency_s) + m.penalty_lat,
        r_en: normalize_by(m.energy_mean, t.energy_j) + m.penalty_en,
        r_cost: normalize_by(m.cost_mean, t.cost) + m.penalty_cost,
    }
}

pub struct StepOutcome {
    pub obs: Observation,
    pub reward: RewardVector,
    pub done: bool,
    pub metrics: StepMetrics,
    /// Routing actually executed, indexed by vehicle.
    pub decisions: Vec<MigrationDecision>,
}

#[derive(Debug, Clone, Copy, Default)]
struct NodeRecord {
    ux: f64,
    latency: f64,
    energy: f64,
    cost: f64,
    served: usize,
}

impl NodeRecord {
    fn absorb(&mut self, ux: f64, latency: f64, energy: f64, cost: f64) {
        self.served += 1;
        self.ux += ux;
        self.latency += latency;
        self.energy += energy;
        self.cost += cost;
    }

    fn mean(mut self) -> Self {
        if self.served > 0 {
            let n = self.served as f64;
            self.ux /= n;
            self.latency /= n;
            self.energy /= n;
            self.cost /= n;
        }
        self
    }
}

/// One task being served this slot.
#[derive(Debug, Clone, Copy)]
struct Job {
    vehicle: usize,
    route: Route,
    /// Offloaded portion of the task.
    part: VtTaskProfile,
    local_cycles: f64,
    class: u32,
    premium: bool,
}

pub struct Env {
    cfg: ExperimentConfig,
    layout: AgentLayout,
    world: World,
    step: usize,
    limit: usize,
    task_rng: ChaCha8Rng,
    spec: GameSpec,
    outcome: StackelbergOutcome,
    edge_reliability: Vec<f64>,
    cloud_reliability: Vec<f64>,
    cloud_arrivals: Vec<f64>,
    /// Task arrivals handled locally, at edges, and at clouds (moving averages).
    traffic: [f64; 3],
    vehicle_last: Vec<NodeRecord>,
    edge_last: Vec<NodeRecord>,
    cloud_last: Vec<NodeRecord>,
    edge_bw_free: Vec<f64>,
    cloud_load: Vec<f64>,
    perf: [f64; 4],
}

impl Env {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let mut env = Env {
            cfg: cfg.clone(),
            layout: AgentLayout::from_config(cfg),
            world: World::generate(cfg, &mut seed::rng(cfg.seed, &[stream::WORLD])),
            step: 0,
            limit: cfg.learner.steps_per_episode,
            task_rng: seed::rng(cfg.seed, &[stream::TASKS]),
            spec: empty_spec(cfg),
            outcome: stackelberg::backward_induction(&empty_spec(cfg))?,
            edge_reliability: Vec::new(),
            cloud_reliability: Vec::new(),
            cloud_arrivals: Vec::new(),
            traffic: [0.0; 3],
            vehicle_last: Vec::new(),
            edge_last: Vec::new(),
            cloud_last: Vec::new(),
            edge_bw_free: Vec::new(),
            cloud_load: Vec::new(),
            perf: [0.0; 4],
        };
        env.reset(cfg.seed)?;
        Ok(env)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn layout(&self) -> AgentLayout {
        self.layout
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn steps_per_episode(&self) -> usize {
        self.limit
    }

    pub fn game(&self) -> (&GameSpec, &StackelbergOutcome) {
        (&self.spec, &self.outcome)
    }

    /// Start a fresh episode whose world and tasks derive from `seed` only.
    pub fn reset(&mut self, seed_value: u64) -> Result<Observation> {
        let cfg = &self.cfg;
        self.world = World::generate(cfg, &mut seed::rng(seed_value, &[stream::WORLD]));
        self.task_rng = seed::rng(seed_value, &[stream::TASKS]);
        self.step = 0;
        let (nv, ne, nc) = (self.layout.vehicles, self.layout.edges, self.layout.clouds);
        self.edge_reliability = vec![1.0; ne];
        self.cloud_reliability = vec![1.0; nc];
        self.cloud_arrivals = vec![0.0; nc];
        self.traffic = [0.0; 3];
        self.vehicle_last = vec![NodeRecord::default(); nv];
        self.edge_last = vec![NodeRecord::default(); ne];
        self.cloud_last = vec![NodeRecord::default(); nc];
        self.edge_bw_free = vec![1.0; ne];
        self.cloud_load = vec![0.0; nc];
        self.perf = [0.0; 4];
        self.draw_tasks();
        self.resolve_game()?;
        Ok(self.observe())
    }

    fn draw_tasks(&mut self) {
        let p = self.cfg.task.arrival_prob;
        for v in 0..self.world.vehicles.len() {
            let arrives = self.task_rng.gen_bool(p);
            let task = sample_task(&mut self.task_rng, &self.cfg);
            self.world.vehicles[v].pending_task = arrives.then_some(task);
        }
    }

    fn market_spec(&self) -> GameSpec {
        let cfg = &self.cfg;
        let nc = self.world.clouds.len();
        let vehicles = self
            .world
            .vehicles
            .iter()
            .map(|v| VehicleSpec {
                satisfaction: v.satisfaction,
                leader: match v.vt_status {
                    VtStatus::HostedEdge(j) => Some(Leader::Edge(j)),
                    VtStatus::HostedCloud(i) => Some(v.forwarded_by.map_or(Leader::Cloud(i), Leader::Edge)),
                    _ => None,
                },
            })
            .collect();
        let edges = (0..self.world.edges.len())
            .map(|j| {
                let mut per_cloud = vec![0usize; nc];
                for v in &self.world.vehicles {
                    if let (VtStatus::HostedCloud(i), Some(src)) = (v.vt_status, v.forwarded_by) {
                        if src == j {
                            per_cloud[i] += 1;
                        }
                    }
                }
                let forwarded: usize = per_cloud.iter().sum();
                let cloud = if forwarded == 0 {
                    j % nc.max(1)
                } else {
                    // Most-used cloud, lowest id on ties.
                    let max = *per_cloud.iter().max().unwrap();
                    per_cloud.iter().position(|c| *c == max).unwrap()
                };
                EdgeSpec {
                    cost: cfg.pricing.edge_cost,
                    capacity: self.world.edges[j].capacity_units,
                    satisfaction: cfg.pricing.edge_satisfaction * forwarded as f64,
                    cloud,
                }
            })
            .collect();
        let clouds = self
            .world
            .clouds
            .iter()
            .map(|c| CloudSpec { cost: cfg.pricing.cloud_cost, capacity: c.capacity_units })
            .collect();
        GameSpec {
            vehicles,
            edges,
            clouds,
            min_service: cfg.pricing.min_service,
            price_lo: cfg.pricing.price_bounds.lo(),
            price_hi: cfg.pricing.price_bounds.hi(),
            grid_points: cfg.pricing.grid_points,
        }
    }

    fn resolve_game(&mut self) -> Result<()> {
        self.spec = self.market_spec();
        self.outcome = stackelberg::backward_induction_rationed(&self.spec)?;
        Ok(())
    }

    fn check_actions(&self, actions: &[Vec<f64>]) -> Result<()> {
        if actions.len() != self.layout.count() {
            return Err(Error::dim(format!("expected {} agent actions, got {}", self.layout.count(), actions.len())));
        }
        for (a, act) in actions.iter().enumerate() {
            let want = self.layout.kind(a).act_dim();
            if act.len() != want {
                return Err(Error::dim(format!("agent {a} action has {} components, expected {want}", act.len())));
            }
        }
        Ok(())
    }

    fn edge_action(&self, actions: &[Vec<f64>], j: usize) -> [f64; 3] {
        let a = &actions[self.layout.vehicles + j];
        [clip(a[0]), clip(a[1]), clip(a[2])]
    }

    fn cloud_action(&self, actions: &[Vec<f64>], i: usize) -> [f64; 3] {
        let a = &actions[self.layout.vehicles + self.layout.edges + i];
        [clip(a[0]), clip(a[1]), clip(a[2])]
    }

    fn uplink(&self, v: usize, to: ServerId, bandwidth: f64) -> Result<f64> {
        let c = &self.cfg.channel;
        let veh = &self.world.vehicles[v];
        let distance = match to {
            ServerId::Edge(j) => self.world.radio_distance(v, j),
            ServerId::Cloud(_) => c.vehicle_cloud_distance_m,
        };
        netlink::shannon_rate(&LinkParams {
            bandwidth_hz: bandwidth,
            tx_power_w: veh.tx_power_w,
            channel_gain: c.channel_gain,
            distance_m: distance,
            pathloss_exp: c.pathloss_exp,
            noise_psd: c.noise_psd,
        })
    }

    fn backhaul(&self, j: usize, bandwidth: f64) -> Result<f64> {
        let c = &self.cfg.channel;
        netlink::shannon_rate(&LinkParams {
            bandwidth_hz: bandwidth,
            tx_power_w: self.world.edges[j].tx_power_w,
            channel_gain: c.backhaul_gain,
            distance_m: c.edge_cloud_distance_m,
            pathloss_exp: c.backhaul_pathloss_exp,
            noise_psd: c.noise_psd,
        })
    }

    /// Turn raw vehicle actions into at most one route each.
    ///
    /// Raised flags (component > 0.5) are tried from the highest value down;
    /// the first one with coverage and bandwidth room wins, otherwise the
    /// task stays local.
    fn route_tasks(&self, actions: &[Vec<f64>], masked_multi: &mut usize) -> Vec<Option<Job>> {
        let (ne, nc) = (self.world.edges.len(), self.world.clouds.len());
        let mut edge_bw = vec![0.0; ne];
        let mut cloud_bw = vec![0.0; nc];
        let mut edge_cycles = vec![0.0; ne];
        let mut cloud_order: Vec<usize> = (0..nc).collect();
        let bids: Vec<f64> = (0..nc).map(|i| self.cloud_action(actions, i)[2]).collect();
        cloud_order.sort_by(|a, b| bids[*b].total_cmp(&bids[*a]).then(a.cmp(b)));

        let mut jobs = vec![None; self.world.vehicles.len()];
        for (v, veh) in self.world.vehicles.iter().enumerate() {
            let Some(task) = veh.pending_task else { continue };
            let a = &actions[v];
            let mut flags: Vec<(f64, usize)> = (0..3).map(|k| (clip(a[k]), k)).filter(|(x, _)| *x > 0.5).collect();
            if flags.len() > 1 {
                *masked_multi += 1;
            }
            flags.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
            let frac = MIN_OFFLOAD + (1.0 - MIN_OFFLOAD) * clip(a[3]);
            let part = task.portion(frac);
            let need = task.bandwidth_req_hz;
            let nearest = self.world.association[v];
            let edge_room = |j: usize, used: &[f64]| used[j] + need <= self.world.edges[j].bandwidth_hz;

            let mut chosen = None;
            for (_, kind) in flags {
                chosen = match kind {
                    0 => nearest.filter(|j| edge_room(*j, &edge_bw)).map(|j| {
                        let threshold = self.edge_action(actions, j)[1];
                        let load = (edge_cycles[j] + part.total_cycles()) / (self.world.edges[j].cpu_hz * SLOT_S);
                        if load > threshold && nc > 0 {
                            Route::EdgeToCloud { edge: j, cloud: cloud_order[0] }
                        } else {
                            Route::ToEdge { edge: j }
                        }
                    }),
                    1 => cloud_order
                        .iter()
                        .copied()
                        .find(|i| cloud_bw[*i] + need <= self.world.clouds[*i].bandwidth_hz)
                        .map(|i| Route::ToCloud { cloud: i }),
                    _ => nearest
                        .filter(|j| edge_room(*j, &edge_bw) && nc > 0)
                        .map(|j| Route::EdgeToCloud { edge: j, cloud: cloud_order[0] }),
                };
                if chosen.is_some() {
                    break;
                }
            }
            let Some(route) = chosen else { continue };
            match route.access_server() {
                ServerId::Edge(j) => edge_bw[j] += need,
                ServerId::Cloud(i) => cloud_bw[i] += need,
            }
            if let Route::ToEdge { edge } | Route::EdgeToCloud { edge, .. } = route {
                edge_cycles[edge] += part.total_cycles();
            }
            let premium = clip(a[4]) > 0.5;
            jobs[v] = Some(Job {
                vehicle: v,
                route,
                part,
                local_cycles: task.total_cycles() - part.total_cycles(),
                class: if premium { 1 } else { task.priority_class },
                premium,
            });
        }
        jobs
    }

    /// Advance one slot.
    pub fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepOutcome> {
        if self.step >= self.limit {
            return Err(Error::EpisodeOver { step: self.step, limit: self.limit });
        }
        self.check_actions(actions)?;
        let cfg = self.cfg.clone();
        let t = &cfg.thresholds;
        let (nv, ne, nc) = (self.world.vehicles.len(), self.world.edges.len(), self.world.clouds.len());
        let mut m = StepMetrics { step: self.step, ..StepMetrics::default() };

        let jobs = self.route_tasks(actions, &mut m.masked_multi_flags);
        let decisions: Vec<MigrationDecision> = jobs
            .iter()
            .map(|j| j.map_or(MigrationDecision::none(), |j| MigrationDecision::from_route(j.route)))
            .collect();

        // Resource shares.
        let mut edge_exec = vec![0usize; ne];
        let mut edge_access = vec![0usize; ne];
        let mut edge_access_bw = vec![0.0; ne];
        let mut edge_forward = vec![0usize; ne];
        let mut cloud_access = vec![0usize; nc];
        let mut cloud_access_bw = vec![0.0; nc];
        let mut cloud_jobs: Vec<Vec<usize>> = vec![Vec::new(); nc];
        let mut edge_cycles = vec![0.0; ne];
        let mut cloud_cycles = vec![0.0; nc];
        for job in jobs.iter().flatten() {
            let need = self.world.vehicles[job.vehicle].pending_task.map_or(0.0, |t| t.bandwidth_req_hz);
            match job.route {
                Route::ToEdge { edge } => {
                    edge_exec[edge] += 1;
                    edge_access[edge] += 1;
                    edge_access_bw[edge] += need;
                    edge_cycles[edge] += job.part.total_cycles();
                    m.to_edge += 1;
                }
                Route::ToCloud { cloud } => {
                    cloud_access[cloud] += 1;
                    cloud_access_bw[cloud] += need;
                    cloud_jobs[cloud].push(job.vehicle);
                    cloud_cycles[cloud] += job.part.total_cycles();
                    m.to_cloud += 1;
                }
                Route::EdgeToCloud { edge, cloud } => {
                    edge_exec[edge] += 1;
                    edge_access[edge] += 1;
                    edge_access_bw[edge] += need;
                    edge_forward[edge] += 1;
                    cloud_jobs[cloud].push(job.vehicle);
                    edge_cycles[edge] += job.part.total_cycles();
                    cloud_cycles[cloud] += job.part.total_cycles();
                    m.edge_to_cloud += 1;
                }
            }
        }
        let edge_cpu: Vec<f64> = (0..ne)
            .map(|j| {
                let share = 0.1 + 0.9 * self.edge_action(actions, j)[0];
                self.world.edges[j].cpu_hz * share / edge_exec[j].max(1) as f64
            })
            .collect();
        let server_cpu: Vec<f64> = (0..nc)
            .map(|i| {
                let c = &self.world.clouds[i];
                let share = 0.1 + 0.9 * self.cloud_action(actions, i)[0];
                c.cpu_hz / c.server_count as f64 * share
            })
            .collect();

        // Cloud queues: premium and high-priority tasks first, then by vehicle id.
        let alpha = 2.0 / (cfg.objective.traffic_window as f64 + 1.0);
        let mut queue_delay = vec![0.0; nv];
        for i in 0..nc {
            let c = &self.world.clouds[i];
            let mut order = cloud_jobs[i].clone();
            order.sort_by_key(|v| (jobs[*v].unwrap().class, *v));
            self.cloud_arrivals[i] = (1.0 - alpha) * self.cloud_arrivals[i] + alpha * order.len() as f64 / SLOT_S;
            if order.is_empty() {
                continue;
            }
            let mean_cycles =
                order.iter().map(|v| jobs[*v].unwrap().part.total_cycles()).sum::<f64>() / order.len() as f64;
            let mu = if mean_cycles > 0.0 { server_cpu[i] / mean_cycles } else { f64::INFINITY };
            let s = c.server_count;
            let mut lambda = self.cloud_arrivals[i];
            if mu.is_finite() && lambda >= s as f64 * mu {
                lambda = QUEUE_HEADROOM * s as f64 * mu;
                m.overload = true;
            }
            for (k, v) in order.iter().enumerate() {
                let waiting = (k + 1).saturating_sub(s);
                if waiting == 0 || !mu.is_finite() {
                    continue;
                }
                queue_delay[*v] = netlink::queue_delay(&QueueState {
                    arrival_rate: lambda,
                    service_rate: mu,
                    servers: s,
                    queue_length: waiting,
                    priority_weight: jobs[*v].unwrap().class as f64,
                })?;
            }
        }

        // Per-task physics.
        let mut new_vehicle = vec![NodeRecord::default(); nv];
        let mut new_edge = vec![NodeRecord::default(); ne];
        let mut new_cloud = vec![NodeRecord::default(); nc];
        let mut tiers = [0.0; 3];
        let (mut sum_l, mut sum_e, mut sum_c, mut sum_ux, mut sum_q, mut sum_r) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut pen_ux, mut pen_lat, mut pen_en, mut pen_cost) = (0.0, 0.0, 0.0, 0.0);
        let mut arrivals = [0.0; 3];
        let mut market_changed = false;

        for v in 0..nv {
            let Some(task) = self.world.vehicles[v].pending_task else { continue };
            m.tasks += 1;
            m.feasibility.tally(1, true);
            m.feasibility.tally(2, decisions[v].flag_count() <= 1);
            let veh = self.world.vehicles[v].clone();
            let mut host_of = None;
            let (latency, energy, cost, reliability, active) = match jobs[v] {
                None => {
                    arrivals[0] += 1.0;
                    let l = netlink::exec_latency(&task, veh.local_cpu_hz)?;
                    (l, 0.0, 0.0, 1.0, false)
                }
                Some(job) => {
                    let mut comps = LatencyComponents::default();
                    let access = job.route.access_server();
                    let bw = match access {
                        ServerId::Edge(j) => {
                            let spare = (self.world.edges[j].bandwidth_hz - edge_access_bw[j]).max(0.0);
                            task.bandwidth_req_hz + self.edge_action(actions, j)[2] * spare / edge_access[j] as f64
                        }
                        ServerId::Cloud(i) => {
                            let spare = (self.world.clouds[i].bandwidth_hz - cloud_access_bw[i]).max(0.0);
                            task.bandwidth_req_hz + spare / cloud_access[i] as f64
                        }
                    };
                    let up_rate = self.uplink(v, access, bw)?;
                    comps.transmission = netlink::tx_latency(&job.part, up_rate)?;
                    let mut inputs = EnergyInputs {
                        vehicle_tx_power_w: veh.tx_power_w,
                        uplink_rate: up_rate,
                        edge_tx_power_w: 0.0,
                        backhaul_rate: 0.0,
                        edge_capacitance: 0.0,
                        edge_cpu_hz: 0.0,
                        cloud_capacitance: 0.0,
                        cloud_cpu_hz: 0.0,
                        times_cycles: cfg.energy.energy_times_cycles,
                    };
                    let price;
                    match job.route {
                        Route::ToEdge { edge } => {
                            comps.execution = netlink::exec_latency(&job.part, edge_cpu[edge])?;
                            inputs.edge_capacitance = self.world.edges[edge].switch_capacitance;
                            inputs.edge_cpu_hz = edge_cpu[edge];
                            price = self.outcome.edge_price[edge];
                            arrivals[1] += 1.0;
                        }
                        Route::ToCloud { cloud } => {
                            comps.execution = netlink::exec_latency(&job.part, server_cpu[cloud])?;
                            comps.queueing = queue_delay[v];
                            inputs.cloud_capacitance = self.world.clouds[cloud].switch_capacitance;
                            inputs.cloud_cpu_hz = server_cpu[cloud];
                            price = self.outcome.cloud_price[cloud];
                            arrivals[2] += 1.0;
                        }
                        Route::EdgeToCloud { edge, cloud } => {
                            let bh = self.cfg.channel.backhaul_bandwidth_hz
                                * (0.1 + 0.9 * self.edge_action(actions, edge)[2])
                                / edge_forward[edge] as f64;
                            let bh_rate = self.backhaul(edge, bh)?;
                            comps.execution = netlink::exec_latency(&job.part, edge_cpu[edge])?;
                            comps.migration = netlink::tx_latency(&job.part, bh_rate)?;
                            comps.queueing = queue_delay[v];
                            comps.reinstantiation = netlink::reinstantiation_delay(&job.part, server_cpu[cloud])?;
                            inputs.edge_tx_power_w = self.world.edges[edge].tx_power_w;
                            inputs.backhaul_rate = bh_rate;
                            inputs.edge_capacitance = self.world.edges[edge].switch_capacitance;
                            inputs.edge_cpu_hz = edge_cpu[edge];
                            inputs.cloud_capacitance = self.world.clouds[cloud].switch_capacitance;
                            inputs.cloud_cpu_hz = server_cpu[cloud];
                            price = self.outcome.edge_price[edge];
                            arrivals[2] += 1.0;
                        }
                    }
                    let route_latency = netlink::total_latency(&decisions[v], &comps)?;
                    let local_latency = job.local_cycles / veh.local_cpu_hz;
                    let latency = route_latency.max(local_latency);
                    let e = costs::energy(Some(job.route), &job.part, &inputs)?;
                    tiers[0] += e.upload_j;
                    tiers[1] += e.exec_src + e.migrate;
                    tiers[2] += e.exec_dst;
                    let unit_price = match cfg.pricing.mode {
                        PricingMode::PerMb => price,
                        PricingMode::PerCycle => price * cfg.pricing.cycle_price_scale,
                    };
                    let surcharge = if job.premium { 1.0 + cfg.pricing.qos_premium } else { 1.0 };
                    let cost = costs::migration_cost(&job.part, unit_price * surcharge, cfg.pricing.mode)?;

                    let host = job.route.host();
                    let reliability = match host {
                        ServerId::Edge(j) => self.edge_reliability[j],
                        ServerId::Cloud(i) => self.cloud_reliability[i],
                    };
                    let previous = match veh.vt_status {
                        VtStatus::HostedEdge(j) => Some(ServerId::Edge(j)),
                        VtStatus::HostedCloud(i) => Some(ServerId::Cloud(i)),
                        _ => None,
                    };
                    if previous != Some(host) {
                        m.migrations += 1;
                        let ok = latency <= t.latency_s;
                        m.migration_successes += ok as usize;
                        let r = match host {
                            ServerId::Edge(j) => &mut self.edge_reliability[j],
                            ServerId::Cloud(i) => &mut self.cloud_reliability[i],
                        };
                        *r = (1.0 - RELIABILITY_RATE) * *r + RELIABILITY_RATE * if ok { 1.0 } else { 0.0 };
                    }
                    host_of = Some(host);
                    let forwarded_by = match job.route {
                        Route::EdgeToCloud { edge, .. } => Some(edge),
                        _ => None,
                    };
                    let status = match host {
                        ServerId::Edge(j) => VtStatus::HostedEdge(j),
                        ServerId::Cloud(i) => VtStatus::HostedCloud(i),
                    };
                    let vm = &mut self.world.vehicles[v];
                    if vm.vt_status != status || vm.forwarded_by != forwarded_by {
                        market_changed = true;
                    }
                    vm.vt_status = status;
                    vm.forwarded_by = forwarded_by;
                    (latency, e.total, cost, reliability, true)
                }
            };
            if !active {
                let vm = &mut self.world.vehicles[v];
                if vm.vt_status != VtStatus::Local {
                    market_changed = true;
                }
                vm.vt_status = VtStatus::Local;
                vm.forwarded_by = None;
            }

            let met = [latency <= t.latency_s, energy <= t.energy_j, cost <= t.cost];
            let quality = met.iter().filter(|x| **x).count() as f64 / 3.0;
            let rating = costs::ux_rating(latency, quality, reliability, &cfg.ux)?;
            let ux = costs::vehicle_ux(&[rating], active)?;
            let qos = QosMetrics { latency, energy, cost, ux, reliability, quality };
            let violated = check_qos_constraints(&qos, t);
            for (c, name) in
                [(5, "latency"), (6, "energy"), (7, "cost"), (8, "ux"), (9, "reliability"), (10, "quality")]
            {
                m.feasibility.tally(c, !violated.contains(&name));
            }
            match host_of {
                Some(ServerId::Edge(j)) => new_edge[j].absorb(ux, latency, energy, cost),
                Some(ServerId::Cloud(i)) => new_cloud[i].absorb(ux, latency, energy, cost),
                None => {}
            }
            let over = |x: f64, lim: f64| if x > lim { normalize_by(x - lim, lim) } else { 0.0 };
            let under = |x: f64, lim: f64| if x < lim { normalize_by(lim - x, lim) } else { 0.0 };
            pen_lat += over(latency, t.latency_s);
            pen_en += over(energy, t.energy_j);
            pen_cost += over(cost, t.cost);
            pen_ux += under(ux, t.ux_min) + under(reliability, t.reliability_min) + under(quality, t.quality_min);

            sum_l += latency;
            sum_e += energy;
            sum_c += cost;
            sum_ux += ux;
            sum_q += quality;
            sum_r += reliability;
            new_vehicle[v] = NodeRecord { ux, latency, energy, cost, served: 1 };
        }

        // Compute capacity per server this slot.
        for j in 0..ne {
            let cap = self.world.edges[j].cpu_hz * SLOT_S;
            m.feasibility.tally(3, edge_cycles[j] <= cap);
            if edge_cycles[j] > cap {
                pen_lat += (edge_cycles[j] - cap) / cap;
                m.overload = true;
            }
            self.world.edges[j].load_ratio = (edge_cycles[j] / cap).min(1.0);
            self.edge_bw_free[j] = 1.0 - (edge_access_bw[j] / self.world.edges[j].bandwidth_hz).min(1.0);
        }
        for i in 0..nc {
            let cap = self.world.clouds[i].cpu_hz * SLOT_S;
            m.feasibility.tally(3, cloud_cycles[i] <= cap);
            if cloud_cycles[i] > cap {
                pen_lat += (cloud_cycles[i] - cap) / cap;
                m.overload = true;
            }
            self.cloud_load[i] = (cloud_cycles[i] / cap).min(1.0);
        }
        let channel = check_channel_constraints(&self.world, &decisions);
        m.channel_violations = channel.len();
        let bw_bad: Vec<ServerId> = channel
            .iter()
            .filter_map(|c| match c {
                netlink::ChannelViolation::Bandwidth { server, .. } => Some(*server),
                _ => None,
            })
            .collect();
        for j in 0..ne {
            m.feasibility.tally(4, !bw_bad.contains(&ServerId::Edge(j)));
        }
        for i in 0..nc {
            m.feasibility.tally(4, !bw_bad.contains(&ServerId::Cloud(i)));
        }

        let n = m.tasks.max(1) as f64;
        if m.tasks > 0 {
            m.latency_mean = sum_l / n;
            m.energy_mean = sum_e / n;
            m.cost_mean = sum_c / n;
            m.ux_mean = sum_ux / n;
            m.quality_mean = sum_q / n;
            m.reliability_mean = sum_r / n;
            m.energy_by_tier = [tiers[0] / n, tiers[1] / n, tiers[2] / n];
        }
        let k = cfg.objective.penalty_coeff;
        m.penalty_ux = k * pen_ux / n;
        m.penalty_lat = k * pen_lat / n;
        m.penalty_en = k * pen_en / n;
        m.penalty_cost = k * pen_cost / n;

        for (t, a) in self.traffic.iter_mut().zip(arrivals) {
            *t = (1.0 - alpha) * *t + alpha * a;
        }

        // Mobility, then coverage exits.
        self.world.step_mobility(SLOT_S);
        for v in 0..nv {
            if let VtStatus::HostedEdge(j) = self.world.vehicles[v].vt_status {
                if !self.world.covers(j, v) {
                    self.world.vehicles[v].vt_status = VtStatus::Migrating;
                    market_changed = true;
                }
            }
        }
        let refresh = (0..nc).any(|i| self.cloud_action(actions, i)[1] > 0.5);
        if market_changed || refresh || m.overload {
            self.resolve_game()?;
            m.game_resolved = true;
        }
        m.utility = self.outcome.system_utility;

        m.reward = reward_from_metrics(&m, &cfg);
        m.scalar = scalarize(&cfg.objective.weights, &m.reward);

        self.vehicle_last = new_vehicle;
        self.edge_last = new_edge.into_iter().map(NodeRecord::mean).collect();
        self.cloud_last = new_cloud.into_iter().map(NodeRecord::mean).collect();
        self.perf = [
            normalize_by(m.energy_mean, t.energy_j),
            m.ux_mean,
            normalize_by(m.latency_mean, t.latency_s),
            normalize_by(m.cost_mean, t.cost),
        ];

        self.draw_tasks();
        self.step += 1;
        let done = self.step >= self.limit;
        Ok(StepOutcome { obs: self.observe(), reward: m.reward, done, metrics: m, decisions })
    }
}

fn clip(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

fn empty_spec(cfg: &ExperimentConfig) -> GameSpec {
    GameSpec {
        vehicles: Vec::new(),
        edges: Vec::new(),
        clouds: Vec::new(),
        min_service: cfg.pricing.min_service,
        price_lo: cfg.pricing.price_bounds.lo(),
        price_hi: cfg.pricing.price_bounds.hi(),
        grid_points: cfg.pricing.grid_points,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.counts.vehicles = 6;
        cfg.counts.edges = 2;
        cfg.counts.clouds = 1;
        cfg.world.ring_length_m = 2000.0;
        cfg.learner.steps_per_episode = 5;
        cfg
    }

    #[test]
    fn reset_is_deterministic() {
        let cfg = small();
        let mut a = Env::new(&cfg).unwrap();
        let mut b = Env::new(&cfg).unwrap();
        assert_eq!(a.reset(11).unwrap().digest(), b.reset(11).unwrap().digest());
        assert_ne!(a.reset(11).unwrap().digest(), a.reset(12).unwrap().digest());
    }

    #[test]
    fn idle_without_tasks_is_zero() {
        let mut cfg = small();
        cfg.task.arrival_prob = 0.0;
        let mut env = Env::new(&cfg).unwrap();
        let out = env.step(&env.layout().idle_actions()).unwrap();
        assert_eq!(out.reward, RewardVector::default());
        assert_eq!(out.metrics.latency_mean, 0.0);
    }

    #[test]
    fn episode_has_fixed_length() {
        let mut env = Env::new(&small()).unwrap();
        let idle = env.layout().idle_actions();
        for k in 0..5 {
            let out = env.step(&idle).unwrap();
            assert_eq!(out.done, k == 4);
        }
        assert!(matches!(env.step(&idle), Err(Error::EpisodeOver { .. })));
    }

    #[test]
    fn malformed_action_is_an_error() {
        let mut env = Env::new(&small()).unwrap();
        let mut bad = env.layout().idle_actions();
        bad[0].pop();
        assert!(matches!(env.step(&bad), Err(Error::Dimension(_))));
        assert!(matches!(env.step(&bad[1..]), Err(Error::Dimension(_))));
    }

    #[test]
    fn multiple_flags_are_masked() {
        let mut cfg = small();
        cfg.task.arrival_prob = 1.0;
        let mut env = Env::new(&cfg).unwrap();
        let mut acts = env.layout().idle_actions();
        for a in acts.iter_mut().take(6) {
            *a = vec![0.9, 0.8, 0.7, 0.5, 0.0];
        }
        let out = env.step(&acts).unwrap();
        assert_eq!(out.metrics.masked_multi_flags, 6);
        assert!(out.decisions.iter().all(|d| d.flag_count() <= 1));
        assert_eq!(out.metrics.feasibility.violations(1), 0);
        assert_eq!(out.metrics.feasibility.violations(2), 0);
        assert_eq!(out.metrics.channel_violations, 0);
    }

    #[test]
    fn zero_vehicles_is_valid() {
        let mut cfg = small();
        cfg.counts.vehicles = 0;
        let mut env = Env::new(&cfg).unwrap();
        let obs = env.reset(3).unwrap();
        assert_eq!(obs.locals.len(), 3);
        env.step(&env.layout().idle_actions()).unwrap();
    }
}
