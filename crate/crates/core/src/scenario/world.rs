use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;

pub const BITS_PER_MB: f64 = 8e6;

/// A vehicular-twin task `{D_v, Ω, L_max}` plus its queue priority and
/// bandwidth requirement.
///
/// `compute_demand` is cycles per bit, so `compute_demand * data_volume_bits`
/// is the task's total cycle count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VtTaskProfile {
    pub data_volume_bits: f64,
    pub compute_demand: f64,
    pub deadline_s: f64,
    pub priority_class: u32,
    pub bandwidth_req_hz: f64,
}

impl VtTaskProfile {
    pub fn total_cycles(&self) -> f64 {
        self.compute_demand * self.data_volume_bits
    }

    pub fn data_mb(&self) -> f64 {
        self.data_volume_bits / BITS_PER_MB
    }

    /// Build a profile from a data volume and a total cycle count.
    pub fn from_totals(data_bits: f64, total_cycles: f64, deadline_s: f64) -> Self {
        let compute_demand = if data_bits > 0.0 { total_cycles / data_bits } else { 0.0 };
        VtTaskProfile {
            data_volume_bits: data_bits,
            compute_demand,
            deadline_s,
            priority_class: 1,
            bandwidth_req_hz: 0.0,
        }
    }

    /// The share of this task that is offloaded: data and cycles both scale by `fraction`.
    pub fn portion(&self, fraction: f64) -> Self {
        VtTaskProfile { data_volume_bits: self.data_volume_bits * fraction, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VtStatus {
    Local,
    HostedEdge(usize),
    HostedCloud(usize),
    Migrating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: usize,
    pub position_m: f64,
    pub velocity_mps: f64,
    pub tx_power_w: f64,
    pub local_cpu_hz: f64,
    /// Satisfaction coefficient η used when this vehicle buys hosting.
    pub satisfaction: f64,
    pub pending_task: Option<VtTaskProfile>,
    pub vt_status: VtStatus,
    /// Edge that forwarded this vehicle's twin to its current cloud host, if any.
    pub forwarded_by: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeNode {
    pub id: usize,
    pub position_m: f64,
    pub coverage_radius_m: f64,
    pub cpu_hz: f64,
    pub bandwidth_hz: f64,
    pub channel_count: usize,
    pub switch_capacitance: f64,
    pub tx_power_w: f64,
    pub load_ratio: f64,
    pub capacity_units: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudServer {
    pub id: usize,
    pub cpu_hz: f64,
    pub bandwidth_hz: f64,
    pub switch_capacitance: f64,
    pub server_count: usize,
    pub capacity_units: f64,
}

/// Hosting candidates for one vehicle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidates {
    /// Covering edges, nearest first; equal distances ordered by id.
    pub edges: Vec<usize>,
    pub clouds: Vec<usize>,
}

impl Candidates {
    pub fn nearest_edge(&self) -> Option<usize> {
        self.edges.first().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty() && self.clouds.is_empty()
    }
}

/// Shortest distance between two points on a ring of length `len`.
pub fn ring_distance(a: f64, b: f64, len: f64) -> f64 {
    let d = (a - b).rem_euclid(len);
    d.min(len - d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub ring_length_m: f64,
    pub rsu_height_m: f64,
    pub vehicles: Vec<Vehicle>,
    pub edges: Vec<EdgeNode>,
    pub clouds: Vec<CloudServer>,
    /// Nearest covering edge per vehicle, refreshed on every mobility step.
    pub association: Vec<Option<usize>>,
    pub time_s: f64,
}

impl World {
    /// Sample a fresh world. RSUs are equally spaced on the ring.
    pub fn generate<R: Rng + ?Sized>(cfg: &ExperimentConfig, rng: &mut R) -> World {
        let w = &cfg.world;
        let len = w.ring_length_m;
        let edges: Vec<EdgeNode> = (0..cfg.counts.edges)
            .map(|id| EdgeNode {
                id,
                position_m: (id as f64 + 0.5) * len / cfg.counts.edges as f64,
                coverage_radius_m: w.coverage_radius_m,
                cpu_hz: w.edge_cpu_hz.sample(rng),
                bandwidth_hz: w.edge_bandwidth_hz,
                channel_count: w.edge_channels,
                switch_capacitance: w.edge_switch_capacitance,
                tx_power_w: w.edge_tx_power_w.sample(rng),
                load_ratio: 0.0,
                capacity_units: w.edge_capacity_units,
            })
            .collect();
        let clouds: Vec<CloudServer> = (0..cfg.counts.clouds)
            .map(|id| CloudServer {
                id,
                cpu_hz: w.cloud_cpu_hz.sample(rng),
                bandwidth_hz: w.cloud_bandwidth_hz,
                switch_capacitance: w.cloud_switch_capacitance,
                server_count: w.cloud_servers,
                capacity_units: w.cloud_capacity_units,
            })
            .collect();
        let vehicles: Vec<Vehicle> = (0..cfg.counts.vehicles)
            .map(|id| {
                let speed = w.speed_kmh.sample(rng) / 3.6;
                let direction = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                Vehicle {
                    id,
                    position_m: rng.gen_range(0.0..len),
                    velocity_mps: direction * speed,
                    tx_power_w: w.vehicle_tx_power_w.sample(rng),
                    local_cpu_hz: w.vehicle_cpu_hz.sample(rng),
                    satisfaction: cfg.pricing.vehicle_satisfaction.sample(rng),
                    pending_task: None,
                    vt_status: VtStatus::Local,
                    forwarded_by: None,
                }
            })
            .collect();
        let mut world = World {
            ring_length_m: len,
            rsu_height_m: w.rsu_height_m,
            association: vec![None; vehicles.len()],
            vehicles,
            edges,
            clouds,
            time_s: 0.0,
        };
        world.refresh_association();
        world
    }

    /// Advance every vehicle by `dt_s` seconds along the ring.
    ///
    /// # Panics
    /// If `dt_s` is not strictly positive.
    pub fn step_mobility(&mut self, dt_s: f64) {
        assert!(dt_s > 0.0, "mobility step must be positive, got {dt_s}");
        let len = self.ring_length_m;
        for v in &mut self.vehicles {
            v.position_m = (v.position_m + v.velocity_mps * dt_s).rem_euclid(len);
            // rem_euclid can round up to `len` for tiny negative inputs.
            if v.position_m >= len {
                v.position_m = 0.0;
            }
        }
        self.time_s += dt_s;
        self.refresh_association();
    }

    fn refresh_association(&mut self) {
        self.association = (0..self.vehicles.len()).map(|v| self.associate(v).nearest_edge()).collect();
    }

    pub fn edge_distance_on_ring(&self, vehicle: usize, edge: usize) -> f64 {
        ring_distance(self.vehicles[vehicle].position_m, self.edges[edge].position_m, self.ring_length_m)
    }

    /// Radio distance between a vehicle and an RSU, including antenna height.
    pub fn radio_distance(&self, vehicle: usize, edge: usize) -> f64 {
        self.edge_distance_on_ring(vehicle, edge).hypot(self.rsu_height_m)
    }

    pub fn covers(&self, edge: usize, vehicle: usize) -> bool {
        self.edge_distance_on_ring(vehicle, edge) <= self.edges[edge].coverage_radius_m
    }

    /// Edges whose coverage contains the vehicle, plus every cloud.
    pub fn associate(&self, vehicle: usize) -> Candidates {
        let mut edges: Vec<(f64, usize)> = self
            .edges
            .iter()
            .filter(|e| self.covers(e.id, vehicle))
            .map(|e| (self.edge_distance_on_ring(vehicle, e.id), e.id))
            .collect();
        edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Candidates {
            edges: edges.into_iter().map(|(_, id)| id).collect(),
            clouds: self.clouds.iter().map(|c| c.id).collect(),
        }
    }

    /// Line-delimited debugging records, one JSON object per node.
    pub fn snapshot_records(&self) -> Vec<serde_json::Value> {
        let mut out = Vec::with_capacity(self.vehicles.len() + self.edges.len() + self.clouds.len());
        for v in &self.vehicles {
            out.push(serde_json::json!({
                "time_s": self.time_s,
                "kind": "vehicle",
                "id": v.id,
                "position_m": v.position_m,
                "velocity_mps": v.velocity_mps,
                "associated_edge": self.association[v.id],
                "vt_status": v.vt_status,
                "pending_task": v.pending_task,
            }));
        }
        for e in &self.edges {
            out.push(serde_json::json!({
                "time_s": self.time_s,
                "kind": "edge",
                "id": e.id,
                "position_m": e.position_m,
                "cpu_hz": e.cpu_hz,
                "load_ratio": e.load_ratio,
            }));
        }
        for c in &self.clouds {
            out.push(serde_json::json!({
                "time_s": self.time_s,
                "kind": "cloud",
                "id": c.id,
                "cpu_hz": c.cpu_hz,
                "server_count": c.server_count,
            }));
        }
        out
    }
}

/// Draw one task. Data volume and total cycles are independent uniforms;
/// the per-bit demand `Ω` is derived from them.
pub fn sample_task<R: Rng + ?Sized>(rng: &mut R, cfg: &ExperimentConfig) -> VtTaskProfile {
    let t = &cfg.task;
    let data_bits = t.data_mb.sample(rng) * BITS_PER_MB;
    let cycles = t.total_cycles.sample(rng);
    let bandwidth = t.bandwidth_req_hz.sample(rng);
    let priority_class = rng.gen_range(1..=t.priority_classes);
    let mut task = VtTaskProfile::from_totals(data_bits, cycles, cfg.thresholds.latency_s);
    task.priority_class = priority_class;
    task.bandwidth_req_hz = bandwidth;
    task
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;

    fn tiny_world(positions: &[f64], edges: &[f64], radius: f64, len: f64) -> World {
        let mut cfg = ExperimentConfig::default();
        cfg.counts.vehicles = positions.len();
        cfg.counts.edges = edges.len();
        cfg.counts.clouds = 2;
        cfg.world.ring_length_m = len;
        cfg.world.coverage_radius_m = radius;
        let mut w = World::generate(&cfg, &mut seed::rng(1, &[0]));
        for (v, p) in w.vehicles.iter_mut().zip(positions) {
            v.position_m = *p;
        }
        for (e, p) in w.edges.iter_mut().zip(edges) {
            e.position_m = *p;
        }
        w.refresh_association();
        w
    }

    #[test]
    fn zero_velocity_stays_put() {
        let mut w = tiny_world(&[123.0], &[500.0], 100.0, 1000.0);
        w.vehicles[0].velocity_mps = 0.0;
        w.step_mobility(1.0);
        assert_eq!(w.vehicles[0].position_m, 123.0);
    }

    #[test]
    fn linear_motion() {
        let mut w = tiny_world(&[0.0], &[500.0], 100.0, 1000.0);
        w.vehicles[0].velocity_mps = 20.0;
        w.step_mobility(1.0);
        assert_eq!(w.vehicles[0].position_m, 20.0);
    }

    #[test]
    fn wraps_around_the_ring() {
        let len = 1000.0;
        let mut w = tiny_world(&[len - 5.0], &[500.0], 100.0, len);
        w.vehicles[0].velocity_mps = 10.0;
        w.step_mobility(1.0);
        // Modular oracle: (995 + 10) mod 1000.
        assert!((w.vehicles[0].position_m - 5.0).abs() < 1e-9);
    }

    #[test]
    fn single_coverage_disc() {
        let w = tiny_world(&[100.0], &[120.0, 600.0], 50.0, 1000.0);
        let c = w.associate(0);
        assert_eq!(c.edges, vec![0]);
        assert_eq!(c.clouds, vec![0, 1]);
    }

    #[test]
    fn equidistant_tie_goes_to_lowest_id() {
        // Six edges; vehicle sits exactly between edges 2 and 5.
        let w = tiny_world(&[500.0], &[0.0, 900.0, 400.0, 1500.0, 1800.0, 600.0], 150.0, 2000.0);
        let c = w.associate(0);
        assert_eq!(c.edges, vec![2, 5]);
        assert_eq!(c.nearest_edge(), Some(2));
    }

    #[test]
    fn outside_every_disc_gives_clouds_only() {
        // Three edges at 0, 333, 666 on a 1000 m ring, radius 100:
        // a vehicle at 500 is 167 m from the nearest RSU.
        let w = tiny_world(&[500.0], &[0.0, 333.0, 666.0], 100.0, 1000.0);
        let c = w.associate(0);
        assert!(c.edges.is_empty());
        assert_eq!(c.clouds, vec![0, 1]);
        assert_eq!(w.association[0], None);
    }

    #[test]
    fn default_task_ranges() {
        let cfg = ExperimentConfig::default();
        let mut rng = seed::rng(9, &[1]);
        for _ in 0..1000 {
            let t = sample_task(&mut rng, &cfg);
            assert!((10.0 * 8e6..=50.0 * 8e6).contains(&t.data_volume_bits));
            let cycles = t.total_cycles();
            assert!((0.6e9 * (1.0 - 1e-12)..=1.6e9 * (1.0 + 1e-12)).contains(&cycles));
            assert!(t.deadline_s > 0.0);
            assert!((1..=cfg.task.priority_classes).contains(&t.priority_class));
        }
    }

    #[test]
    fn task_sampling_is_deterministic() {
        let cfg = ExperimentConfig::default();
        let a = sample_task(&mut seed::rng(4, &[2]), &cfg);
        let b = sample_task(&mut seed::rng(4, &[2]), &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn generated_speeds_respect_bounds() {
        let cfg = ExperimentConfig::default();
        let w = World::generate(&cfg, &mut seed::rng(5, &[0]));
        for v in &w.vehicles {
            let kmh = v.velocity_mps.abs() * 3.6;
            assert!((36.0 - 1e-9..=108.0 + 1e-9).contains(&kmh), "{kmh}");
        }
        assert!(w.clouds.iter().all(|c| w.edges.iter().all(|e| c.cpu_hz >= e.cpu_hz)));
    }

    proptest! {
        #[test]
        fn positions_stay_on_ring(seed_val in 0u64..1000, steps in 1usize..200, dt in 0.01f64..5.0) {
            let mut cfg = ExperimentConfig::default();
            cfg.counts.vehicles = 8;
            cfg.world.ring_length_m = 777.0;
            let mut w = World::generate(&cfg, &mut seed::rng(seed_val, &[0]));
            for _ in 0..steps {
                w.step_mobility(dt);
            }
            for v in &w.vehicles {
                prop_assert!(v.position_m >= 0.0 && v.position_m < 777.0);
                prop_assert!(!w.associate(v.id).is_empty());
            }
        }
    }
}
