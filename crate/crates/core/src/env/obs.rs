use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{normalize_by, Env};
use crate::gcn::{build_graph, feature_matrix, NetworkGraph, NodeFeature};
use crate::scenario::{VtStatus, BITS_PER_MB};

pub const VEHICLE_OBS: usize = 24;
pub const EDGE_OBS: usize = 9;
pub const CLOUD_OBS: usize = 7;

/// Length of the global state vector for `vehicles` vehicles.
pub fn global_dim(vehicles: usize) -> usize {
    11 + 3 * vehicles
}

/// Everything the agents and critics see after a reset or a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub step: usize,
    pub global: Vec<f64>,
    /// One local vector per agent, in agent order.
    pub locals: Vec<Vec<f64>>,
    /// Raw node features, one row per graph node.
    pub features: Array2<f64>,
    pub graph: NetworkGraph,
    /// Symmetric-normalized propagation operator of `graph`.
    pub operator: Array2<f64>,
}

impl Observation {
    /// Hex SHA-256 over every number in the observation.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.step as u64).to_le_bytes());
        let mut put = |xs: &mut dyn Iterator<Item = f64>| {
            for x in xs {
                h.update(x.to_bits().to_le_bytes());
            }
        };
        put(&mut self.global.iter().copied());
        for l in &self.locals {
            put(&mut l.iter().copied());
        }
        put(&mut self.features.iter().copied());
        put(&mut self.graph.adjacency.iter().copied());
        let out = h.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn status_code(s: VtStatus) -> f64 {
    match s {
        VtStatus::Local => 0.0,
        VtStatus::HostedEdge(_) => 1.0 / 3.0,
        VtStatus::HostedCloud(_) => 2.0 / 3.0,
        VtStatus::Migrating => 1.0,
    }
}

impl Env {
    pub(super) fn observe(&self) -> Observation {
        let cfg = &self.cfg;
        let w = &self.world;
        let t = &cfg.thresholds;
        let (nv, ne, nc) = (w.vehicles.len(), w.edges.len(), w.clouds.len());
        let vn = nv.max(1) as f64;
        let price_hi = cfg.pricing.price_bounds.hi();
        let pending = w.vehicles.iter().filter(|v| v.pending_task.is_some()).count();

        let mut global = Vec::with_capacity(global_dim(nv));
        global.extend_from_slice(&self.perf);
        global.extend(self.traffic.iter().map(|x| x / vn));
        global.push(self.outcome.system_utility / cfg.objective.utility_scale);
        global.push(self.step as f64 / self.limit.max(1) as f64);
        global.push(pending as f64 / vn);
        global.push(if ne > 0 { w.edges.iter().map(|e| e.load_ratio).sum::<f64>() / ne as f64 } else { 0.0 });
        for v in &w.vehicles {
            global.push(v.pending_task.is_some() as u8 as f64);
            global.push(v.position_m / w.ring_length_m);
            global.push(status_code(v.vt_status));
        }

        let mut hosted_edge = vec![0usize; ne];
        let mut forwarded = vec![0usize; ne];
        let mut hosted_cloud = vec![0usize; nc];
        for v in &w.vehicles {
            match v.vt_status {
                VtStatus::HostedEdge(j) => hosted_edge[j] += 1,
                VtStatus::HostedCloud(i) => {
                    hosted_cloud[i] += 1;
                    if let Some(j) = v.forwarded_by {
                        forwarded[j] += 1;
                    }
                }
                _ => {}
            }
        }
        let min_cloud_price = self.outcome.cloud_price.iter().copied().fold(f64::INFINITY, f64::min);

        let mut locals = Vec::with_capacity(nv + ne + nc);
        for (k, v) in w.vehicles.iter().enumerate() {
            let mut o = Vec::with_capacity(VEHICLE_OBS);
            match v.pending_task {
                Some(task) => o.extend_from_slice(&[
                    1.0,
                    task.data_volume_bits / BITS_PER_MB / cfg.task.data_mb.hi(),
                    task.total_cycles() / cfg.task.total_cycles.hi(),
                    task.deadline_s / 10.0,
                    task.priority_class as f64 / cfg.task.priority_classes.max(1) as f64,
                    task.bandwidth_req_hz / cfg.task.bandwidth_req_hz.hi(),
                ]),
                None => o.extend_from_slice(&[0.0; 6]),
            }
            o.push(v.local_cpu_hz / cfg.world.vehicle_cpu_hz.hi());
            o.push(v.tx_power_w / cfg.world.vehicle_tx_power_w.hi());
            o.push(v.velocity_mps.abs() * 3.6 / cfg.world.speed_kmh.hi());
            o.push(v.position_m / w.ring_length_m);
            match w.association[k] {
                Some(j) => {
                    let e = &w.edges[j];
                    o.push(1.0);
                    o.push(w.radio_distance(k, j) / e.coverage_radius_m);
                    o.push(e.load_ratio);
                    o.push(self.edge_bw_free[j]);
                    o.push(self.outcome.edge_price[j] / price_hi);
                }
                None => o.extend_from_slice(&[0.0, 1.0, 1.0, 0.0, 1.0]),
            }
            o.push(if min_cloud_price.is_finite() { min_cloud_price / price_hi } else { 1.0 });
            let mut onehot = [0.0; 4];
            onehot[match v.vt_status {
                VtStatus::Local => 0,
                VtStatus::HostedEdge(_) => 1,
                VtStatus::HostedCloud(_) => 2,
                VtStatus::Migrating => 3,
            }] = 1.0;
            o.extend_from_slice(&onehot);
            o.push(v.forwarded_by.is_some() as u8 as f64);
            let last = &self.vehicle_last[k];
            o.push(last.ux);
            o.push(normalize_by(last.latency, t.latency_s));
            o.push(v.satisfaction / cfg.pricing.vehicle_satisfaction.hi());
            debug_assert_eq!(o.len(), VEHICLE_OBS);
            locals.push(o);
        }
        for (j, e) in w.edges.iter().enumerate() {
            let last = &self.edge_last[j];
            locals.push(vec![
                e.cpu_hz / cfg.world.edge_cpu_hz.hi(),
                e.load_ratio,
                self.edge_bw_free[j],
                self.outcome.edge_price[j] / price_hi,
                self.outcome.edge_serves[j] as u8 as f64,
                hosted_edge[j] as f64 / vn,
                forwarded[j] as f64 / vn,
                normalize_by(last.latency, t.latency_s),
                self.edge_reliability[j],
            ]);
        }
        for (i, c) in w.clouds.iter().enumerate() {
            locals.push(vec![
                c.cpu_hz / cfg.world.cloud_cpu_hz.hi(),
                self.cloud_load[i],
                self.outcome.cloud_price[i] / price_hi,
                self.outcome.cloud_serves[i] as u8 as f64,
                self.cloud_arrivals[i] / vn,
                self.cloud_reliability[i],
                hosted_cloud[i] as f64 / vn,
            ]);
        }

        let mut feats = Vec::with_capacity(nv + ne + nc);
        for (k, r) in self.vehicle_last.iter().enumerate() {
            feats.push(NodeFeature {
                ux: r.ux,
                utility: self.outcome.vehicle_utility.get(k).copied().unwrap_or(0.0),
                latency: r.latency,
                energy: r.energy,
                mig_cost: r.cost,
            });
        }
        for (j, r) in self.edge_last.iter().enumerate() {
            feats.push(NodeFeature {
                ux: r.ux,
                utility: self.outcome.edge_utility[j],
                latency: r.latency,
                energy: r.energy,
                mig_cost: r.cost,
            });
        }
        for (i, r) in self.cloud_last.iter().enumerate() {
            feats.push(NodeFeature {
                ux: r.ux,
                utility: self.outcome.cloud_utility[i],
                latency: r.latency,
                energy: r.energy,
                mig_cost: r.cost,
            });
        }
        let graph = build_graph(w);
        let operator = graph.normalized_operator();
        Observation { step: self.step, global, locals, features: feature_matrix(&feats), graph, operator }
    }
}
