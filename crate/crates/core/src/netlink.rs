//! Channel rates and the latency terms of a VT migration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{VtTaskProfile, World};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub bandwidth_hz: f64,
    pub tx_power_w: f64,
    pub channel_gain: f64,
    pub distance_m: f64,
    pub pathloss_exp: f64,
    pub noise_psd: f64,
}

impl LinkParams {
    pub fn snr(&self) -> f64 {
        self.tx_power_w * self.channel_gain * self.distance_m.powf(-self.pathloss_exp) / self.noise_psd
    }
}

/// Shannon capacity `b·log2(1 + δ·k·d^-ε / N0)` in bits per second.
pub fn shannon_rate(p: &LinkParams) -> Result<f64> {
    let fields = [
        ("bandwidth_hz", p.bandwidth_hz),
        ("tx_power_w", p.tx_power_w),
        ("channel_gain", p.channel_gain),
        ("distance_m", p.distance_m),
        ("pathloss_exp", p.pathloss_exp),
        ("noise_psd", p.noise_psd),
    ];
    for (name, x) in fields {
        if !(x.is_finite() && x > 0.0) {
            return Err(Error::domain(format!("link {name} must be > 0, got {x}")));
        }
    }
    Ok(p.bandwidth_hz * p.snr().ln_1p() / std::f64::consts::LN_2)
}

pub fn tx_latency(task: &VtTaskProfile, rate: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::domain(format!("rate must be > 0, got {rate}")));
    }
    Ok(task.data_volume_bits / rate)
}

pub fn exec_latency(task: &VtTaskProfile, cpu_hz: f64) -> Result<f64> {
    if !(cpu_hz > 0.0) {
        return Err(Error::domain(format!("cpu_hz must be > 0, got {cpu_hz}")));
    }
    Ok(task.total_cycles() / cpu_hz)
}

/// Time to rebuild the twin on the destination: the task's cycle count at
/// the destination clock.
pub fn reinstantiation_delay(task: &VtTaskProfile, dest_cpu_hz: f64) -> Result<f64> {
    if !(dest_cpu_hz > 0.0) {
        return Err(Error::domain(format!("dest_cpu_hz must be > 0, got {dest_cpu_hz}")));
    }
    Ok(task.total_cycles() / dest_cpu_hz)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    pub arrival_rate: f64,
    pub service_rate: f64,
    pub servers: usize,
    pub queue_length: usize,
    pub priority_weight: f64,
}

/// `ρ·Λq / (μ(sμ − λ))`.
pub fn queue_delay(q: &QueueState) -> Result<f64> {
    if !(q.service_rate > 0.0) || q.servers == 0 || !(q.arrival_rate >= 0.0) {
        return Err(Error::domain(format!("invalid queue state {q:?}")));
    }
    let capacity = q.servers as f64 * q.service_rate;
    if q.arrival_rate >= capacity {
        return Err(Error::UnstableQueue { arrival: q.arrival_rate, capacity });
    }
    if q.queue_length == 0 {
        return Ok(0.0);
    }
    Ok(q.priority_weight * q.queue_length as f64 / (q.service_rate * (capacity - q.arrival_rate)))
}

/// A resolved hosting route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    ToEdge { edge: usize },
    ToCloud { cloud: usize },
    EdgeToCloud { edge: usize, cloud: usize },
}

impl Route {
    /// The server whose radio the vehicle uploads through.
    pub fn access_server(&self) -> ServerId {
        match *self {
            Route::ToEdge { edge } | Route::EdgeToCloud { edge, .. } => ServerId::Edge(edge),
            Route::ToCloud { cloud } => ServerId::Cloud(cloud),
        }
    }

    /// The server that ends up hosting the twin.
    pub fn host(&self) -> ServerId {
        match *self {
            Route::ToEdge { edge } => ServerId::Edge(edge),
            Route::ToCloud { cloud } | Route::EdgeToCloud { cloud, .. } => ServerId::Cloud(cloud),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ServerId {
    Edge(usize),
    Cloud(usize),
}

/// The per-slot routing flags for one vehicle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationDecision {
    pub to_edge: bool,
    pub to_cloud: bool,
    pub edge_to_cloud: bool,
    pub source_edge: Option<usize>,
    pub destination: Option<usize>,
}

impl MigrationDecision {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_route(route: Route) -> Self {
        match route {
            Route::ToEdge { edge } => {
                MigrationDecision { to_edge: true, source_edge: Some(edge), destination: Some(edge), ..Self::default() }
            }
            Route::ToCloud { cloud } => {
                MigrationDecision { to_cloud: true, destination: Some(cloud), ..Self::default() }
            }
            Route::EdgeToCloud { edge, cloud } => MigrationDecision {
                edge_to_cloud: true,
                source_edge: Some(edge),
                destination: Some(cloud),
                ..Self::default()
            },
        }
    }

    pub fn flag_count(&self) -> usize {
        [self.to_edge, self.to_cloud, self.edge_to_cloud].iter().filter(|f| **f).count()
    }

    /// The route selected by a well-formed decision, or `None` when idle.
    pub fn route(&self) -> Result<Option<Route>> {
        if self.flag_count() > 1 {
            return Err(Error::domain("more than one migration flag set"));
        }
        let missing = || Error::domain("migration decision lacks a server id");
        Ok(if self.to_edge {
            Some(Route::ToEdge { edge: self.destination.or(self.source_edge).ok_or_else(missing)? })
        } else if self.to_cloud {
            Some(Route::ToCloud { cloud: self.destination.ok_or_else(missing)? })
        } else if self.edge_to_cloud {
            Some(Route::EdgeToCloud {
                edge: self.source_edge.ok_or_else(missing)?,
                cloud: self.destination.ok_or_else(missing)?,
            })
        } else {
            None
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyComponents {
    pub transmission: f64,
    pub execution: f64,
    pub migration: f64,
    pub queueing: f64,
    pub reinstantiation: f64,
}

impl LatencyComponents {
    /// Zero out the terms a route does not traverse.
    pub fn masked(&self, route: Route) -> LatencyComponents {
        match route {
            Route::ToEdge { .. } => {
                LatencyComponents { transmission: self.transmission, execution: self.execution, ..Default::default() }
            }
            Route::ToCloud { .. } => LatencyComponents {
                transmission: self.transmission,
                execution: self.execution,
                queueing: self.queueing,
                ..Default::default()
            },
            Route::EdgeToCloud { .. } => *self,
        }
    }

    pub fn sum(&self) -> f64 {
        self.transmission + self.execution + self.migration + self.queueing + self.reinstantiation
    }
}

/// End-to-end latency of the decision's route.
pub fn total_latency(decision: &MigrationDecision, c: &LatencyComponents) -> Result<f64> {
    let route = decision.route()?.ok_or(Error::NoActiveRoute)?;
    Ok(c.masked(route).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ChannelViolation {
    MultipleAssociations { vehicle: usize },
    Bandwidth { server: ServerId, demand_hz: f64, capacity_hz: f64 },
}

/// Association and bandwidth checks over one slot's decisions, indexed by vehicle.
pub fn check_channel_constraints(world: &World, decisions: &[MigrationDecision]) -> Vec<ChannelViolation> {
    let mut out = Vec::new();
    let mut edge_load = vec![0.0; world.edges.len()];
    let mut cloud_load = vec![0.0; world.clouds.len()];
    for (v, d) in decisions.iter().enumerate() {
        if d.flag_count() > 1 {
            out.push(ChannelViolation::MultipleAssociations { vehicle: v });
            continue;
        }
        let Ok(Some(route)) = d.route() else { continue };
        let demand = world.vehicles.get(v).and_then(|veh| veh.pending_task).map_or(0.0, |t| t.bandwidth_req_hz);
        match route.access_server() {
            ServerId::Edge(j) => edge_load[j] += demand,
            ServerId::Cloud(i) => cloud_load[i] += demand,
        }
    }
    for (j, load) in edge_load.iter().enumerate() {
        let cap = world.edges[j].bandwidth_hz;
        if *load > cap {
            out.push(ChannelViolation::Bandwidth { server: ServerId::Edge(j), demand_hz: *load, capacity_hz: cap });
        }
    }
    for (i, load) in cloud_load.iter().enumerate() {
        let cap = world.clouds[i].bandwidth_hz;
        if *load > cap {
            out.push(ChannelViolation::Bandwidth { server: ServerId::Cloud(i), demand_hz: *load, capacity_hz: cap });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ExperimentConfig;
    use crate::seed;
    use proptest::prelude::*;

    fn link(b: f64, snr: f64) -> LinkParams {
        LinkParams {
            bandwidth_hz: b,
            tx_power_w: snr,
            channel_gain: 1.0,
            distance_m: 1.0,
            pathloss_exp: 2.0,
            noise_psd: 1.0,
        }
    }

    #[test]
    fn rate_examples() {
        assert_eq!(shannon_rate(&link(1e6, 1.0)).unwrap(), 1e6);
        assert!((shannon_rate(&link(20e6, 3.0)).unwrap() - 40e6).abs() < 1e-6);
        let mut far = link(20e6, 3.0);
        far.distance_m = 2.0;
        // SNR drops to 3/4.
        let r = shannon_rate(&far).unwrap();
        assert!((r - 20e6 * 1.75f64.log2()).abs() < 1e-6);
        assert!((r - 1.615e7).abs() / 1.615e7 < 1e-3);
        let mut bad = link(1e6, 1.0);
        bad.noise_psd = 0.0;
        assert!(shannon_rate(&bad).is_err());
    }

    #[test]
    fn latency_examples() {
        let t = VtTaskProfile::from_totals(8e7, 1e9, 6.0);
        assert_eq!(tx_latency(&t, 8e7).unwrap(), 1.0);
        assert_eq!(tx_latency(&VtTaskProfile::from_totals(0.0, 0.0, 6.0), 8e7).unwrap(), 0.0);
        let big = VtTaskProfile::from_totals(4e8, 1.6e9, 6.0);
        assert!((tx_latency(&big, 1.615e7).unwrap() - 24.77).abs() < 0.01);
        assert!(tx_latency(&t, 0.0).is_err());
        assert_eq!(exec_latency(&t, 1e9).unwrap(), 1.0);
        assert!((exec_latency(&big, 4e9).unwrap() - 0.4).abs() < 1e-15);
        assert!(exec_latency(&t, -1.0).is_err());
        assert_eq!(reinstantiation_delay(&t, 5e9).unwrap(), 0.2);
        assert!(reinstantiation_delay(&t, 0.0).is_err());
    }

    #[test]
    fn queue_examples() {
        let mut q =
            QueueState { arrival_rate: 2.0, service_rate: 1.0, servers: 4, queue_length: 0, priority_weight: 1.0 };
        assert_eq!(queue_delay(&q).unwrap(), 0.0);
        q.queue_length = 4;
        assert_eq!(queue_delay(&q).unwrap(), 2.0);
        q.arrival_rate = 4.0;
        assert!(matches!(queue_delay(&q), Err(Error::UnstableQueue { .. })));
    }

    #[test]
    fn total_latency_sums_active_terms() {
        let c = LatencyComponents {
            transmission: 1.0,
            execution: 0.4,
            migration: 7.0,
            queueing: 2.0,
            reinstantiation: 0.2,
        };
        let to_edge = MigrationDecision::from_route(Route::ToEdge { edge: 0 });
        assert_eq!(total_latency(&to_edge, &c).unwrap(), 1.4);
        let e2c = MigrationDecision::from_route(Route::EdgeToCloud { edge: 0, cloud: 1 });
        assert_eq!(total_latency(&e2c, &c).unwrap(), 1.0 + 0.4 + 7.0 + 2.0 + 0.2);
        assert_eq!(total_latency(&to_edge, &LatencyComponents::default()).unwrap(), 0.0);
        assert!(matches!(total_latency(&MigrationDecision::none(), &c), Err(Error::NoActiveRoute)));
    }

    fn channel_world(n: usize, bw: f64) -> World {
        let mut cfg = ExperimentConfig::default();
        cfg.counts.vehicles = n;
        cfg.counts.edges = 1;
        cfg.counts.clouds = 1;
        let mut w = World::generate(&cfg, &mut seed::rng(0, &[0]));
        for v in &mut w.vehicles {
            let mut t = VtTaskProfile::from_totals(8e7, 1e9, 6.0);
            t.bandwidth_req_hz = bw;
            v.pending_task = Some(t);
        }
        w
    }

    #[test]
    fn channel_examples() {
        let w = channel_world(1, 5e6);
        let ok = vec![MigrationDecision::from_route(Route::ToEdge { edge: 0 })];
        assert!(check_channel_constraints(&w, &ok).is_empty());

        let mut two = ok.clone();
        two[0].to_cloud = true;
        assert_eq!(check_channel_constraints(&w, &two), vec![ChannelViolation::MultipleAssociations { vehicle: 0 }]);

        let w5 = channel_world(5, 5e6);
        let all = vec![MigrationDecision::from_route(Route::ToEdge { edge: 0 }); 5];
        let v = check_channel_constraints(&w5, &all);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], ChannelViolation::Bandwidth { server: ServerId::Edge(0), .. }));
    }

    proptest! {
        #[test]
        fn rate_is_monotone(b in 1e3f64..1e8, p in 1e-3f64..100.0, d in 1.0f64..1e4, k in 1.1f64..3.0) {
            let base = LinkParams { bandwidth_hz: b, tx_power_w: p, channel_gain: 1.0, distance_m: d, pathloss_exp: 2.0, noise_psd: 1e-9 };
            let r = shannon_rate(&base).unwrap();
            let wider = LinkParams { bandwidth_hz: b * k, ..base };
            let louder = LinkParams { tx_power_w: p * k, ..base };
            let farther = LinkParams { distance_m: d * k, ..base };
            let noisier = LinkParams { noise_psd: 1e-9 * k, ..base };
            prop_assert!(shannon_rate(&wider).unwrap() > r);
            prop_assert!(shannon_rate(&louder).unwrap() > r);
            prop_assert!(shannon_rate(&farther).unwrap() < r);
            prop_assert!(shannon_rate(&noisier).unwrap() < r);
        }

        #[test]
        fn sum_is_order_independent(x in proptest::array::uniform5(0.0f64..100.0)) {
            let c = LatencyComponents { transmission: x[0], execution: x[1], migration: x[2], queueing: x[3], reinstantiation: x[4] };
            let reversed = x[4] + x[3] + x[2] + x[1] + x[0];
            prop_assert!((c.sum() - reversed).abs() <= 4.0 * f64::EPSILON * c.sum().max(1.0));
        }
    }
}
