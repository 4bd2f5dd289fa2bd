//! Experiment configuration.
//!
//! The on-disk format is TOML. Every key is optional; omitted keys take the
//! defaults below. Unknown keys are rejected so that a typo never silently
//! falls back to a default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::costs::{PricingMode, Thresholds, UxParams};
use crate::error::{Error, Result};

/// Closed interval `[lo, hi]`, written as a two-element array in TOML.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    pub fn lo(&self) -> f64 {
        self.0
    }

    pub fn hi(&self) -> f64 {
        self.1
    }

    pub fn point(x: f64) -> Self {
        Range(x, x)
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.0 + self.1)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.0 && x <= self.1
    }

    /// Uniform draw; degenerate ranges return `lo` without consuming randomness.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.1 > self.0 {
            rng.gen_range(self.0..=self.1)
        } else {
            self.0
        }
    }

    fn check(&self, key: &str) -> Result<()> {
        if !(self.0.is_finite() && self.1.is_finite()) || self.0 > self.1 {
            return Err(Error::ConfigRange(format!(
                "{key} must be a finite range with lo <= hi, got [{}, {}]",
                self.0, self.1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Counts {
    pub vehicles: usize,
    pub edges: usize,
    pub clouds: usize,
}

impl Default for Counts {
    fn default() -> Self {
        Counts { vehicles: 100, edges: 10, clouds: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub ring_length_m: f64,
    pub coverage_radius_m: f64,
    /// RSU antenna height; keeps the vehicle-RSU distance strictly positive.
    pub rsu_height_m: f64,
    pub speed_kmh: Range,
    pub vehicle_tx_power_w: Range,
    pub vehicle_cpu_hz: Range,
    pub edge_cpu_hz: Range,
    pub cloud_cpu_hz: Range,
    pub edge_tx_power_w: Range,
    pub edge_bandwidth_hz: f64,
    pub cloud_bandwidth_hz: f64,
    pub edge_channels: usize,
    pub edge_switch_capacitance: f64,
    pub cloud_switch_capacitance: f64,
    pub cloud_servers: usize,
    pub edge_capacity_units: f64,
    pub cloud_capacity_units: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            ring_length_m: 10_000.0,
            coverage_radius_m: 500.0,
            rsu_height_m: 10.0,
            speed_kmh: Range(36.0, 108.0),
            vehicle_tx_power_w: Range(0.5, 1.0),
            vehicle_cpu_hz: Range(0.2e9, 0.4e9),
            edge_cpu_hz: Range(5e9, 10e9),
            cloud_cpu_hz: Range(20e9, 40e9),
            edge_tx_power_w: Range(10.0, 50.0),
            edge_bandwidth_hz: 20e6,
            cloud_bandwidth_hz: 100e6,
            edge_channels: 8,
            edge_switch_capacitance: 1e-28,
            cloud_switch_capacitance: 1e-28,
            cloud_servers: 4,
            edge_capacity_units: 40.0,
            cloud_capacity_units: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub data_mb: Range,
    pub total_cycles: Range,
    pub bandwidth_req_hz: Range,
    pub priority_classes: u32,
    /// Probability that a vehicle emits a task in a given step.
    pub arrival_prob: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            data_mb: Range(10.0, 50.0),
            total_cycles: Range(0.6e9, 1.6e9),
            bandwidth_req_hz: Range(2e6, 5e6),
            priority_classes: 3,
            arrival_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub channel_gain: f64,
    pub pathloss_exp: f64,
    pub backhaul_gain: f64,
    pub backhaul_pathloss_exp: f64,
    pub noise_psd: f64,
    pub vehicle_cloud_distance_m: f64,
    pub edge_cloud_distance_m: f64,
    pub backhaul_bandwidth_hz: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            channel_gain: 1.0,
            pathloss_exp: 2.0,
            backhaul_gain: 1.0,
            backhaul_pathloss_exp: 2.0,
            noise_psd: 1e-9,
            vehicle_cloud_distance_m: 1_000.0,
            edge_cloud_distance_m: 50_000.0,
            backhaul_bandwidth_hz: 60e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricingConfig {
    pub mode: PricingMode,
    /// Price bounds `[θ_lo, θ_hi]` of the pricing game, in $ per MB.
    pub price_bounds: Range,
    /// Dollars per CPU cycle per unit of game price, used in per-cycle mode.
    pub cycle_price_scale: f64,
    pub grid_points: usize,
    pub vehicle_satisfaction: Range,
    pub edge_satisfaction: f64,
    pub edge_cost: f64,
    pub cloud_cost: f64,
    pub min_service: f64,
    /// Price surcharge for a task that requests the premium queue class.
    pub qos_premium: f64,
}

impl Default for PricingConfig {
    fn default() -> Self {
        PricingConfig {
            mode: PricingMode::PerMb,
            price_bounds: Range(0.30, 0.50),
            cycle_price_scale: 1e-9,
            grid_points: 200,
            vehicle_satisfaction: Range(0.6, 1.2),
            edge_satisfaction: 0.8,
            edge_cost: 0.2,
            cloud_cost: 0.15,
            min_service: 0.0,
            qos_premium: 0.25,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    /// Multiply the `κ·f²` execution term by the task's cycle count.
    pub energy_times_cycles: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// ω for UX, utility, latency, energy, migration cost.
    pub weights: [f64; 5],
    pub penalty_coeff: f64,
    /// Divisor that puts the system utility on the same scale as the other terms.
    pub utility_scale: f64,
    pub traffic_window: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig { weights: [0.2; 5], penalty_coeff: 1.0, utility_scale: 10.0, traffic_window: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub gcn_lr: f64,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub tau: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub warmup: usize,
    pub update_every: usize,
    pub hidden: Vec<usize>,
    pub gcn_hidden: usize,
    pub gcn_out: usize,
    pub train_gcn: bool,
    pub share_weights: bool,
    pub noise_start: f64,
    pub noise_end: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            critic_lr: 1e-3,
            actor_lr: 1e-4,
            gcn_lr: 1e-3,
            gamma: 0.95,
            buffer_capacity: 100_000,
            batch_size: 128,
            tau: 1e-3,
            episodes: 3000,
            steps_per_episode: 100,
            warmup: 1000,
            update_every: 1,
            hidden: vec![64, 64],
            gcn_hidden: 16,
            gcn_out: 8,
            train_gcn: true,
            share_weights: false,
            noise_start: 0.2,
            noise_end: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MadqnConfig {
    pub bins: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub lr: f64,
}

impl Default for MadqnConfig {
    fn default() -> Self {
        MadqnConfig { bins: 5, epsilon_start: 1.0, epsilon_end: 0.05, lr: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    /// Number of fixed training episodes each chromosome is scored on.
    pub fitness_episodes: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 50,
            generations: 100,
            tournament: 3,
            crossover_prob: 0.9,
            mutation_prob: 0.02,
            fitness_episodes: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub madqn: MadqnConfig,
    pub ga: GaConfig,
}

/// Axis lists for parameter sweeps. Each grid point is its own seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Episodes per grid point and seed.
    pub episodes: usize,
    /// Fixed task sizes in MB.
    pub task_size_mb: Vec<f64>,
    /// Multipliers applied to edge and cloud CPU ranges.
    pub resource_scale: Vec<f64>,
    /// Per-step task arrival probabilities.
    pub demand: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            episodes: 20,
            task_size_mb: vec![10.0, 30.0, 50.0],
            resource_scale: vec![0.5, 1.0, 2.0],
            demand: vec![0.25, 0.5, 0.75],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub final_window: usize,
    pub step_metrics: bool,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig { final_window: 50, step_metrics: true }
    }
}

/// Full experiment description. `Default` reproduces the reference setup.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub counts: Counts,
    pub world: WorldConfig,
    pub task: TaskConfig,
    pub channel: ChannelConfig,
    pub pricing: PricingConfig,
    pub energy: EnergyConfig,
    pub ux: UxParams,
    pub thresholds: Thresholds,
    pub objective: ObjectiveConfig,
    pub learner: LearnerConfig,
    pub baselines: BaselineConfig,
    pub sweep: SweepConfig,
    pub harness: HarnessConfig,
}

fn positive(key: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::ConfigRange(format!("{key} must be > 0, got {x}")))
    }
}

fn unit_interval(key: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::ConfigRange(format!("{key} must lie in [0, 1], got {x}")))
    }
}

impl ExperimentConfig {
    /// Parse TOML text. Unknown or mistyped keys name their dotted path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| Error::ConfigSchema { key: "<document>".into(), message: e.message().to_string() })?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::ConfigSchema { key, message: e.into_inner().message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Short stable digest of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.clouds == 0 {
            return Err(Error::ConfigRange("counts.clouds must be >= 1".into()));
        }
        let l = &self.learner;
        if !(l.gamma > 0.0 && l.gamma < 1.0) {
            return Err(Error::ConfigRange("gamma out of (0,1)".into()));
        }
        unit_interval("learner.tau", l.tau)?;
        zero_ok("learner.critic_lr", l.critic_lr)?;
        zero_ok("learner.actor_lr", l.actor_lr)?;
        zero_ok("learner.gcn_lr", l.gcn_lr)?;
        if l.batch_size == 0 || l.buffer_capacity == 0 || l.steps_per_episode == 0 || l.update_every == 0 {
            return Err(Error::ConfigRange(
                "learner batch_size, buffer_capacity, steps_per_episode and update_every must be >= 1".into(),
            ));
        }
        if l.hidden.is_empty() || l.hidden.contains(&0) || l.gcn_hidden == 0 || l.gcn_out == 0 {
            return Err(Error::ConfigRange("network widths must be >= 1".into()));
        }
        if self.objective.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::ConfigRange("objective.weights must all be >= 0".into()));
        }
        zero_ok("objective.penalty_coeff", self.objective.penalty_coeff)?;
        positive("objective.utility_scale", self.objective.utility_scale)?;

        let w = &self.world;
        for (key, r) in [
            ("world.speed_kmh", w.speed_kmh),
            ("world.vehicle_tx_power_w", w.vehicle_tx_power_w),
            ("world.vehicle_cpu_hz", w.vehicle_cpu_hz),
            ("world.edge_cpu_hz", w.edge_cpu_hz),
            ("world.cloud_cpu_hz", w.cloud_cpu_hz),
            ("world.edge_tx_power_w", w.edge_tx_power_w),
            ("task.data_mb", self.task.data_mb),
            ("task.total_cycles", self.task.total_cycles),
            ("task.bandwidth_req_hz", self.task.bandwidth_req_hz),
            ("pricing.price_bounds", self.pricing.price_bounds),
            ("pricing.vehicle_satisfaction", self.pricing.vehicle_satisfaction),
        ] {
            r.check(key)?;
            if r.lo() < 0.0 {
                return Err(Error::ConfigRange(format!("{key} must be nonnegative")));
            }
        }
        positive("world.ring_length_m", w.ring_length_m)?;
        positive("world.coverage_radius_m", w.coverage_radius_m)?;
        positive("world.rsu_height_m", w.rsu_height_m)?;
        positive("world.edge_bandwidth_hz", w.edge_bandwidth_hz)?;
        positive("world.cloud_bandwidth_hz", w.cloud_bandwidth_hz)?;
        positive("world.vehicle_cpu_hz", w.vehicle_cpu_hz.lo())?;
        positive("world.edge_cpu_hz", w.edge_cpu_hz.lo())?;
        positive("world.vehicle_tx_power_w", w.vehicle_tx_power_w.lo())?;
        positive("world.edge_tx_power_w", w.edge_tx_power_w.lo())?;
        if w.cloud_servers == 0 {
            return Err(Error::ConfigRange("world.cloud_servers must be >= 1".into()));
        }
        if w.cloud_cpu_hz.lo() < w.edge_cpu_hz.hi() {
            return Err(Error::ConfigRange("world.cloud_cpu_hz must dominate world.edge_cpu_hz".into()));
        }
        if self.task.priority_classes == 0 {
            return Err(Error::ConfigRange("task.priority_classes must be >= 1".into()));
        }
        unit_interval("task.arrival_prob", self.task.arrival_prob)?;

        let c = &self.channel;
        for (key, x) in [
            ("channel.channel_gain", c.channel_gain),
            ("channel.pathloss_exp", c.pathloss_exp),
            ("channel.backhaul_gain", c.backhaul_gain),
            ("channel.backhaul_pathloss_exp", c.backhaul_pathloss_exp),
            ("channel.noise_psd", c.noise_psd),
            ("channel.vehicle_cloud_distance_m", c.vehicle_cloud_distance_m),
            ("channel.edge_cloud_distance_m", c.edge_cloud_distance_m),
            ("channel.backhaul_bandwidth_hz", c.backhaul_bandwidth_hz),
        ] {
            positive(key, x)?;
        }

        let p = &self.pricing;
        if p.grid_points < 2 {
            return Err(Error::ConfigRange("pricing.grid_points must be >= 2".into()));
        }
        positive("pricing.vehicle_satisfaction", p.vehicle_satisfaction.lo())?;
        zero_ok("pricing.edge_satisfaction", p.edge_satisfaction)?;
        zero_ok("pricing.edge_cost", p.edge_cost)?;
        zero_ok("pricing.cloud_cost", p.cloud_cost)?;
        zero_ok("pricing.min_service", p.min_service)?;
        zero_ok("pricing.qos_premium", p.qos_premium)?;
        positive("pricing.cycle_price_scale", p.cycle_price_scale)?;

        self.ux.validate()?;
        self.thresholds.validate()?;

        let ga = &self.baselines.ga;
        if ga.population < 2 || ga.tournament == 0 || ga.fitness_episodes == 0 {
            return Err(Error::ConfigRange(
                "ga.population >= 2, ga.tournament >= 1, ga.fitness_episodes >= 1 required".into(),
            ));
        }
        unit_interval("baselines.ga.crossover_prob", ga.crossover_prob)?;
        unit_interval("baselines.ga.mutation_prob", ga.mutation_prob)?;
        let dq = &self.baselines.madqn;
        if dq.bins < 2 {
            return Err(Error::ConfigRange("baselines.madqn.bins must be >= 2".into()));
        }
        unit_interval("baselines.madqn.epsilon_start", dq.epsilon_start)?;
        unit_interval("baselines.madqn.epsilon_end", dq.epsilon_end)?;
        if self.sweep.episodes == 0 {
            return Err(Error::ConfigRange("sweep.episodes must be >= 1".into()));
        }
        if self.sweep.task_size_mb.iter().any(|x| !(*x >= 0.0))
            || self.sweep.resource_scale.iter().any(|x| !(*x > 0.0))
            || self.sweep.demand.iter().any(|x| !(0.0..=1.0).contains(x))
        {
            return Err(Error::ConfigRange("sweep axis values out of range".into()));
        }
        if self.harness.final_window == 0 {
            return Err(Error::ConfigRange("harness.final_window must be >= 1".into()));
        }
        Ok(())
    }
}

fn zero_ok(key: &str, x: f64) -> Result<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(Error::ConfigRange(format!("{key} must be >= 0, got {x}")))
    }
}

/// Read and validate a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::ConfigMissing(path.to_path_buf())),
        Err(e) => return Err(e.into()),
    };
    ExperimentConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omitted_counts_take_reference_defaults() {
        let cfg = ExperimentConfig::from_toml_str("seed = 3\n").unwrap();
        assert_eq!(cfg.counts, Counts { vehicles: 100, edges: 10, clouds: 3 });
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn omitted_gamma_is_point_nine_five() {
        let cfg = ExperimentConfig::from_toml_str("[learner]\nepisodes = 2\n").unwrap();
        assert_eq!(cfg.learner.gamma, 0.95);
        assert_eq!(cfg.learner.episodes, 2);
        assert_eq!(cfg.learner.buffer_capacity, 100_000);
        assert_eq!(cfg.learner.batch_size, 128);
        assert_eq!(cfg.learner.tau, 1e-3);
    }

    #[test]
    fn gamma_out_of_range_is_rejected() {
        let err = ExperimentConfig::from_toml_str("[learner]\ngamma = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("gamma out of (0,1)"), "{err}");
        assert!(err.is_config());
    }

    #[test]
    fn unknown_key_names_its_path() {
        let err = ExperimentConfig::from_toml_str("[learner]\ngamme = 0.9\n").unwrap_err();
        match err {
            Error::ConfigSchema { key, message } => {
                assert!(key.contains("learner"), "{key}");
                assert!(message.contains("gamme"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mistyped_value_names_its_path() {
        let err = ExperimentConfig::from_toml_str("[counts]\nvehicles = \"ten\"\n").unwrap_err();
        match err {
            Error::ConfigSchema { key, .. } => assert_eq!(key, "counts.vehicles"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inverted_range_is_rejected() {
        let err = ExperimentConfig::from_toml_str("[task]\ndata_mb = [50.0, 10.0]\n").unwrap_err();
        assert!(matches!(err, Error::ConfigRange(_)));
    }

    #[test]
    fn missing_file() {
        let err = load_config("/definitely/not/here.toml").unwrap_err();
        assert!(matches!(err, Error::ConfigMissing(_)));
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }
}
