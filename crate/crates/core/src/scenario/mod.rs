//! World state: vehicles on a ring highway, roadside edge nodes, cloud
//! servers, the tasks vehicles emit, and the experiment configuration.

mod config;
mod world;

pub use config::{
    load_config, BaselineConfig, ChannelConfig, Counts, EnergyConfig, ExperimentConfig, GaConfig, HarnessConfig,
    LearnerConfig, MadqnConfig, ObjectiveConfig, PricingConfig, Range, SweepConfig, TaskConfig, WorldConfig,
};
pub use world::{
    ring_distance, sample_task, Candidates, CloudServer, EdgeNode, Vehicle, VtStatus, VtTaskProfile, World, BITS_PER_MB,
};
