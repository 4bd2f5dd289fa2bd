use proptest::prelude::*;

use twinmig::costs::Thresholds;
use twinmig::env::{scalarize, Env, RewardVector};
use twinmig::harness::checks::tiny_config;
use twinmig::learner::{episode_seed, run_episode, NullSink, RandomPolicy};
use twinmig::scenario::ExperimentConfig;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn arbitrary_actions_never_break_routing_invariants(seed in 0u64..1000, raw in proptest::collection::vec(-2.0..3.0f64, 64)) {
        let cfg = tiny_config();
        let mut env = Env::new(&cfg).unwrap();
        env.reset(seed).unwrap();
        let dims = env.layout().act_dims();
        for step in 0..cfg.learner.steps_per_episode {
            let mut k = step;
            let acts: Vec<Vec<f64>> = dims.iter().map(|&d| (0..d).map(|_| { k += 1; raw[k % raw.len()] }).collect()).collect();
            let out = env.step(&acts).unwrap();
            prop_assert_eq!(out.metrics.feasibility.violations(1), 0);
            prop_assert_eq!(out.metrics.feasibility.violations(2), 0);
            prop_assert!(out.reward.to_array().iter().all(|x| x.is_finite()));
            prop_assert!(out.decisions.iter().all(|d| d.flag_count() <= 1));
        }
    }

    #[test]
    fn scalarize_is_a_signed_dot_product(w in proptest::array::uniform5(0.0..1.0f64), r in proptest::array::uniform5(-10.0..10.0f64)) {
        let v = RewardVector::from_array(r);
        let signs = [1.0, 1.0, -1.0, -1.0, -1.0];
        let dot: f64 = (0..5).map(|k| signs[k] * w[k] * r[k]).sum();
        prop_assert!((scalarize(&w, &v) - dot).abs() <= 1e-12 * (1.0 + dot.abs()));
    }
}

#[test]
fn default_world_has_a_hundred_vehicles() {
    let mut cfg = ExperimentConfig::default();
    cfg.learner.steps_per_episode = 1;
    let env = Env::new(&cfg).unwrap();
    assert_eq!(env.world().vehicles.len(), 100);
    assert_eq!(env.layout().vehicles, 100);
}

#[test]
fn loose_thresholds_satisfy_every_qos_constraint() {
    let mut cfg = tiny_config();
    // Config thresholds must be finite: latency doubles as the task deadline.
    cfg.thresholds =
        Thresholds { latency_s: 1e9, energy_j: 1e12, cost: 1e12, ux_min: 0.0, reliability_min: 0.0, quality_min: 0.0 };
    let mut env = Env::new(&cfg).unwrap();
    let mut p = RandomPolicy::new(env.layout(), 2);
    let s = run_episode(&mut env, &mut p, 0, episode_seed(2, 0), false, &mut NullSink).unwrap();
    for c in 5..=10 {
        assert_eq!(s.feasibility.violations(c), 0, "C{c}");
    }
    assert!(s.feasibility.satisfied[4] > 0);
}

#[test]
fn starved_servers_report_capacity_violations() {
    let mut cfg = tiny_config();
    cfg.counts.vehicles = 8;
    cfg.task.arrival_prob = 1.0;
    cfg.world.edge_cpu_hz = twinmig::scenario::Range(1e6, 1e6);
    cfg.world.cloud_cpu_hz = twinmig::scenario::Range(2e6, 2e6);
    let mut env = Env::new(&cfg).unwrap();
    let mut p = RandomPolicy::new(env.layout(), 3);
    let s = run_episode(&mut env, &mut p, 0, episode_seed(3, 0), false, &mut NullSink).unwrap();
    assert!(s.feasibility.violations(3) > 0);
}

#[test]
fn same_seed_same_trajectory() {
    let cfg = tiny_config();
    let run = || {
        let mut env = Env::new(&cfg).unwrap();
        let mut p = RandomPolicy::new(env.layout(), 9);
        run_episode(&mut env, &mut p, 0, 123, false, &mut NullSink).unwrap()
    };
    assert_eq!(run(), run());
}
