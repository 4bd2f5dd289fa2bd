use std::sync::Arc;

use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;

use twinmig::env::{Env, RewardVector};
use twinmig::harness::checks::{learner_failures, madqn_chi2, one_hot_mismatch, tiny_config, tol};
use twinmig::learner::checkpoint;
use twinmig::learner::maddpg::{Maddpg, Objective};
use twinmig::learner::madqn::{bin_of, bin_value};
use twinmig::learner::nn::{soft_update, Adam};
use twinmig::learner::replay::{Experience, ReplayBuffer};
use twinmig::learner::{train_loop, NullSink, Policy};
use twinmig::Error;

#[test]
fn battery_passes() {
    let fails = learner_failures(&tiny_config(), 11).unwrap();
    assert!(fails.is_empty(), "{fails:?}");
}

#[test]
fn one_hot_weights_reproduce_the_scalar_learner_for_every_head() {
    let cfg = tiny_config();
    for head in 0..5 {
        assert_eq!(one_hot_mismatch(&cfg, head).unwrap(), None, "head {head}");
    }
}

#[test]
fn zero_learning_rates_freeze_every_parameter() {
    let mut cfg = tiny_config();
    cfg.learner.critic_lr = 0.0;
    cfg.learner.actor_lr = 0.0;
    cfg.learner.gcn_lr = 0.0;
    cfg.learner.tau = 0.0;
    let mut m = Maddpg::new(&cfg, Objective::Multi, 4).unwrap();
    let before = m.clone();
    let mut env = Env::new(&cfg).unwrap();
    train_loop(&mut m, &mut env, 4, 3, &mut NullSink).unwrap();
    assert!(m.steps() > cfg.learner.warmup, "no updates ran");
    for (g, b) in m.groups.iter().zip(&before.groups) {
        assert_eq!(g.actor.params(), b.actor.params());
        for (c, d) in g.critics.iter().zip(&b.critics) {
            assert_eq!(c.params(), d.params());
        }
    }
}

#[test]
fn adam_first_step_moves_by_the_learning_rate() {
    // Bias correction makes the first step exactly lr·g/(|g| + ε).
    let mut p = Array2::from_elem((1, 1), 0.0);
    let mut opt = Adam::new(0.01);
    let g = 2.0 * (p[[0, 0]] - 3.0);
    opt.step(vec![&mut p], &[Array2::from_elem((1, 1), g)]).unwrap();
    assert!((p[[0, 0]] - 0.01 * 6.0 / (6.0 + 1e-8)).abs() < 1e-15);
    for _ in 0..5000 {
        let g = 2.0 * (p[[0, 0]] - 3.0);
        opt.step(vec![&mut p], &[Array2::from_elem((1, 1), g)]).unwrap();
    }
    assert!((p[[0, 0]] - 3.0).abs() < 1e-2, "{}", p[[0, 0]]);
}

#[test]
fn soft_update_decays_geometrically() {
    let tau = 1e-3;
    let online = Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64);
    let start = Array2::from_shape_fn((2, 3), |(i, j)| -((i + j) as f64) - 1.0);
    let mut target = start.clone();
    soft_update(&[&online], vec![&mut target], tau).unwrap();
    for ((t, o), s) in target.iter().zip(&online).zip(&start) {
        assert!((t - (tau * o + (1.0 - tau) * s)).abs() < 1e-15);
    }
    for _ in 1..500 {
        soft_update(&[&online], vec![&mut target], tau).unwrap();
    }
    let decay = (1.0 - tau).powi(500);
    for ((t, o), s) in target.iter().zip(&online).zip(&start) {
        assert!(((t - o) - decay * (s - o)).abs() < 1e-12);
    }
}

fn experience(env: &mut Env, seed: u64, tag: f64) -> Experience {
    let obs = Arc::new(env.reset(seed).unwrap());
    Experience {
        obs: obs.clone(),
        action: vec![tag],
        reward: RewardVector::from_array([tag; 5]),
        next_obs: obs,
        done: false,
    }
}

#[test]
fn replay_overwrites_oldest_first() {
    let mut env = Env::new(&tiny_config()).unwrap();
    let mut buf = ReplayBuffer::new(3);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    assert!(matches!(buf.sample_indices(1, &mut rng), Err(Error::EmptyBatch)));
    for k in 0..5 {
        buf.push(experience(&mut env, 1, k as f64));
    }
    assert_eq!(buf.len(), 3);
    let mut tags: Vec<f64> = (0..3).map(|i| buf.get(i).action[0]).collect();
    tags.sort_by(f64::total_cmp);
    assert_eq!(tags, vec![2.0, 3.0, 4.0]);
    assert!(buf.sample_indices(4, &mut rng).is_err());
    let mut idx = buf.sample_indices(3, &mut rng).unwrap();
    idx.sort();
    assert_eq!(idx, vec![0, 1, 2]);
}

#[test]
fn madqn_explores_uniformly_over_bins() {
    let chi2 = madqn_chi2(&tiny_config(), 2000).unwrap();
    assert!(chi2 < tol::CHI2_DF4, "{chi2}");
}

#[test]
fn checkpoint_roundtrip_preserves_greedy_actions() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt.json");
    let mut m = Maddpg::new(&cfg, Objective::Multi, 8).unwrap();
    let mut env = Env::new(&cfg).unwrap();
    train_loop(&mut m, &mut env, 8, 2, &mut NullSink).unwrap();
    checkpoint::save(&path, &cfg, "mo-maddpg", 8, &m).unwrap();

    let ck = checkpoint::load::<Maddpg>(&path, &cfg, "mo-maddpg").unwrap();
    assert_eq!(ck.seed, 8);
    let mut back = ck.payload;
    back.resume(ck.seed);
    let obs = env.reset(77).unwrap();
    let a = m.act(&obs, false).unwrap();
    let b = back.act(&obs, false).unwrap();
    assert_eq!(a, b);

    assert!(matches!(checkpoint::load::<Maddpg>(&path, &cfg, "maddpg"), Err(Error::Checkpoint(_))));
    let mut other = cfg.clone();
    other.learner.tau = 0.5;
    assert!(matches!(checkpoint::load::<Maddpg>(&path, &other, "mo-maddpg"), Err(Error::Checkpoint(_))));
}

proptest! {
    #[test]
    fn bins_round_trip(bins in 2usize..20, b in 0usize..20) {
        let b = b % bins;
        prop_assert_eq!(bin_of(bin_value(b, bins), bins), b);
    }

    #[test]
    fn bin_of_stays_in_range(x in -5.0..5.0f64, bins in 2usize..20) {
        prop_assert!(bin_of(x, bins) < bins);
    }
}
