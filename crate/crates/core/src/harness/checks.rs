//! The verification battery shared by `selftest` and the acceptance target.
//!
//! Each check returns a [`Verdict`]; nothing here panics on a failed
//! comparison, so a run always reports every line.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::experiment::{run_algorithm, run_experiment, sweep_random_policy, RunRequest, SweepAxis};
use super::metrics::read_records;
use crate::costs::{self, EnergyInputs, PricingMode, UxParams};
use crate::env::{scalarize, Env, RewardVector};
use crate::error::Result;
use crate::gcn::{normalized_operator, Activation, Gcn, GcnLayer};
use crate::learner::maddpg::critic_loss;
use crate::learner::nn::{bellman_target, soft_update, Act, Mlp};
use crate::learner::{
    episode_seed, flatten, run_episode, train_loop, Algorithm, Experience, Ga, Learner, Maddpg, Madqn, NullSink,
    Objective, Policy, RandomPolicy,
};
use crate::netlink::{self, LinkParams, QueueState, Route};
use crate::oracle;
use crate::scenario::{ExperimentConfig, VtTaskProfile};
use crate::stackelberg::{self, CloudSpec, EdgeSpec, GameSpec, Leader, VehicleSpec, SE_TOLERANCE};

/// Tolerances, pinned here so every caller agrees on them.
pub mod tol {
    /// Relative error allowed between a closed form and its oracle.
    pub const CLOSED_FORM: f64 = 1e-9;
    /// Relative error allowed between the queue formula and the simulation.
    pub const QUEUE: f64 = 0.05;
    /// Relative error allowed between analytic and finite-difference gradients.
    pub const GRADIENT: f64 = 1e-4;
    /// Finite-difference step.
    pub const FD_STEP: f64 = 1e-4;
    /// Tolerance for structurally exact network outputs.
    pub const EXACT: f64 = 1e-12;
    /// χ² critical value, 4 degrees of freedom, p = 0.001.
    pub const CHI2_DF4: f64 = 18.467;
}

/// Outcome of one criterion.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl Verdict {
    fn new(
        id: u8,
        name: &'static str,
        budget_s: u64,
        started: Instant,
        failures: Vec<String>,
        notes: Vec<String>,
    ) -> Self {
        let elapsed = started.elapsed();
        let budget = Duration::from_secs(budget_s);
        let mut failures = failures;
        if elapsed > budget {
            failures.push(format!("took {:.1}s, budget {}s", elapsed.as_secs_f64(), budget_s));
        }
        let pass = failures.is_empty();
        let mut parts = failures;
        parts.extend(notes);
        Verdict { id, name, pass, detail: parts.join("; "), elapsed, budget }
    }

    pub fn line(&self) -> String {
        format!(
            "{} [{}] {} ({:.1}s/{}s): {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs(),
            self.detail
        )
    }
}

fn check(failures: &mut Vec<String>, ok: bool, what: impl FnOnce() -> String) {
    if !ok {
        failures.push(what());
    }
}

// ---------------------------------------------------------------------------
// 1. Formulas

/// Queue state at which the delay formula is compared with the simulation.
#[derive(Debug, Clone, Copy)]
pub struct QueueProbe {
    pub lambda: f64,
    pub mu: f64,
    pub servers: usize,
    pub class_probs: [f64; 2],
    pub events: u64,
}

impl Default for QueueProbe {
    fn default() -> Self {
        QueueProbe { lambda: 1.6, mu: 1.0, servers: 2, class_probs: [0.5, 0.5], events: 2_000_000 }
    }
}

/// Worst relative gap between the queue formula and the simulated
/// conditional wait, over classes 1..=2 and positions 1..=3.
pub fn queue_gap(probe: &QueueProbe, seed: u64) -> Result<(f64, Vec<String>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let des = oracle::simulate_priority_queue(
        probe.lambda,
        probe.mu,
        probe.servers,
        &probe.class_probs,
        probe.events,
        &mut rng,
    );
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for class in 1..=2usize {
        for pos in 1..=3usize {
            let formula = netlink::queue_delay(&QueueState {
                arrival_rate: probe.lambda,
                service_rate: probe.mu,
                servers: probe.servers,
                queue_length: pos,
                priority_weight: class as f64,
            })?;
            let Some((sim, n)) = des.conditional_wait(class, pos) else {
                rows.push(format!("class {class} pos {pos}: no samples"));
                worst = f64::INFINITY;
                continue;
            };
            let e = oracle::rel_err(formula, sim, 1e-12);
            worst = worst.max(e);
            rows.push(format!("c{class}/k{pos} formula {formula:.3} sim {sim:.3} (n={n})"));
        }
    }
    Ok((worst, rows))
}

fn random_task(rng: &mut ChaCha8Rng) -> VtTaskProfile {
    VtTaskProfile {
        data_volume_bits: rng.gen_range(1e6..5e8),
        compute_demand: rng.gen_range(10.0..1000.0),
        deadline_s: rng.gen_range(0.1..5.0),
        priority_class: rng.gen_range(1..4),
        bandwidth_req_hz: rng.gen_range(1e5..1e7),
    }
}

/// Closed forms against their oracles on `samples` random inputs.
pub fn formula_mismatches(samples: usize, seed: u64) -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    let mut cmp = |what: &str, a: f64, b: f64| {
        let e = oracle::rel_err(a, b, 1e-300);
        if !(e <= tol::CLOSED_FORM) {
            bad.push(format!("{what}: {a} vs {b}"));
        }
    };
    for _ in 0..samples {
        let link = LinkParams {
            bandwidth_hz: rng.gen_range(1e5..1e8),
            tx_power_w: rng.gen_range(0.01..10.0),
            channel_gain: rng.gen_range(0.1..10.0),
            distance_m: rng.gen_range(1.0..5e4),
            pathloss_exp: rng.gen_range(1.5..4.0),
            noise_psd: rng.gen_range(1e-13..1e-7),
        };
        let rate = netlink::shannon_rate(&link)?;
        cmp(
            "shannon_rate",
            rate,
            oracle::shannon_rate(
                link.bandwidth_hz,
                link.tx_power_w,
                link.channel_gain,
                link.distance_m,
                link.pathloss_exp,
                link.noise_psd,
            ),
        );
        let task = random_task(&mut rng);
        let cycles = task.compute_demand * task.data_volume_bits;
        cmp("tx_latency", netlink::tx_latency(&task, rate)?, oracle::tx_latency(task.data_volume_bits, rate));
        let f = rng.gen_range(1e9..4e10);
        cmp(
            "exec_latency",
            netlink::exec_latency(&task, f)?,
            oracle::exec_latency(task.compute_demand, task.data_volume_bits, f),
        );
        cmp(
            "reinstantiation",
            netlink::reinstantiation_delay(&task, f)?,
            oracle::exec_latency(task.compute_demand, task.data_volume_bits, f),
        );

        let servers = rng.gen_range(1..6usize);
        let mu = rng.gen_range(0.5..5.0);
        let lambda = rng.gen_range(0.0..0.99) * servers as f64 * mu;
        let waiting = rng.gen_range(1..20usize);
        let rho = rng.gen_range(1..4) as f64;
        let q =
            QueueState { arrival_rate: lambda, service_rate: mu, servers, queue_length: waiting, priority_weight: rho };
        cmp(
            "queue_delay",
            netlink::queue_delay(&q)?,
            oracle::queue_delay(rho, waiting as f64, lambda, mu, servers as f64),
        );

        let x = EnergyInputs {
            vehicle_tx_power_w: rng.gen_range(0.1..2.0),
            uplink_rate: rng.gen_range(1e6..1e8),
            edge_tx_power_w: rng.gen_range(1.0..20.0),
            backhaul_rate: rng.gen_range(1e7..1e9),
            edge_capacitance: rng.gen_range(1e-28..1e-26),
            edge_cpu_hz: rng.gen_range(1e9..1e10),
            cloud_capacitance: rng.gen_range(1e-28..1e-26),
            cloud_cpu_hz: rng.gen_range(1e10..4e10),
            times_cycles: rng.gen_bool(0.5),
        };
        let edge = (x.edge_capacitance, x.edge_cpu_hz);
        let cloud = (x.cloud_capacitance, x.cloud_cpu_hz);
        let hops = |source_exec, backhaul, dest_exec| oracle::EnergyHops {
            bits: task.data_volume_bits,
            cycles,
            uplink: (x.vehicle_tx_power_w, x.uplink_rate),
            source_exec,
            backhaul,
            dest_exec,
            times_cycles: x.times_cycles,
        };
        let routes = [
            (Route::ToEdge { edge: 0 }, hops(Some(edge), None, None)),
            (Route::ToCloud { cloud: 0 }, hops(None, None, Some(cloud))),
            (
                Route::EdgeToCloud { edge: 0, cloud: 0 },
                hops(Some(edge), Some((x.edge_tx_power_w, x.backhaul_rate)), Some(cloud)),
            ),
        ];
        for (route, h) in routes {
            cmp("energy", costs::energy(Some(route), &task, &x)?.total, oracle::energy(&h));
        }

        let price = rng.gen_range(0.0..10.0);
        cmp(
            "migration_cost/mb",
            costs::migration_cost(&task, price, PricingMode::PerMb)?,
            oracle::migration_cost(task.data_volume_bits / 8e6, price),
        );
        cmp(
            "migration_cost/cycle",
            costs::migration_cost(&task, price, PricingMode::PerCycle)?,
            oracle::migration_cost(cycles, price),
        );

        let w: [f64; 3] = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let s: f64 = w.iter().sum();
        let p = UxParams {
            w_l: w[0] / s,
            w_q: w[1] / s,
            w_r: 1.0 - w[0] / s - w[1] / s,
            a_l: rng.gen_range(0.5..2.0),
            b_l: rng.gen_range(0.1..3.0),
            a_q: rng.gen_range(0.5..2.0),
            b_q: rng.gen_range(0.1..3.0),
            a_r: rng.gen_range(0.5..2.0),
            b_r: rng.gen_range(0.1..3.0),
        };
        let (l, qv, r) = (rng.gen_range(0.0..10.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let shape =
            oracle::UxShape { weights: [p.w_l, p.w_q, p.w_r], a: [p.a_l, p.a_q, p.a_r], b: [p.b_l, p.b_q, p.b_r] };
        cmp("ux_rating", costs::ux_rating(l, qv, r, &p)?, oracle::ux_rating(l, qv, r, &shape));
    }
    Ok(bad)
}

pub fn criterion_formulas(probe: &QueueProbe) -> Verdict {
    let t = Instant::now();
    let mut fails = Vec::new();
    let mut notes = Vec::new();
    match formula_mismatches(200, 11) {
        Ok(bad) => {
            check(&mut fails, bad.is_empty(), || format!("{} closed-form mismatches, first: {}", bad.len(), bad[0]));
            notes.push("closed forms agree on 200 draws".into());
        }
        Err(e) => fails.push(format!("closed forms errored: {e}")),
    }
    match queue_gap(probe, 12) {
        Ok((worst, rows)) => {
            check(&mut fails, worst <= tol::QUEUE, || {
                format!("queue delay off by {:.0}% vs simulation", 100.0 * worst)
            });
            notes.push(format!("{} events: {}", probe.events, rows.join(", ")));
        }
        Err(e) => fails.push(format!("queue check errored: {e}")),
    }
    Verdict::new(1, "formula oracles", 120, t, fails, notes)
}

// ---------------------------------------------------------------------------
// 2. Graph convolution

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
}

fn random_gcn(rng: &mut ChaCha8Rng, input: usize, hidden: usize, out: usize) -> Gcn {
    Gcn::new(vec![
        GcnLayer::init(input, hidden, Activation::Relu, rng),
        GcnLayer::init(hidden, out, Activation::Identity, rng),
    ])
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn dense_mlp(x: &Array2<f64>, w1: &Array2<f64>, w2: &Array2<f64>) -> Array2<f64> {
    // Row-wise reference: relu(x·W1)·W2 with explicit loops.
    let (n, h, o) = (x.nrows(), w1.ncols(), w2.ncols());
    let mut out = Array2::zeros((n, o));
    for r in 0..n {
        let mut hid = vec![0.0; h];
        for (j, v) in hid.iter_mut().enumerate() {
            for k in 0..x.ncols() {
                *v += x[[r, k]] * w1[[k, j]];
            }
            *v = v.max(0.0);
        }
        for c in 0..o {
            for (j, v) in hid.iter().enumerate() {
                out[[r, c]] += v * w2[[j, c]];
            }
        }
    }
    out
}

pub fn gcn_failures(graphs: usize, seed: u64) -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fails = Vec::new();

    // One node: Â = [1], so the layer stack is a plain two-layer perceptron.
    let g = random_gcn(&mut rng, 5, 6, 3);
    let h = random_matrix(&mut rng, 1, 5);
    let (out, _) = g.forward_op(&h, &normalized_operator(&Array2::zeros((1, 1))))?;
    let want = dense_mlp(&h, &g.layers[0].weight, &g.layers[1].weight);
    check(&mut fails, max_abs(&out, &want) <= tol::EXACT, || "single node differs from the dense reference".into());

    // Two linked nodes: Â = ½·ones, every layer averages the pair.
    let h = random_matrix(&mut rng, 2, 5);
    let adj = Array2::from_shape_vec((2, 2), vec![0.0, 1.0, 1.0, 0.0]).expect("2x2");
    let (out, _) = g.forward_op(&h, &normalized_operator(&adj))?;
    let mean = (&h.row(0) + &h.row(1)).mapv(|x| x / 2.0).insert_axis(ndarray::Axis(0));
    let hid = mean.dot(&g.layers[0].weight).mapv(|x: f64| x.max(0.0));
    let row = hid.dot(&g.layers[1].weight);
    let want = ndarray::concatenate![ndarray::Axis(0), row, row];
    check(&mut fails, max_abs(&out, &want) <= tol::EXACT, || "linked pair differs from the averaged reference".into());

    for k in 0..graphs {
        let n = rng.gen_range(1..=8usize);
        let mut adj = Array2::zeros((n, n));
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(0.4) {
                    adj[[i, j]] = 1.0;
                    adj[[j, i]] = 1.0;
                }
            }
        }
        let h = random_matrix(&mut rng, n, 5);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let p_adj = Array2::from_shape_fn((n, n), |(i, j)| adj[[perm[i], perm[j]]]);
        let p_h = Array2::from_shape_fn((n, 5), |(i, c)| h[[perm[i], c]]);
        let (out, cache) = g.forward_op(&h, &normalized_operator(&adj))?;
        let (p_out, _) = g.forward_op(&p_h, &normalized_operator(&p_adj))?;
        let want = Array2::from_shape_fn(out.dim(), |(i, c)| out[[perm[i], c]]);
        check(&mut fails, max_abs(&p_out, &want) <= 1e-10, || format!("graph {k}: not permutation equivariant"));

        // Finite differences of L = Σ out ⊙ U with respect to every weight.
        let u = random_matrix(&mut rng, n, 3);
        let (grads, _) = g.backward_cache(&cache, &u)?;
        let op = normalized_operator(&adj);
        for l in 0..g.layers.len() {
            let w0 = g.layers[l].weight.clone();
            let mut probe = g.clone();
            let mut loss = |flat: &[f64]| {
                probe.layers[l].weight = Array2::from_shape_vec(w0.dim(), flat.to_vec()).expect("same shape");
                let (o, _) = probe.forward_op(&h, &op).expect("valid shapes");
                (&o * &u).sum()
            };
            let fd = oracle::finite_difference(&mut loss, w0.as_slice().expect("contiguous"), tol::FD_STEP);
            for (a, b) in grads[l].iter().zip(&fd) {
                if oracle::rel_err(*a, *b, 1e-6) > tol::GRADIENT {
                    fails.push(format!("graph {k} layer {l}: gradient {a} vs finite difference {b}"));
                    break;
                }
            }
        }
    }
    Ok(fails)
}

pub fn criterion_gcn() -> Verdict {
    let t = Instant::now();
    let fails = gcn_failures(20, 21).unwrap_or_else(|e| vec![format!("errored: {e}")]);
    Verdict::new(
        2,
        "graph convolution",
        60,
        t,
        fails,
        vec!["1/2-node exact, 20 permuted graphs, finite differences".into()],
    )
}

// ---------------------------------------------------------------------------
// 3. Pricing game

/// A random vehicle → edge → cloud chain.
pub fn random_chain_spec(rng: &mut ChaCha8Rng) -> GameSpec {
    GameSpec {
        vehicles: vec![VehicleSpec { satisfaction: rng.gen_range(2.0..10.0), leader: Some(Leader::Edge(0)) }],
        edges: vec![EdgeSpec {
            cost: rng.gen_range(0.1..1.0),
            capacity: rng.gen_range(5.0..20.0),
            satisfaction: rng.gen_range(2.0..10.0),
            cloud: 0,
        }],
        clouds: vec![CloudSpec { cost: rng.gen_range(0.1..1.0), capacity: rng.gen_range(5.0..20.0) }],
        min_service: 0.0,
        price_lo: 0.1,
        price_hi: 12.0,
        grid_points: 200,
    }
}

/// Exhaustive search over (edge price, cloud price) pairs for a pair where
/// neither leader gains by moving on the grid. Returns the first such pair.
pub fn grid_equilibrium(spec: &GameSpec, points: usize) -> Option<(f64, f64)> {
    let grid: Vec<f64> =
        (0..points).map(|k| spec.price_lo + (spec.price_hi - spec.price_lo) * k as f64 / (points - 1) as f64).collect();
    let buy = |eta: f64, theta: f64, cap: f64| (eta / theta - 1.0).clamp(0.0, cap);
    let e = &spec.edges[0];
    let c = &spec.clouds[0];
    let eta_v = spec.vehicles[0].satisfaction;
    // Profits over the full pair grid; each leader's payoff may depend on both prices.
    let edge_profit = |te: f64, _tc: f64| (te - e.cost) * buy(eta_v, te, e.capacity);
    let cloud_profit = |_te: f64, tc: f64| (tc - c.cost) * buy(e.satisfaction, tc, c.capacity);
    for &te in &grid {
        for &tc in &grid {
            let pe = edge_profit(te, tc);
            let pc = cloud_profit(te, tc);
            let edge_ok = grid.iter().all(|&d| edge_profit(d, tc) <= pe + 1e-12);
            let cloud_ok = grid.iter().all(|&d| cloud_profit(te, d) <= pc + 1e-12);
            if edge_ok && cloud_ok {
                return Some((te, tc));
            }
        }
    }
    None
}

pub fn game_failures(specs: usize, seed: u64) -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fails = Vec::new();
    let points = 400;
    for k in 0..specs {
        let spec = random_chain_spec(&mut rng);
        let step = (spec.price_hi - spec.price_lo) / (points - 1) as f64;
        let o = stackelberg::backward_induction(&spec)?;
        match grid_equilibrium(&spec, points) {
            None => fails.push(format!("spec {k}: grid search found no equilibrium")),
            Some((te, tc)) => {
                let (ge, gc) = (o.edge_price[0], o.cloud_price[0]);
                if (ge - te).abs() > step + 1e-12 || (gc - tc).abs() > step + 1e-12 {
                    fails.push(format!("spec {k}: solved ({ge:.4}, {gc:.4}) vs grid ({te:.4}, {tc:.4})"));
                }
            }
        }
        let r = stackelberg::verify_se(&o, &spec, step);
        if r.worst_gain > SE_TOLERANCE {
            fails.push(format!("spec {k}: {:?} gains {:.3e} by deviating", r.worst_player, r.worst_gain));
        }
    }
    Ok(fails)
}

pub fn criterion_game() -> Verdict {
    let t = Instant::now();
    let fails = game_failures(20, 31).unwrap_or_else(|e| vec![format!("errored: {e}")]);
    Verdict::new(3, "pricing equilibrium", 120, t, fails, vec!["20 chains vs 400-point pair grid".into()])
}

// ---------------------------------------------------------------------------
// 4. Learner mechanics

/// Small configuration for mechanics checks.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig { seed: 3, ..Default::default() };
    cfg.counts.vehicles = 3;
    cfg.counts.edges = 2;
    cfg.counts.clouds = 1;
    let l = &mut cfg.learner;
    l.episodes = 4;
    l.steps_per_episode = 10;
    l.warmup = 16;
    l.batch_size = 8;
    l.hidden = vec![16, 16];
    l.buffer_capacity = 1000;
    cfg.baselines.ga.population = 6;
    cfg.baselines.ga.generations = 3;
    cfg.sweep.episodes = 2;
    cfg.harness.final_window = 2;
    cfg
}

fn critic_failures(rng: &mut ChaCha8Rng) -> Result<Vec<String>> {
    let mut fails = Vec::new();
    let critics: Vec<Mlp> = (0..5).map(|_| Mlp::init(&[4, 8, 1], Act::Relu, Act::Identity, rng)).collect();
    let x = random_matrix(rng, 6, 4);
    let q: Vec<Array2<f64>> = critics.iter().map(|c| c.predict(&x)).collect::<Result<_>>()?;

    let unit = Array2::from_shape_fn((6, 5), |(b, k)| q[k][[b, 0]] + if b % 2 == 0 { 1.0 } else { -1.0 });
    let (l, _, _, _) = critic_loss(&critics, &x, &unit)?;
    check(&mut fails, (l - 1.0).abs() <= tol::EXACT, || format!("unit TD error gives loss {l}"));

    let zero = Array2::from_shape_fn((6, 5), |(b, k)| q[k][[b, 0]]);
    let (l, _, g, _) = critic_loss(&critics, &x, &zero)?;
    check(&mut fails, l == 0.0 && g.iter().all(|g| g.norm_sq() == 0.0), || {
        "zero TD error has nonzero loss or gradient".into()
    });

    let y = random_matrix(rng, 6, 5);
    let (l, _, _, _) = critic_loss(&critics, &x, &y)?;
    let mut sum = 0.0;
    for (k, c) in critics.iter().enumerate() {
        let mut head = 0.0;
        for b in 0..6 {
            let row = x.row(b).to_owned().insert_axis(ndarray::Axis(0));
            let d = c.predict(&row)?[[0, 0]] - y[[b, k]];
            head += d * d;
        }
        sum += head / 6.0;
    }
    check(&mut fails, oracle::rel_err(l, sum / 5.0, 1e-12) <= 1e-12, || {
        format!("batch loss {l} vs loop {}", sum / 5.0)
    });

    let b = bellman_target(1.0, 0.95, 2.0, false);
    check(&mut fails, (b - 2.9).abs() <= tol::EXACT, || format!("bellman target {b}"));
    check(&mut fails, bellman_target(1.0, 0.95, 2.0, true) == 1.0, || "terminal target is not the reward".into());

    let online = random_matrix(rng, 3, 4);
    let mut target = random_matrix(rng, 3, 4);
    let before = target.clone();
    soft_update(&[&online], vec![&mut target], 0.0)?;
    check(&mut fails, target == before, || "tau = 0 moved the target".into());
    soft_update(&[&online], vec![&mut target], 1.0)?;
    check(&mut fails, target == online, || "tau = 1 did not copy".into());
    let mut target = before.clone();
    let d0 = (&target - &online).mapv(|x| x * x).sum().sqrt();
    for _ in 0..10 {
        soft_update(&[&online], vec![&mut target], 0.1)?;
    }
    let d10 = (&target - &online).mapv(|x| x * x).sum().sqrt();
    check(&mut fails, oracle::rel_err(d10, d0 * 0.9f64.powi(10), 1e-12) <= 1e-9, || {
        format!("decay {d10} vs {}", d0 * 0.9f64.powi(10))
    });
    let mut wrong = Array2::zeros((2, 2));
    check(&mut fails, soft_update(&[&online], vec![&mut wrong], 0.5).is_err(), || "shape mismatch accepted".into());
    Ok(fails)
}

/// Train MO (one-hot ω) and scalar actor-critics side by side and compare
/// the matching critic head bit for bit.
pub fn one_hot_mismatch(cfg: &ExperimentConfig, head: usize) -> Result<Option<String>> {
    let mut cfg = cfg.clone();
    cfg.objective.weights = [0.0; 5];
    cfg.objective.weights[head] = 1.0;
    cfg.learner.train_gcn = false;
    let mut mo = Maddpg::new(&cfg, Objective::Multi, cfg.seed)?;
    let mut sc = Maddpg::new(&cfg, Objective::Scalar, cfg.seed)?;
    let mut env_a = Env::new(&cfg)?;
    let mut env_b = Env::new(&cfg)?;
    let mut updates = 0;
    for e in 0..cfg.learner.episodes {
        let s = episode_seed(cfg.seed, e);
        let mut oa = std::sync::Arc::new(env_a.reset(s)?);
        let mut ob = std::sync::Arc::new(env_b.reset(s)?);
        loop {
            let aa = mo.act(&oa, true)?;
            let ab = sc.act(&ob, true)?;
            if flatten(&aa).iter().map(|x| x.to_bits()).ne(flatten(&ab).iter().map(|x| x.to_bits())) {
                return Ok(Some(format!("actions diverged in episode {e}")));
            }
            let ra = env_a.step(&aa)?;
            let rb = env_b.step(&ab)?;
            let na = std::sync::Arc::new(ra.obs);
            let nb = std::sync::Arc::new(rb.obs);
            let ua = mo.observe(Experience {
                obs: oa,
                action: flatten(&aa),
                reward: ra.reward,
                next_obs: na.clone(),
                done: ra.done,
            })?;
            let ub = sc.observe(Experience {
                obs: ob,
                action: flatten(&ab),
                reward: rb.reward,
                next_obs: nb.clone(),
                done: rb.done,
            })?;
            match (ua, ub) {
                (Some(a), Some(b)) => {
                    updates += 1;
                    if a.head_losses[head].to_bits() != b.head_losses[0].to_bits() {
                        return Ok(Some(format!(
                            "update {updates}: head loss {} vs {}",
                            a.head_losses[head], b.head_losses[0]
                        )));
                    }
                }
                (None, None) => {}
                _ => return Ok(Some("update schedules differ".into())),
            }
            oa = na;
            ob = nb;
            if ra.done {
                break;
            }
        }
    }
    if updates == 0 {
        return Ok(Some("no updates ran".into()));
    }
    Ok(None)
}

fn actor_frozen_at_zero_weights(cfg: &ExperimentConfig) -> Result<bool> {
    let mut cfg = cfg.clone();
    cfg.learner.train_gcn = false;
    let mut m = Maddpg::new(&cfg, Objective::Multi, cfg.seed)?;
    m.weights = [0.0; 5];
    let before: Vec<Mlp> = m.groups.iter().map(|g| g.actor.clone()).collect();
    let mut env = Env::new(&cfg)?;
    train_loop(&mut m, &mut env, cfg.seed, 3, &mut NullSink)?;
    Ok(m.groups.iter().zip(&before).all(|(g, b)| g.actor.params() == b.params()))
}

/// χ² statistic of the bins MADQN picks at ε = 1.
pub fn madqn_chi2(cfg: &ExperimentConfig, draws: usize) -> Result<f64> {
    let mut m = Madqn::new(cfg, cfg.seed)?;
    let mut env = Env::new(cfg)?;
    let obs = env.reset(cfg.seed)?;
    let bins = cfg.baselines.madqn.bins;
    let mut counts = vec![0usize; bins];
    for _ in 0..draws {
        for x in m.act(&obs, true)?.into_iter().flatten() {
            counts[crate::learner::madqn::bin_of(x, bins)] += 1;
        }
    }
    let n: usize = counts.iter().sum();
    let expect = n as f64 / bins as f64;
    Ok(counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum())
}

pub fn learner_failures(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fails = critic_failures(&mut rng)?;
    for head in [0, 2] {
        if let Some(m) = one_hot_mismatch(cfg, head)? {
            fails.push(format!("one-hot head {head}: {m}"));
        }
    }
    check(&mut fails, actor_frozen_at_zero_weights(cfg)?, || "actor moved with all weights zero".into());

    let chi2 = madqn_chi2(cfg, 400)?;
    check(&mut fails, chi2 < tol::CHI2_DF4, || format!("MADQN exploration chi2 {chi2:.2}"));

    let mut ga_cfg = cfg.clone();
    ga_cfg.baselines.ga.mutation_prob = 0.0;
    let mut ga = Ga::new(&ga_cfg, ga_cfg.seed)?;
    let one = ga.population()[0].clone();
    ga.set_population(vec![one; ga_cfg.baselines.ga.population])?;
    let mut env = Env::new(&ga_cfg)?;
    let mut gens = Vec::new();
    ga.run(&mut env, |g| gens.push(*g))?;
    let f0 = gens[0].best;
    check(&mut fails, gens.iter().all(|g| g.best == f0 && oracle::rel_err(g.mean, f0, 1e-12) <= tol::EXACT), || {
        "GA fitness moved without mutation".into()
    });

    let mut small = cfg.clone();
    small.learner.episodes = 1;
    small.learner.steps_per_episode = 2;
    let mut m = Maddpg::new(&small, Objective::Multi, small.seed)?;
    let mut env = Env::new(&small)?;
    train_loop(&mut m, &mut env, small.seed, 1, &mut NullSink)?;
    let len = m.replay().map_or(0, |r| r.len());
    check(&mut fails, len == 2, || format!("buffer holds {len} after a 2-step episode"));
    Ok(fails)
}

pub fn criterion_learner() -> Verdict {
    let t = Instant::now();
    let fails = learner_failures(&tiny_config(), 41).unwrap_or_else(|e| vec![format!("errored: {e}")]);
    Verdict::new(4, "learner mechanics", 180, t, fails, vec!["critic/target/soft-update/one-hot/baselines".into()])
}

// ---------------------------------------------------------------------------
// 5. Harness

fn scratch_dir(tag: &str) -> PathBuf {
    let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_nanos());
    std::env::temp_dir().join(format!("twinmig-{tag}-{}-{nanos}", std::process::id()))
}

fn run_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if name != "meta.json" {
            out.push((name, std::fs::read(&p)?));
        }
    }
    out.sort();
    Ok(out)
}

/// Check every step row: the logged scalar equals the scalarized logged vector.
pub fn scalarize_mismatches(csv: &Path, weights: &[f64; 5]) -> Result<usize> {
    use std::collections::BTreeMap;
    let mut steps: BTreeMap<(u64, usize, usize), BTreeMap<String, f64>> = BTreeMap::new();
    for r in read_records(csv)? {
        if let Some(s) = r.step {
            steps.entry((r.seed, r.episode, s)).or_default().insert(r.metric, r.value);
        }
    }
    let mut bad = 0;
    for m in steps.values() {
        let v = RewardVector::from_array(["r_ux", "r_util", "r_lat", "r_en", "r_cost"].map(|k| m[k]));
        if scalarize(weights, &v).to_bits() != m["reward"].to_bits() {
            bad += 1;
        }
    }
    Ok(bad)
}

pub fn harness_failures(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let mut fails = Vec::new();
    let dirs = [scratch_dir("a"), scratch_dir("b")];
    for d in &dirs {
        run_experiment(&RunRequest {
            cfg: cfg.clone(),
            algorithms: Algorithm::ALL.to_vec(),
            seeds: vec![1, 2],
            out_dir: d.clone(),
            run_id: "replay".into(),
            save_checkpoints: false,
        })?;
    }
    let a = run_files(&dirs[0].join("replay"))?;
    let b = run_files(&dirs[1].join("replay"))?;
    check(&mut fails, a == b, || "rerun is not byte-identical".into());
    let bad = scalarize_mismatches(&dirs[0].join("replay").join("mo-maddpg.csv"), &cfg.objective.weights)?;
    check(&mut fails, bad == 0, || format!("{bad} step rows do not rescalarize exactly"));
    for d in &dirs {
        let _ = std::fs::remove_dir_all(d);
    }

    let mut env_cfg = cfg.clone();
    env_cfg.learner.steps_per_episode = 50;
    let mut env = Env::new(&env_cfg)?;
    let mut policy = RandomPolicy::new(env.layout(), 5);
    let (mut c1, mut c2, mut ch) = (0, 0, 0);
    for e in 0..10 {
        let s = run_episode(&mut env, &mut policy, e, episode_seed(5, e), false, &mut NullSink)?;
        c1 += s.feasibility.violations(1);
        c2 += s.feasibility.violations(2);
        ch += s.channel_violations;
    }
    check(&mut fails, c1 + c2 + ch == 0, || format!("random episodes violate C1 {c1}, C2 {c2}, channel {ch}"));
    Ok(fails)
}

pub fn criterion_harness() -> Verdict {
    let t = Instant::now();
    let fails = harness_failures(&tiny_config()).unwrap_or_else(|e| vec![format!("errored: {e}")]);
    Verdict::new(
        5,
        "replay and bookkeeping",
        120,
        t,
        fails,
        vec!["4 algorithms x 2 seeds rerun, 10 random episodes".into()],
    )
}

// ---------------------------------------------------------------------------
// 6. Directional learning

/// Per-seed outcome of the learning comparison.
#[derive(Debug, Clone)]
pub struct LearningSeed {
    pub seed: u64,
    pub mo_final: f64,
    pub ga_final: f64,
    pub ma_first: f64,
    pub ma_last: f64,
    pub ma_slope: f64,
}

impl LearningSeed {
    pub fn beats_ga(&self) -> bool {
        self.mo_final > self.ga_final
    }

    /// The moving average trends upward: nonnegative fitted slope and no net loss.
    pub fn trends_up(&self) -> bool {
        self.ma_slope >= 0.0 && self.ma_last >= self.ma_first
    }
}

pub fn learning_seed(cfg: &ExperimentConfig, seed: u64) -> Result<LearningSeed> {
    let window = cfg.harness.final_window;
    let (mo, _) = run_algorithm(cfg, Algorithm::MoMaddpg, seed, &mut NullSink)?;
    let (ga, _) = run_algorithm(cfg, Algorithm::Ga, seed, &mut NullSink)?;
    let rewards: Vec<f64> = mo.iter().map(|s| s.reward).collect();
    let tail = &rewards[rewards.len().saturating_sub(window)..];
    let ma = oracle::moving_average(&rewards, window);
    Ok(LearningSeed {
        seed,
        mo_final: tail.iter().sum::<f64>() / tail.len() as f64,
        ga_final: ga.iter().map(|s| s.reward).sum::<f64>() / ga.len() as f64,
        ma_first: ma.first().copied().unwrap_or(f64::NAN),
        ma_last: ma.last().copied().unwrap_or(f64::NAN),
        ma_slope: oracle::slope(&ma),
    })
}

pub fn criterion_learning(cfg: &ExperimentConfig, seeds: &[u64]) -> Verdict {
    let t = Instant::now();
    let mut fails = Vec::new();
    let mut notes = Vec::new();
    for &s in seeds {
        match learning_seed(cfg, s) {
            Ok(r) => {
                check(&mut fails, r.beats_ga(), || {
                    format!("seed {s}: MO-MADDPG {:.2} <= GA {:.2}", r.mo_final, r.ga_final)
                });
                check(&mut fails, r.trends_up(), || {
                    format!("seed {s}: moving average {:.2} -> {:.2}, slope {:.4}", r.ma_first, r.ma_last, r.ma_slope)
                });
                notes.push(format!(
                    "seed {s}: MO {:.2} GA {:.2} MA {:.2}->{:.2}",
                    r.mo_final, r.ga_final, r.ma_first, r.ma_last
                ));
            }
            Err(e) => fails.push(format!("seed {s} errored: {e}")),
        }
    }
    Verdict::new(6, "directional learning", 1800, t, fails, notes)
}

// ---------------------------------------------------------------------------
// 7. Sweep

pub fn sweep_failures(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    let mut fails = Vec::new();
    let mut notes = Vec::new();
    let points = sweep_random_policy(cfg, SweepAxis::TaskSize, seed)?;
    let mean = |xs: &[crate::learner::EpisodeStats], f: fn(&crate::learner::EpisodeStats) -> f64| {
        xs.iter().map(f).sum::<f64>() / xs.len() as f64
    };
    let energy: Vec<f64> = points.iter().map(|(_, s)| mean(s, |e| e.energy)).collect();
    let latency: Vec<f64> = points.iter().map(|(_, s)| mean(s, |e| e.latency)).collect();
    for (name, ys) in [("energy", &energy), ("latency", &latency)] {
        check(&mut fails, ys.windows(2).all(|w| w[1] >= w[0]), || format!("{name} not monotone: {ys:?}"));
        notes.push(format!("{name} {}", ys.iter().map(|y| format!("{y:.4}")).collect::<Vec<_>>().join(" <= ")));
    }
    Ok((fails, notes))
}

pub fn criterion_sweep(cfg: &ExperimentConfig) -> Verdict {
    let t = Instant::now();
    let (fails, notes) = sweep_failures(cfg, cfg.seed).unwrap_or_else(|e| (vec![format!("errored: {e}")], Vec::new()));
    Verdict::new(7, "task-size sweep", 300, t, fails, notes)
}
