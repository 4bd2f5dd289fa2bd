use proptest::prelude::*;
use rand::SeedableRng;

use twinmig::costs::{self, EnergyInputs, UxParams};
use twinmig::harness::checks::{formula_mismatches, queue_gap, QueueProbe};
use twinmig::netlink::{self, LinkParams, QueueState, Route};
use twinmig::oracle;
use twinmig::scenario::VtTaskProfile;

#[test]
fn closed_forms_match_oracles_on_random_inputs() {
    for seed in [1, 2, 3] {
        let bad = formula_mismatches(100, seed).unwrap();
        assert!(bad.is_empty(), "{bad:?}");
    }
}

#[test]
fn rate_with_doubled_distance() {
    // δk/N0 = 3 at d = 1 and ε = 2, so doubling d quarters the SNR term.
    let p = LinkParams {
        bandwidth_hz: 20e6,
        tx_power_w: 3.0,
        channel_gain: 1.0,
        distance_m: 2.0,
        pathloss_exp: 2.0,
        noise_psd: 1.0,
    };
    let r = netlink::shannon_rate(&p).unwrap();
    assert!((r - 20e6 * 1.75f64.log2()).abs() < 1e-6);
    assert!((r - 1.615e7).abs() / 1.615e7 < 1e-3);
    let task = VtTaskProfile::from_totals(4e8, 0.0, 1.0);
    let t = netlink::tx_latency(&task, 1.615e7).unwrap();
    assert!((t - 24.77).abs() < 0.01, "{t}");
}

#[test]
fn queue_example_value() {
    let q = QueueState { arrival_rate: 2.0, service_rate: 1.0, servers: 4, queue_length: 4, priority_weight: 1.0 };
    assert_eq!(netlink::queue_delay(&q).unwrap(), 2.0);
}

#[test]
fn simulated_head_of_line_wait_is_one_over_s_mu() {
    // A top-class arrival with nobody ahead waits for the first of s busy
    // servers to finish: Exp(sμ), mean 1/(sμ). This pins the simulation
    // itself, independently of the closed form it is compared with.
    let probe = QueueProbe { events: 1_000_000, ..QueueProbe::default() };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let des = oracle::simulate_priority_queue(
        probe.lambda,
        probe.mu,
        probe.servers,
        &probe.class_probs,
        probe.events,
        &mut rng,
    );
    let (w, n) = des.conditional_wait(1, 1).unwrap();
    assert!(n > 10_000);
    assert!((w - 0.5).abs() < 0.02, "{w}");
    let (w2, _) = des.conditional_wait(1, 2).unwrap();
    assert!((w2 - 1.0).abs() < 0.04, "{w2}");
}

#[test]
fn queue_gap_reports_every_probe_point() {
    let probe = QueueProbe { events: 200_000, ..QueueProbe::default() };
    let (worst, rows) = queue_gap(&probe, 5).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(worst.is_finite());
}

fn inputs() -> impl Strategy<Value = (f64, f64, f64, f64, f64, f64)> {
    (1e6..1e9f64, 1e6..1e8f64, 0.1..2.0f64, 1e9..1e10f64, 1e-28..1e-26f64, 1e10..4e10f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn energy_components_are_nonnegative_and_add_up((bits, rate, power, fe, kappa, fc) in inputs(), omega in 1.0..100.0f64) {
        let task = VtTaskProfile { data_volume_bits: bits, compute_demand: omega, deadline_s: 1.0, priority_class: 1, bandwidth_req_hz: 0.0 };
        let x = EnergyInputs {
            vehicle_tx_power_w: power,
            uplink_rate: rate,
            edge_tx_power_w: 10.0,
            backhaul_rate: 10.0 * rate,
            edge_capacitance: kappa,
            edge_cpu_hz: fe,
            cloud_capacitance: kappa,
            cloud_cpu_hz: fc,
            times_cycles: false,
        };
        for route in [Route::ToEdge { edge: 0 }, Route::ToCloud { cloud: 0 }, Route::EdgeToCloud { edge: 0, cloud: 0 }] {
            let b = costs::energy(Some(route), &task, &x).unwrap();
            prop_assert!(b.upload_j >= 0.0 && b.exec_src >= 0.0 && b.migrate >= 0.0 && b.exec_dst >= 0.0);
            prop_assert_eq!(b.total, b.upload_j + b.exec_src + b.migrate + b.exec_dst);
        }
        let direct = costs::energy(Some(Route::ToEdge { edge: 0 }), &task, &x).unwrap().total;
        let relayed = costs::energy(Some(Route::EdgeToCloud { edge: 0, cloud: 0 }), &task, &x).unwrap().total;
        prop_assert!(relayed >= direct);
    }

    #[test]
    fn ux_stays_between_zero_and_ceiling(l in 0.0..100.0f64, q in 0.0..1.0f64, r in 0.0..1.0f64) {
        let p = UxParams::default();
        let u = costs::ux_rating(l, q, r, &p).unwrap();
        prop_assert!(u >= 0.0 && u <= p.ceiling() + 1e-12);
    }

    #[test]
    fn queue_delay_grows_with_load(lambda in 0.0..3.9f64, extra in 0.0..0.09f64, k in 1usize..20) {
        let q = |l: f64| netlink::queue_delay(&QueueState { arrival_rate: l, service_rate: 1.0, servers: 4, queue_length: k, priority_weight: 1.0 }).unwrap();
        prop_assert!(q(lambda + extra) >= q(lambda));
    }

    #[test]
    fn exec_latency_falls_with_clock(cycles in 1e8..1e10f64, f in 1e9..1e10f64, boost in 1.0..10.0f64) {
        let task = VtTaskProfile::from_totals(1e6, cycles, 1.0);
        prop_assert!(netlink::exec_latency(&task, f * boost).unwrap() <= netlink::exec_latency(&task, f).unwrap());
    }
}
