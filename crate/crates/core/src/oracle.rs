//! Independent reference computations for the test battery and `selftest`.
//!
//! Nothing here calls the code it checks. Formulas are re-derived with
//! different arithmetic where that is possible, the queue is simulated
//! event by event, and the pricing game is brute-forced on a grid.

use std::collections::{HashMap, VecDeque};

use rand::Rng;

/// `B·log2(1 + P·g·d^(−ε) / N0)`.
pub fn shannon_rate(bandwidth: f64, power: f64, gain: f64, distance: f64, exponent: f64, noise_psd: f64) -> f64 {
    let x = power * gain / distance.powf(exponent) / noise_psd;
    // Below 1e-3 the naive log loses digits; the series is exact to f64 there.
    let log2_1p = if x < 1e-3 {
        (x - x * x / 2.0 + x.powi(3) / 3.0 - x.powi(4) / 4.0) / std::f64::consts::LN_2
    } else {
        (1.0 + x).log2()
    };
    bandwidth * log2_1p
}

pub fn tx_latency(bits: f64, rate: f64) -> f64 {
    bits / rate
}

pub fn exec_latency(cycles_per_bit: f64, bits: f64, cpu_hz: f64) -> f64 {
    cycles_per_bit * bits / cpu_hz
}

pub fn queue_delay(rho: f64, queued: f64, lambda: f64, mu: f64, servers: f64) -> f64 {
    rho * queued / (mu * (servers * mu - lambda))
}

/// Energy of a route given as hop list: uplink, optional source execution,
/// optional backhaul, optional destination execution.
pub struct EnergyHops {
    pub bits: f64,
    pub cycles: f64,
    pub uplink: (f64, f64),
    pub source_exec: Option<(f64, f64)>,
    pub backhaul: Option<(f64, f64)>,
    pub dest_exec: Option<(f64, f64)>,
    pub times_cycles: bool,
}

pub fn energy(h: &EnergyHops) -> f64 {
    let send = |(power, rate): (f64, f64)| power * (h.bits / rate);
    let run = |(kappa, f): (f64, f64)| {
        let per = kappa * f.powi(2);
        if h.times_cycles {
            per * h.cycles
        } else {
            per
        }
    };
    send(h.uplink) + h.source_exec.map_or(0.0, run) + h.backhaul.map_or(0.0, send) + h.dest_exec.map_or(0.0, run)
}

pub fn migration_cost(quantity: f64, price: f64) -> f64 {
    price * quantity
}

pub struct UxShape {
    pub weights: [f64; 3],
    pub a: [f64; 3],
    pub b: [f64; 3],
}

pub fn ux_rating(latency: f64, quality: f64, reliability: f64, s: &UxShape) -> f64 {
    let lat = s.a[0] / (s.b[0] * latency).exp();
    let q = s.a[1] * (1.0 - 1.0 / (s.b[1] * quality).exp());
    let r = s.a[2] * (1.0 - 1.0 / (s.b[2] * reliability).exp());
    s.weights[0] * lat + s.weights[1] * q + s.weights[2] * r
}

/// Result of a priority-queue simulation.
#[derive(Debug, Clone, Default)]
pub struct DesReport {
    pub events: u64,
    /// Time-average number waiting.
    pub mean_queue: f64,
    /// Mean wait per class (class 1 is served first).
    pub mean_wait: Vec<f64>,
    /// Mean wait keyed by (class, position) where position counts the
    /// same-or-higher-priority tasks waiting at arrival plus the arrival itself.
    pub wait_by_position: HashMap<(usize, usize), (f64, u64)>,
}

impl DesReport {
    pub fn conditional_wait(&self, class: usize, position: usize) -> Option<(f64, u64)> {
        self.wait_by_position.get(&(class, position)).map(|(sum, n)| (sum / *n as f64, *n))
    }
}

/// M/M/s queue with non-preemptive priority classes.
///
/// `class_probs[k]` is the chance an arrival belongs to class `k + 1`.
pub fn simulate_priority_queue<R: Rng + ?Sized>(
    lambda: f64,
    mu: f64,
    servers: usize,
    class_probs: &[f64],
    events: u64,
    rng: &mut R,
) -> DesReport {
    let classes = class_probs.len();
    let mut queues: Vec<VecDeque<(f64, usize)>> = vec![VecDeque::new(); classes];
    let mut busy = 0usize;
    let mut now = 0.0;
    let mut area = 0.0;
    let mut waiting = 0usize;
    let mut wait_sum = vec![0.0; classes];
    let mut wait_n = vec![0u64; classes];
    let mut by_pos: HashMap<(usize, usize), (f64, u64)> = HashMap::new();
    let mut n = 0;
    while n < events {
        let rate = lambda + busy as f64 * mu;
        let dt = -(1.0 - rng.gen::<f64>()).ln() / rate;
        area += waiting as f64 * dt;
        now += dt;
        n += 1;
        if rng.gen::<f64>() * rate < lambda {
            let u = rng.gen::<f64>();
            let mut class = classes - 1;
            let mut acc = 0.0;
            for (k, p) in class_probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    class = k;
                    break;
                }
            }
            if busy < servers {
                busy += 1;
                wait_n[class] += 1;
            } else {
                let ahead: usize = queues[..=class].iter().map(VecDeque::len).sum();
                queues[class].push_back((now, ahead + 1));
                waiting += 1;
            }
        } else if let Some(k) = queues.iter().position(|q| !q.is_empty()) {
            // A server frees up and immediately takes the best waiting task.
            let (arrived, pos) = queues[k].pop_front().expect("nonempty queue");
            waiting -= 1;
            let w = now - arrived;
            wait_sum[k] += w;
            wait_n[k] += 1;
            let e = by_pos.entry((k + 1, pos)).or_insert((0.0, 0));
            e.0 += w;
            e.1 += 1;
        } else {
            busy -= 1;
        }
    }
    DesReport {
        events: n,
        mean_queue: area / now,
        mean_wait: wait_sum.iter().zip(&wait_n).map(|(s, c)| if *c > 0 { s / *c as f64 } else { 0.0 }).collect(),
        wait_by_position: by_pos,
    }
}

/// Brute-force price for one leader: grid argmax of `(θ − c)·Σ β(θ)`,
/// lowest price on ties, top price when every price loses money.
pub fn grid_leader_price(etas: &[f64], cost: f64, capacity: f64, lo: f64, hi: f64, points: usize) -> f64 {
    let mut best = (lo, f64::NEG_INFINITY);
    for k in 0..points {
        let theta = lo + (hi - lo) * k as f64 / (points - 1) as f64;
        let demand: f64 = etas.iter().map(|eta| (eta / theta - 1.0).max(0.0).min(capacity)).sum();
        if demand > capacity {
            continue;
        }
        let profit = (theta - cost) * demand;
        if profit > best.1 + 1e-12 {
            best = (theta, profit);
        }
    }
    if best.1 < 0.0 {
        hi
    } else {
        best.0
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = p[k];
            p[k] = orig + h;
            let up = f(&p);
            p[k] = orig - h;
            let down = f(&p);
            p[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Least-squares slope of `ys` against their index.
pub fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        num += dx * (y - my);
        den += dx * dx;
    }
    num / den
}

/// Trailing moving average with window `w` (defined from index `w − 1`).
pub fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    if w == 0 || xs.len() < w {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(xs.len() - w + 1);
    let mut sum: f64 = xs[..w].iter().sum();
    out.push(sum / w as f64);
    for k in w..xs.len() {
        sum += xs[k] - xs[k - w];
        out.push(sum / w as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn erlang_c_single_class() {
        // M/M/1 at load 0.5: Wq = ρ/(μ−λ) = 1.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let r = simulate_priority_queue(0.5, 1.0, 1, &[1.0], 2_000_000, &mut rng);
        assert!((r.mean_wait[0] - 1.0).abs() < 0.05, "{}", r.mean_wait[0]);
        assert!((r.mean_queue - 0.5).abs() < 0.03, "{}", r.mean_queue);
    }

    #[test]
    fn moving_average_and_slope() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!((slope(&[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-12);
    }
}
