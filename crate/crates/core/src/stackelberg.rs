//! Two-stage leader/follower pricing game.
//!
//! Followers buy `β` units at price `θ` and get `η·ln(1+β) − θ·β`. A leader
//! with marginal cost `c` earns `(θ − c)·Σβ` and may not sell more than its
//! capacity. Edge nodes lead the vehicles attached to them and follow the
//! cloud they forward to; clouds lead both their direct vehicles and their
//! edges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Leader {
    Edge(usize),
    Cloud(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Player {
    Vehicle(usize),
    Edge(usize),
    Cloud(usize),
}

impl std::fmt::Display for Player {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Player::Vehicle(v) => write!(f, "vehicle {v}"),
            Player::Edge(j) => write!(f, "edge {j}"),
            Player::Cloud(i) => write!(f, "cloud {i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub satisfaction: f64,
    /// Who the vehicle buys from; `None` keeps it out of the market.
    pub leader: Option<Leader>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub cost: f64,
    pub capacity: f64,
    /// Satisfaction the edge gets from buying cloud capacity.
    pub satisfaction: f64,
    pub cloud: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudSpec {
    pub cost: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSpec {
    pub vehicles: Vec<VehicleSpec>,
    pub edges: Vec<EdgeSpec>,
    pub clouds: Vec<CloudSpec>,
    /// Smallest nonzero purchase a follower may make.
    #[serde(default)]
    pub min_service: f64,
    pub price_lo: f64,
    pub price_hi: f64,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
}

fn default_grid() -> usize {
    200
}

impl GameSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleGame(m));
        if !(self.price_lo >= 0.0 && self.price_hi >= self.price_lo && self.price_hi.is_finite()) {
            return bad(format!("price bounds [{}, {}]", self.price_lo, self.price_hi));
        }
        if self.grid_points < 2 {
            return bad("grid_points must be >= 2".into());
        }
        if !(self.min_service >= 0.0) {
            return bad("min_service must be >= 0".into());
        }
        for (v, s) in self.vehicles.iter().enumerate() {
            if !(s.satisfaction >= 0.0 && s.satisfaction.is_finite()) {
                return bad(format!("vehicle {v} satisfaction {}", s.satisfaction));
            }
            match s.leader {
                Some(Leader::Edge(j)) if j >= self.edges.len() => return bad(format!("vehicle {v} names edge {j}")),
                Some(Leader::Cloud(i)) if i >= self.clouds.len() => return bad(format!("vehicle {v} names cloud {i}")),
                _ => {}
            }
        }
        for (j, e) in self.edges.iter().enumerate() {
            if !(e.cost >= 0.0 && e.capacity >= 0.0 && e.satisfaction >= 0.0) || e.cloud >= self.clouds.len() {
                return bad(format!("edge {j} spec {e:?}"));
            }
        }
        for (i, c) in self.clouds.iter().enumerate() {
            if !(c.cost >= 0.0 && c.capacity >= 0.0) {
                return bad(format!("cloud {i} spec {c:?}"));
            }
        }
        Ok(())
    }

    /// Read a spec from TOML, or JSON when the extension is `.json`.
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: GameSpec = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::InfeasibleGame(format!("{}: {e}", path.display())))?
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn grid(&self) -> Vec<f64> {
        price_grid(self.price_lo, self.price_hi, self.grid_points)
    }

    pub fn leader_capacity(&self, l: Leader) -> f64 {
        match l {
            Leader::Edge(j) => self.edges[j].capacity,
            Leader::Cloud(i) => self.clouds[i].capacity,
        }
    }

    pub fn leader_cost(&self, l: Leader) -> f64 {
        match l {
            Leader::Edge(j) => self.edges[j].cost,
            Leader::Cloud(i) => self.clouds[i].cost,
        }
    }

    /// Satisfaction coefficients of everyone who buys from `l`, vehicles first.
    pub fn followers_of(&self, l: Leader) -> Vec<(Player, f64)> {
        let mut out: Vec<(Player, f64)> = self
            .vehicles
            .iter()
            .enumerate()
            .filter(|(_, s)| s.leader == Some(l))
            .map(|(v, s)| (Player::Vehicle(v), s.satisfaction))
            .collect();
        if let Leader::Cloud(i) = l {
            out.extend(
                self.edges
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.cloud == i)
                    .map(|(j, e)| (Player::Edge(j), e.satisfaction)),
            );
        }
        out
    }
}

pub fn price_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 || hi <= lo {
        return vec![lo];
    }
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|k| if k + 1 == points { hi } else { lo + step * k as f64 }).collect()
}

pub fn follower_utility(eta: f64, theta: f64, beta: f64) -> f64 {
    eta * beta.ln_1p() - theta * beta
}

/// Utility-maximising purchase on `[0, cap]`.
pub fn follower_best_response(eta: f64, theta: f64, cap: f64) -> Result<f64> {
    follower_response(eta, theta, cap, 0.0)
}

/// Best response when any nonzero purchase must be at least `floor`.
pub fn follower_response(eta: f64, theta: f64, cap: f64, floor: f64) -> Result<f64> {
    if !(eta >= 0.0 && theta >= 0.0 && cap >= 0.0 && floor >= 0.0) {
        return Err(Error::domain(format!(
            "follower inputs must be >= 0: eta={eta} theta={theta} cap={cap} floor={floor}"
        )));
    }
    if theta == 0.0 {
        if cap.is_infinite() {
            return Err(Error::domain("zero price with unbounded capacity"));
        }
        return Ok(if eta > 0.0 && cap >= floor { cap } else { 0.0 });
    }
    let interior = (eta / theta - 1.0).clamp(0.0, cap);
    if floor <= 0.0 || interior >= floor {
        return Ok(interior);
    }
    if floor > cap {
        return Ok(0.0);
    }
    // Concave utility peaks below the floor, so the floor is the best
    // nonzero purchase; take it only if it beats buying nothing.
    Ok(if follower_utility(eta, theta, floor) >= 0.0 { floor } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaderChoice {
    pub price: f64,
    /// False when every feasible price loses money and the leader sells nothing.
    pub serves: bool,
    pub profit: f64,
}

struct Market<'a> {
    etas: &'a [f64],
    cost: f64,
    capacity: f64,
    floor: f64,
}

impl Market<'_> {
    fn demand(&self, theta: f64) -> f64 {
        self.etas.iter().map(|&eta| follower_response(eta, theta, self.capacity, self.floor).unwrap_or(0.0)).sum()
    }

    fn profit(&self, theta: f64) -> f64 {
        (theta - self.cost) * self.demand(theta)
    }

    fn feasible(&self, theta: f64) -> bool {
        self.demand(theta) <= self.capacity
    }

    /// Prices where some follower changes regime.
    fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for &eta in self.etas {
            out.push(eta);
            out.push(eta / (1.0 + self.capacity));
            if self.floor > 0.0 {
                out.push(eta / (1.0 + self.floor));
                out.push(eta * self.floor.ln_1p() / self.floor);
            }
        }
        out
    }
}

/// Profit-maximising price for a leader facing followers with satisfaction `etas`.
///
/// Candidates are the grid points plus the exact optimum of every smooth
/// piece of the profit curve, so the result is never beaten by any price in
/// `[lo, hi]`. Ties go to the lowest price.
pub fn leader_price(
    etas: &[f64],
    cost: f64,
    capacity: f64,
    floor: f64,
    lo: f64,
    hi: f64,
    grid_points: usize,
) -> Result<LeaderChoice> {
    if etas.is_empty() {
        return Err(Error::domain("leader has no followers"));
    }
    let m = Market { etas, cost, capacity, floor };
    if !m.feasible(hi) {
        return Err(Error::NoFeasiblePrice);
    }
    // Demand is nonincreasing in price, so feasibility is an upper ray.
    let min_feasible = if m.feasible(lo) {
        lo
    } else {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if m.feasible(mid) {
                b = mid;
            } else {
                a = mid;
            }
        }
        b
    };

    let mut cuts: Vec<f64> = m.breakpoints().into_iter().filter(|x| *x > min_feasible && *x < hi).collect();
    cuts.push(min_feasible);
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut candidates: Vec<f64> = price_grid(lo, hi, grid_points).into_iter().filter(|t| *t >= min_feasible).collect();
    candidates.extend(&cuts);
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        let (mut eta_sum, mut interior, mut fixed) = (0.0, 0.0, 0.0);
        for &eta in etas {
            let beta = follower_response(eta, mid, capacity, floor)?;
            if beta > 0.0 && beta < capacity && beta > floor.max(0.0) {
                eta_sum += eta;
                interior += 1.0;
            } else {
                fixed += beta;
            }
        }
        // On this piece profit is (θ − c)(A/θ − n + K).
        if interior > fixed && cost > 0.0 {
            let t = (cost * eta_sum / (interior - fixed)).sqrt();
            if t > a && t < b {
                candidates.push(t);
            }
        }
    }
    candidates.retain(|t| m.feasible(*t));
    candidates.sort_by(f64::total_cmp);

    let mut best: Option<(f64, f64)> = None;
    for &t in &candidates {
        let p = m.profit(t);
        match best {
            Some((_, bp)) if p <= bp + 1e-12 * bp.abs().max(1.0) => {}
            _ => best = Some((t, p)),
        }
    }
    let (price, profit) = best.ok_or(Error::NoFeasiblePrice)?;
    if profit < 0.0 {
        return Ok(LeaderChoice { price: hi, serves: false, profit: 0.0 });
    }
    Ok(LeaderChoice { price, serves: true, profit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackelbergOutcome {
    pub vehicle_demand: Vec<f64>,
    pub edge_demand: Vec<f64>,
    pub edge_price: Vec<f64>,
    pub cloud_price: Vec<f64>,
    pub edge_serves: Vec<bool>,
    pub cloud_serves: Vec<bool>,
    pub vehicle_utility: Vec<f64>,
    pub edge_utility: Vec<f64>,
    pub cloud_utility: Vec<f64>,
    pub system_utility: f64,
}

impl StackelbergOutcome {
    pub fn price_of(&self, l: Leader) -> f64 {
        match l {
            Leader::Edge(j) => self.edge_price[j],
            Leader::Cloud(i) => self.cloud_price[i],
        }
    }

    fn serves(&self, l: Leader) -> bool {
        match l {
            Leader::Edge(j) => self.edge_serves[j],
            Leader::Cloud(i) => self.cloud_serves[i],
        }
    }
}

fn follower_cap(spec: &GameSpec, l: Leader) -> f64 {
    spec.leader_capacity(l)
}

/// Followers' best responses and everyone's utility at the given prices.
pub fn evaluate(
    spec: &GameSpec,
    edge_price: &[f64],
    cloud_price: &[f64],
    edge_serves: &[bool],
    cloud_serves: &[bool],
) -> Result<StackelbergOutcome> {
    let mut o = StackelbergOutcome {
        vehicle_demand: vec![0.0; spec.vehicles.len()],
        edge_demand: vec![0.0; spec.edges.len()],
        edge_price: edge_price.to_vec(),
        cloud_price: cloud_price.to_vec(),
        edge_serves: edge_serves.to_vec(),
        cloud_serves: cloud_serves.to_vec(),
        vehicle_utility: vec![0.0; spec.vehicles.len()],
        edge_utility: vec![0.0; spec.edges.len()],
        cloud_utility: vec![0.0; spec.clouds.len()],
        system_utility: 0.0,
    };
    for (v, s) in spec.vehicles.iter().enumerate() {
        let Some(l) = s.leader else { continue };
        if !o.serves(l) {
            continue;
        }
        let theta = o.price_of(l);
        let beta = follower_response(s.satisfaction, theta, follower_cap(spec, l), spec.min_service)?;
        o.vehicle_demand[v] = beta;
        o.vehicle_utility[v] = follower_utility(s.satisfaction, theta, beta);
    }
    for (j, e) in spec.edges.iter().enumerate() {
        let up = Leader::Cloud(e.cloud);
        if !o.serves(up) {
            continue;
        }
        let theta = o.price_of(up);
        o.edge_demand[j] = follower_response(e.satisfaction, theta, follower_cap(spec, up), spec.min_service)?;
    }
    for (j, e) in spec.edges.iter().enumerate() {
        let sold: f64 = spec
            .vehicles
            .iter()
            .zip(&o.vehicle_demand)
            .filter(|(s, _)| s.leader == Some(Leader::Edge(j)))
            .map(|(_, b)| b)
            .sum();
        let theta_up = o.cloud_price[e.cloud];
        o.edge_utility[j] =
            (o.edge_price[j] - e.cost) * sold + follower_utility(e.satisfaction, theta_up, o.edge_demand[j]);
    }
    for (i, c) in spec.clouds.iter().enumerate() {
        o.cloud_utility[i] = (o.cloud_price[i] - c.cost) * cloud_sold(spec, &o, i);
    }
    o.system_utility = o.vehicle_utility.iter().sum::<f64>()
        + o.edge_utility.iter().sum::<f64>()
        + o.cloud_utility.iter().sum::<f64>();
    Ok(o)
}

fn cloud_sold(spec: &GameSpec, o: &StackelbergOutcome, i: usize) -> f64 {
    let direct: f64 = spec
        .vehicles
        .iter()
        .zip(&o.vehicle_demand)
        .filter(|(s, _)| s.leader == Some(Leader::Cloud(i)))
        .map(|(_, b)| b)
        .sum();
    let edges: f64 = spec.edges.iter().zip(&o.edge_demand).filter(|(e, _)| e.cloud == i).map(|(_, b)| b).sum();
    direct + edges
}

fn solve_leader(spec: &GameSpec, l: Leader) -> Result<LeaderChoice> {
    let etas: Vec<f64> = spec.followers_of(l).into_iter().map(|(_, e)| e).collect();
    if etas.is_empty() {
        return Ok(LeaderChoice { price: spec.price_lo, serves: true, profit: 0.0 });
    }
    leader_price(
        &etas,
        spec.leader_cost(l),
        spec.leader_capacity(l),
        spec.min_service,
        spec.price_lo,
        spec.price_hi,
        spec.grid_points,
    )
}

/// Solve the game: edge leaders price their vehicles, then cloud leaders
/// price their direct vehicles and the edges that forward to them.
pub fn backward_induction(spec: &GameSpec) -> Result<StackelbergOutcome> {
    spec.validate()?;
    let infeasible =
        |l: Leader| Error::InfeasibleGame(format!("{l:?}: follower demand exceeds capacity at every price"));
    let mut edge_price = Vec::with_capacity(spec.edges.len());
    let mut edge_serves = Vec::with_capacity(spec.edges.len());
    for j in 0..spec.edges.len() {
        let c = solve_leader(spec, Leader::Edge(j)).map_err(|_| infeasible(Leader::Edge(j)))?;
        edge_price.push(c.price);
        edge_serves.push(c.serves);
    }
    let mut cloud_price = Vec::with_capacity(spec.clouds.len());
    let mut cloud_serves = Vec::with_capacity(spec.clouds.len());
    for i in 0..spec.clouds.len() {
        let c = solve_leader(spec, Leader::Cloud(i)).map_err(|_| infeasible(Leader::Cloud(i)))?;
        cloud_price.push(c.price);
        cloud_serves.push(c.serves);
    }
    evaluate(spec, &edge_price, &cloud_price, &edge_serves, &cloud_serves)
}

/// Like [`backward_induction`], but a leader that cannot meet demand at any
/// price posts the top price and scales its followers' purchases down to
/// its capacity.
pub fn backward_induction_rationed(spec: &GameSpec) -> Result<StackelbergOutcome> {
    spec.validate()?;
    let mut edge_price = Vec::new();
    let mut edge_serves = Vec::new();
    let mut rationed = Vec::new();
    for j in 0..spec.edges.len() {
        match solve_leader(spec, Leader::Edge(j)) {
            Ok(c) => {
                edge_price.push(c.price);
                edge_serves.push(c.serves);
            }
            Err(Error::NoFeasiblePrice) => {
                edge_price.push(spec.price_hi);
                edge_serves.push(true);
                rationed.push(Leader::Edge(j));
            }
            Err(e) => return Err(e),
        }
    }
    let mut cloud_price = Vec::new();
    let mut cloud_serves = Vec::new();
    for i in 0..spec.clouds.len() {
        match solve_leader(spec, Leader::Cloud(i)) {
            Ok(c) => {
                cloud_price.push(c.price);
                cloud_serves.push(c.serves);
            }
            Err(Error::NoFeasiblePrice) => {
                cloud_price.push(spec.price_hi);
                cloud_serves.push(true);
                rationed.push(Leader::Cloud(i));
            }
            Err(e) => return Err(e),
        }
    }
    let mut o = evaluate(spec, &edge_price, &cloud_price, &edge_serves, &cloud_serves)?;
    if rationed.is_empty() {
        return Ok(o);
    }
    for l in rationed {
        let cap = spec.leader_capacity(l);
        let sold: f64 = match l {
            Leader::Edge(j) => spec
                .vehicles
                .iter()
                .zip(&o.vehicle_demand)
                .filter(|(s, _)| s.leader == Some(Leader::Edge(j)))
                .map(|(_, b)| b)
                .sum(),
            Leader::Cloud(i) => cloud_sold(spec, &o, i),
        };
        if sold <= cap || sold <= 0.0 {
            continue;
        }
        let scale = cap / sold;
        for (v, s) in spec.vehicles.iter().enumerate() {
            if s.leader == Some(l) {
                o.vehicle_demand[v] *= scale;
            }
        }
        if let Leader::Cloud(i) = l {
            for (j, e) in spec.edges.iter().enumerate() {
                if e.cloud == i {
                    o.edge_demand[j] *= scale;
                }
            }
        }
    }
    recompute_utilities(spec, &mut o);
    Ok(o)
}

fn recompute_utilities(spec: &GameSpec, o: &mut StackelbergOutcome) {
    for (v, s) in spec.vehicles.iter().enumerate() {
        o.vehicle_utility[v] = match s.leader {
            Some(l) => follower_utility(s.satisfaction, o.price_of(l), o.vehicle_demand[v]),
            None => 0.0,
        };
    }
    for (j, e) in spec.edges.iter().enumerate() {
        let sold: f64 = spec
            .vehicles
            .iter()
            .zip(&o.vehicle_demand)
            .filter(|(s, _)| s.leader == Some(Leader::Edge(j)))
            .map(|(_, b)| b)
            .sum();
        o.edge_utility[j] = (o.edge_price[j] - e.cost) * sold
            + follower_utility(e.satisfaction, o.cloud_price[e.cloud], o.edge_demand[j]);
    }
    for (i, c) in spec.clouds.iter().enumerate() {
        o.cloud_utility[i] = (o.cloud_price[i] - c.cost) * cloud_sold(spec, o, i);
    }
    o.system_utility = o.vehicle_utility.iter().sum::<f64>()
        + o.edge_utility.iter().sum::<f64>()
        + o.cloud_utility.iter().sum::<f64>();
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeReport {
    pub is_se: bool,
    pub worst_gain: f64,
    pub worst_player: Option<Player>,
    /// Every player whose best deviation gains more than the tolerance.
    pub deviators: Vec<(Player, f64)>,
}

pub const SE_TOLERANCE: f64 = 1e-6;

fn grid_step_points(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || hi <= lo {
        return vec![lo];
    }
    let n = ((hi - lo) / step).floor() as usize;
    let mut v: Vec<f64> = (0..=n).map(|k| lo + step * k as f64).collect();
    if *v.last().unwrap() < hi {
        v.push(hi);
    }
    v
}

/// Check every player's unilateral deviations on a grid of spacing `grid_step`.
///
/// Leaders deviate in price with followers best-responding; followers
/// deviate in quantity at fixed prices.
pub fn verify_se(outcome: &StackelbergOutcome, spec: &GameSpec, grid_step: f64) -> SeReport {
    let mut gains: Vec<(Player, f64)> = Vec::new();
    let prices = grid_step_points(spec.price_lo, spec.price_hi, grid_step);

    let leaders: Vec<(Player, Leader)> = (0..spec.edges.len())
        .map(|j| (Player::Edge(j), Leader::Edge(j)))
        .chain((0..spec.clouds.len()).map(|i| (Player::Cloud(i), Leader::Cloud(i))))
        .collect();
    for (player, l) in leaders {
        let etas: Vec<f64> = spec.followers_of(l).into_iter().map(|(_, e)| e).collect();
        if etas.is_empty() {
            continue;
        }
        let m = Market {
            etas: &etas,
            cost: spec.leader_cost(l),
            capacity: spec.leader_capacity(l),
            floor: spec.min_service,
        };
        let current = if outcome.serves(l) { m.profit(outcome.price_of(l)) } else { 0.0 };
        let best = prices.iter().filter(|t| m.feasible(**t)).map(|t| m.profit(*t)).fold(f64::NEG_INFINITY, f64::max);
        if best.is_finite() {
            gains.push((player, best - current));
        }
    }

    for (v, s) in spec.vehicles.iter().enumerate() {
        let Some(l) = s.leader else { continue };
        if !outcome.serves(l) {
            continue;
        }
        let theta = outcome.price_of(l);
        let cap = follower_cap(spec, l);
        let current = follower_utility(s.satisfaction, theta, outcome.vehicle_demand[v]);
        let best = follower_grid_best(s.satisfaction, theta, cap, spec.min_service, grid_step);
        gains.push((Player::Vehicle(v), best - current));
    }
    for (j, e) in spec.edges.iter().enumerate() {
        let up = Leader::Cloud(e.cloud);
        if !outcome.serves(up) {
            continue;
        }
        let theta = outcome.price_of(up);
        let current = follower_utility(e.satisfaction, theta, outcome.edge_demand[j]);
        let best = follower_grid_best(e.satisfaction, theta, follower_cap(spec, up), spec.min_service, grid_step);
        gains.push((Player::Edge(j), best - current));
    }

    let mut report = SeReport { is_se: true, worst_gain: 0.0, worst_player: None, deviators: Vec::new() };
    for (p, g) in gains {
        if g > report.worst_gain {
            report.worst_gain = g;
            report.worst_player = Some(p);
        }
        if g > SE_TOLERANCE {
            report.deviators.push((p, g));
        }
    }
    report.is_se = report.worst_gain <= SE_TOLERANCE;
    report
}

fn follower_grid_best(eta: f64, theta: f64, cap: f64, floor: f64, step: f64) -> f64 {
    let hi = if cap.is_finite() { cap } else { (eta / theta.max(1e-12)).max(1.0) };
    let mut best = 0.0f64;
    for b in grid_step_points(floor.min(hi), hi, step) {
        best = best.max(follower_utility(eta, theta, b));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_response_examples() {
        assert_eq!(follower_best_response(2.0, 1.0, 10.0).unwrap(), 1.0);
        assert_eq!(follower_best_response(1.0, 1.5, 10.0).unwrap(), 0.0);
        assert_eq!(follower_best_response(6.0, 1.0, 3.0).unwrap(), 3.0);
        assert!(follower_best_response(1.0, 0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn floor_is_taken_only_when_rational() {
        // Interior optimum 0.1 < floor 1; utility at the floor is positive.
        assert_eq!(follower_response(1.1, 1.0, 10.0, 1.0).unwrap(), 0.0);
        let eta = 2.0;
        let theta = 1.2;
        let u = follower_utility(eta, theta, 1.0);
        assert!(u > 0.0);
        assert_eq!(follower_response(eta, theta, 10.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn leader_single_follower_zero_cost_takes_lowest_price() {
        let c = leader_price(&[2.0], 0.0, 100.0, 0.0, 0.1, 5.0, 200).unwrap();
        assert_eq!(c.price, 0.1);
        assert!(c.serves);
    }

    #[test]
    fn leader_with_interior_optimum() {
        // (θ − c)(η/θ − 1) peaks at θ = √(cη).
        let c = leader_price(&[2.0], 0.5, 100.0, 0.0, 0.1, 5.0, 200).unwrap();
        assert!((c.price - 1.0).abs() < 1e-12, "{}", c.price);
    }

    #[test]
    fn unprofitable_leader_opts_out() {
        let c = leader_price(&[10.0], 8.0, 100.0, 0.0, 0.1, 5.0, 200).unwrap();
        assert_eq!(c.price, 5.0);
        assert!(!c.serves);
    }

    #[test]
    fn zero_capacity_ties_break_low() {
        // Followers cannot buy more than the leader holds, so demand is 0 at every price.
        let c = leader_price(&[2.0], 0.0, 0.0, 0.0, 0.1, 5.0, 200).unwrap();
        assert_eq!(c.price, 0.1);
        assert_eq!(c.profit, 0.0);
        assert!(matches!(leader_price(&[9.0, 9.0], 0.0, 1.0, 0.0, 0.1, 5.0, 200), Err(Error::NoFeasiblePrice)));
    }

    fn one_chain(eta: f64, cost: f64, cap: f64) -> GameSpec {
        GameSpec {
            vehicles: vec![VehicleSpec { satisfaction: eta, leader: Some(Leader::Edge(0)) }],
            edges: vec![EdgeSpec { cost, capacity: cap, satisfaction: eta, cloud: 0 }],
            clouds: vec![CloudSpec { cost, capacity: cap }],
            min_service: 0.0,
            price_lo: 0.1,
            price_hi: 5.0,
            grid_points: 200,
        }
    }

    #[test]
    fn chain_composes_single_stages() {
        let o = backward_induction(&one_chain(2.0, 0.0, 100.0)).unwrap();
        assert_eq!(o.edge_price, vec![0.1]);
        assert_eq!(o.cloud_price, vec![0.1]);
        assert!((o.vehicle_demand[0] - 19.0).abs() < 1e-12);
        assert!((o.edge_demand[0] - 19.0).abs() < 1e-12);
        assert!(verify_se(&o, &one_chain(2.0, 0.0, 100.0), 1e-3).is_se);
    }

    #[test]
    fn empty_market() {
        let mut spec = one_chain(2.0, 0.0, 100.0);
        spec.vehicles.clear();
        spec.edges[0].satisfaction = 0.0;
        let o = backward_induction(&spec).unwrap();
        assert!(o.vehicle_demand.is_empty());
        assert_eq!(o.edge_demand, vec![0.0]);
        assert_eq!(o.system_utility, 0.0);
    }

    #[test]
    fn doubling_slack_capacity_changes_nothing() {
        let a = backward_induction(&one_chain(2.0, 0.5, 50.0)).unwrap();
        let b = backward_induction(&one_chain(2.0, 0.5, 100.0)).unwrap();
        assert_eq!(a.edge_price, b.edge_price);
        assert_eq!(a.vehicle_demand, b.vehicle_demand);
    }

    #[test]
    fn perturbed_price_is_not_se() {
        let spec = one_chain(2.0, 0.5, 100.0);
        let o = backward_induction(&spec).unwrap();
        let mut p = o.edge_price.clone();
        p[0] *= 1.1;
        let bad = evaluate(&spec, &p, &o.cloud_price, &o.edge_serves, &o.cloud_serves).unwrap();
        let r = verify_se(&bad, &spec, 1e-3);
        assert!(!r.is_se);
        assert_eq!(r.worst_player, Some(Player::Edge(0)));
    }

    #[test]
    fn rationing_respects_capacity() {
        let mut spec = one_chain(3.0, 0.0, 1.0);
        spec.price_hi = 0.5;
        spec.vehicles.push(VehicleSpec { satisfaction: 3.0, leader: Some(Leader::Edge(0)) });
        assert!(matches!(backward_induction(&spec), Err(Error::InfeasibleGame(_))));
        let o = backward_induction_rationed(&spec).unwrap();
        let sold: f64 = o.vehicle_demand.iter().sum();
        assert!(sold <= 1.0 + 1e-12);
        assert!(o.edge_demand[0] <= 1.0 + 1e-12);
    }
}
