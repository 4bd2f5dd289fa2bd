//! Energy, migration cost, and user-experience models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netlink::Route;
use crate::scenario::VtTaskProfile;

/// Energy spent on one task, split by where it is consumed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub upload_j: f64,
    pub exec_src: f64,
    pub migrate: f64,
    pub exec_dst: f64,
    pub total: f64,
}

/// Everything the energy model needs about the hardware on a route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyInputs {
    pub vehicle_tx_power_w: f64,
    /// Vehicle uplink rate to the first hop.
    pub uplink_rate: f64,
    pub edge_tx_power_w: f64,
    /// Edge-to-cloud backhaul rate.
    pub backhaul_rate: f64,
    pub edge_capacitance: f64,
    pub edge_cpu_hz: f64,
    pub cloud_capacitance: f64,
    pub cloud_cpu_hz: f64,
    pub times_cycles: bool,
}

fn transfer_energy(power: f64, bits: f64, rate: f64, what: &str) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::domain(format!("{what} rate must be > 0 on an active link, got {rate}")));
    }
    Ok(power * bits / rate)
}

fn exec_energy(kappa: f64, f: f64, cycles: f64, times_cycles: bool) -> f64 {
    let e = kappa * f * f;
    if times_cycles {
        e * cycles
    } else {
        e
    }
}

/// Route energy. `None` means the task stayed local and consumes no
/// network energy.
pub fn energy(route: Option<Route>, task: &VtTaskProfile, x: &EnergyInputs) -> Result<EnergyBreakdown> {
    let Some(route) = route else {
        return Ok(EnergyBreakdown::default());
    };
    let bits = task.data_volume_bits;
    let cycles = task.total_cycles();
    let mut b = EnergyBreakdown::default();
    match route {
        Route::ToEdge { .. } => {
            b.upload_j = transfer_energy(x.vehicle_tx_power_w, bits, x.uplink_rate, "uplink")?;
            b.exec_src = exec_energy(x.edge_capacitance, x.edge_cpu_hz, cycles, x.times_cycles);
        }
        Route::ToCloud { .. } => {
            b.upload_j = transfer_energy(x.vehicle_tx_power_w, bits, x.uplink_rate, "uplink")?;
            b.exec_dst = exec_energy(x.cloud_capacitance, x.cloud_cpu_hz, cycles, x.times_cycles);
        }
        Route::EdgeToCloud { .. } => {
            b.upload_j = transfer_energy(x.vehicle_tx_power_w, bits, x.uplink_rate, "uplink")?;
            b.exec_src = exec_energy(x.edge_capacitance, x.edge_cpu_hz, cycles, x.times_cycles);
            b.migrate = transfer_energy(x.edge_tx_power_w, bits, x.backhaul_rate, "backhaul")?;
            b.exec_dst = exec_energy(x.cloud_capacitance, x.cloud_cpu_hz, cycles, x.times_cycles);
        }
    }
    b.total = b.upload_j + b.exec_src + b.migrate + b.exec_dst;
    Ok(b)
}

/// What the hosting price is charged against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PricingMode {
    /// Price per MB of task data.
    PerMb,
    /// Price per CPU cycle.
    PerCycle,
}

/// Resource quantity times price.
pub fn migration_cost(task: &VtTaskProfile, price: f64, mode: PricingMode) -> Result<f64> {
    if !(price >= 0.0) {
        return Err(Error::domain(format!("price must be >= 0, got {price}")));
    }
    let quantity = match mode {
        PricingMode::PerMb => task.data_mb(),
        PricingMode::PerCycle => task.total_cycles(),
    };
    Ok(quantity * price)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UxParams {
    pub w_l: f64,
    pub w_q: f64,
    pub w_r: f64,
    pub a_l: f64,
    pub b_l: f64,
    pub a_q: f64,
    pub b_q: f64,
    pub a_r: f64,
    pub b_r: f64,
}

impl Default for UxParams {
    fn default() -> Self {
        UxParams { w_l: 0.5, w_q: 0.25, w_r: 0.25, a_l: 1.0, b_l: 0.3, a_q: 1.0, b_q: 3.0, a_r: 1.0, b_r: 3.0 }
    }
}

impl UxParams {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_l, self.w_q, self.w_r];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::ConfigRange("ux weights must be >= 0".into()));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::ConfigRange("ux weights w_l + w_q + w_r must equal 1".into()));
        }
        let shapes = [self.a_l, self.b_l, self.a_q, self.b_q, self.a_r, self.b_r];
        if shapes.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::ConfigRange("ux shape parameters must be > 0".into()));
        }
        Ok(())
    }

    /// Largest attainable rating.
    pub fn ceiling(&self) -> f64 {
        self.w_l * self.a_l + self.w_q * self.a_q + self.w_r * self.a_r
    }
}

/// Experience rating: exponential latency decay plus saturating quality and
/// reliability terms.
pub fn ux_rating(latency: f64, quality: f64, reliability: f64, p: &UxParams) -> Result<f64> {
    if !(latency >= 0.0 && quality >= 0.0 && reliability >= 0.0) {
        return Err(Error::domain(format!("ux inputs must be >= 0, got L={latency} Q={quality} R={reliability}")));
    }
    Ok(p.w_l * p.a_l * (-p.b_l * latency).exp()
        + p.w_q * p.a_q * (1.0 - (-p.b_q * quality).exp())
        + p.w_r * p.a_r * (1.0 - (-p.b_r * reliability).exp()))
}

/// Mean of the ratings when the vehicle's decision is active, 0 otherwise.
pub fn vehicle_ux(ratings: &[f64], active: bool) -> Result<f64> {
    if !active {
        return Ok(0.0);
    }
    if ratings.is_empty() {
        return Err(Error::EmptyRatings);
    }
    Ok(ratings.iter().sum::<f64>() / ratings.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub latency_s: f64,
    pub energy_j: f64,
    pub cost: f64,
    pub ux_min: f64,
    pub reliability_min: f64,
    pub quality_min: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { latency_s: 6.0, energy_j: 20.0, cost: 25.0, ux_min: 0.3, reliability_min: 0.5, quality_min: 0.5 }
    }
}

impl Thresholds {
    /// Every bound set so that nothing can violate it.
    pub fn vacuous() -> Self {
        Thresholds {
            latency_s: f64::INFINITY,
            energy_j: f64::INFINITY,
            cost: f64::INFINITY,
            ux_min: f64::NEG_INFINITY,
            reliability_min: f64::NEG_INFINITY,
            quality_min: f64::NEG_INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, x) in [
            ("thresholds.latency_s", self.latency_s),
            ("thresholds.energy_j", self.energy_j),
            ("thresholds.cost", self.cost),
        ] {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::ConfigRange(format!("{k} must be finite and > 0, got {x}")));
            }
        }
        for (k, x) in [
            ("thresholds.ux_min", self.ux_min),
            ("thresholds.reliability_min", self.reliability_min),
            ("thresholds.quality_min", self.quality_min),
        ] {
            if !(x.is_finite() && (0.0..=1.0).contains(&x)) {
                return Err(Error::ConfigRange(format!("{k} must lie in [0, 1], got {x}")));
            }
        }
        Ok(())
    }
}

/// Observed per-task quantities checked against [`Thresholds`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QosMetrics {
    pub latency: f64,
    pub energy: f64,
    pub cost: f64,
    pub ux: f64,
    pub reliability: f64,
    pub quality: f64,
}

/// Names of violated thresholds, in a fixed order. Bounds are inclusive.
pub fn check_qos_constraints(m: &QosMetrics, t: &Thresholds) -> Vec<&'static str> {
    let mut out = Vec::new();
    if m.latency > t.latency_s {
        out.push("latency");
    }
    if m.energy > t.energy_j {
        out.push("energy");
    }
    if m.cost > t.cost {
        out.push("cost");
    }
    if m.ux < t.ux_min {
        out.push("ux");
    }
    if m.reliability < t.reliability_min {
        out.push("reliability");
    }
    if m.quality < t.quality_min {
        out.push("quality");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn task(bits: f64, cycles: f64) -> VtTaskProfile {
        VtTaskProfile::from_totals(bits, cycles, 6.0)
    }

    fn inputs() -> EnergyInputs {
        EnergyInputs {
            vehicle_tx_power_w: 1.0,
            uplink_rate: 8e7,
            edge_tx_power_w: 20.0,
            backhaul_rate: 1e8,
            edge_capacitance: 1e-28,
            edge_cpu_hz: 1e9,
            cloud_capacitance: 1e-28,
            cloud_cpu_hz: 2e10,
            times_cycles: false,
        }
    }

    #[test]
    fn upload_energy_is_power_times_time() {
        let b = energy(Some(Route::ToEdge { edge: 0 }), &task(8e7, 1e9), &inputs()).unwrap();
        assert_eq!(b.upload_j, 1.0);
        // κ·f² = 1e-28 · (1e9)², taken literally.
        assert!((b.exec_src - 1e-10).abs() < 1e-24);
        assert_eq!(b.migrate, 0.0);
        assert_eq!(b.exec_dst, 0.0);
        assert_eq!(b.total, b.upload_j + b.exec_src);
    }

    #[test]
    fn local_route_has_no_energy() {
        let b = energy(None, &task(8e7, 1e9), &inputs()).unwrap();
        assert_eq!(b, EnergyBreakdown::default());
    }

    #[test]
    fn zero_rate_on_active_link_fails() {
        let mut x = inputs();
        x.backhaul_rate = 0.0;
        assert!(energy(Some(Route::ToEdge { edge: 0 }), &task(8e7, 1e9), &x).is_ok());
        assert!(energy(Some(Route::EdgeToCloud { edge: 0, cloud: 0 }), &task(8e7, 1e9), &x).is_err());
    }

    #[test]
    fn times_cycles_scales_exec_terms() {
        let mut x = inputs();
        x.times_cycles = true;
        let b = energy(Some(Route::ToEdge { edge: 0 }), &task(8e7, 1e9), &x).unwrap();
        assert!((b.exec_src - 0.1).abs() < 1e-15);
    }

    #[test]
    fn migration_cost_examples() {
        let t = task(10.0 * 8e6, 1e9);
        assert_eq!(migration_cost(&t, 0.0, PricingMode::PerMb).unwrap(), 0.0);
        assert!((migration_cost(&t, 0.40, PricingMode::PerMb).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(migration_cost(&t, 1e-9, PricingMode::PerCycle).unwrap(), 1.0);
        assert!(migration_cost(&t, -0.1, PricingMode::PerMb).is_err());
    }

    #[test]
    fn ux_examples() {
        let p = UxParams { w_l: 1.0, w_q: 0.0, w_r: 0.0, a_l: 1.0, b_l: 1.0, ..UxParams::default() };
        assert!((ux_rating(1.0, 0.0, 0.0, &p).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        let third = UxParams {
            w_l: 1.0 / 3.0,
            w_q: 1.0 / 3.0,
            w_r: 1.0 / 3.0,
            a_l: 1.0,
            a_q: 1.0,
            a_r: 1.0,
            ..UxParams::default()
        };
        assert!((ux_rating(0.0, 1e6, 1e6, &third).unwrap() - 1.0).abs() < 1e-12);
        assert!(ux_rating(1e6, 0.0, 0.0, &third).unwrap().abs() < 1e-12);
        assert!(ux_rating(-1.0, 0.0, 0.0, &third).is_err());
    }

    #[test]
    fn vehicle_ux_examples() {
        assert_eq!(vehicle_ux(&[0.5], true).unwrap(), 0.5);
        assert!((vehicle_ux(&[0.2, 0.4, 0.6], true).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(vehicle_ux(&[0.9], false).unwrap(), 0.0);
        assert!(matches!(vehicle_ux(&[], true), Err(Error::EmptyRatings)));
    }

    #[test]
    fn qos_boundaries_are_inclusive() {
        let t = Thresholds::default();
        let at = QosMetrics {
            latency: t.latency_s,
            energy: t.energy_j,
            cost: t.cost,
            ux: t.ux_min,
            reliability: t.reliability_min,
            quality: t.quality_min,
        };
        assert!(check_qos_constraints(&at, &t).is_empty());
        let over = QosMetrics { latency: t.latency_s + 1e-9, ..at };
        assert_eq!(check_qos_constraints(&over, &t), vec!["latency"]);
        let three = QosMetrics { energy: 1e9, ux: -1.0, quality: 0.0, ..at };
        assert_eq!(check_qos_constraints(&three, &t), vec!["energy", "ux", "quality"]);
        let wild =
            QosMetrics { latency: 1e300, energy: 1e300, cost: 1e300, ux: -1e300, reliability: -1.0, quality: -1.0 };
        assert!(check_qos_constraints(&wild, &Thresholds::vacuous()).is_empty());
    }

    #[test]
    fn ux_weights_must_sum_to_one() {
        let p = UxParams { w_l: 0.9, ..UxParams::default() };
        assert!(p.validate().is_err());
        assert!(UxParams::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn ux_decreasing_in_latency(l1 in 0.0f64..50.0, dl in 1e-6f64..50.0, q in 0.0f64..2.0, r in 0.0f64..2.0) {
            let p = UxParams::default();
            let a = ux_rating(l1, q, r, &p).unwrap();
            let b = ux_rating(l1 + dl, q, r, &p).unwrap();
            prop_assert!(a >= b);
            prop_assert!(a <= p.ceiling() + 1e-12 && b >= 0.0);
        }

        #[test]
        fn migration_cost_is_linear(mb in 0.0f64..100.0, price in 0.0f64..1.0) {
            let one = task(mb * 8e6, 1e9);
            let two = task(2.0 * mb * 8e6, 1e9);
            let c1 = migration_cost(&one, price, PricingMode::PerMb).unwrap();
            let c2 = migration_cost(&two, price, PricingMode::PerMb).unwrap();
            prop_assert!((c2 - 2.0 * c1).abs() <= 1e-12 * c2.abs().max(1.0));
        }
    }
}
