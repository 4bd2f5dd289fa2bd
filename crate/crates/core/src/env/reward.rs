use serde::{Deserialize, Serialize};

/// Per-objective rewards in weight order: UX, utility, latency, energy, cost.
///
/// The last three are costs; [`scalarize`] subtracts them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub r_ux: f64,
    pub r_util: f64,
    pub r_lat: f64,
    pub r_en: f64,
    pub r_cost: f64,
}

pub const OBJECTIVES: [&str; 5] = ["ux", "utility", "latency", "energy", "cost"];

impl RewardVector {
    pub fn from_array(x: [f64; 5]) -> Self {
        RewardVector { r_ux: x[0], r_util: x[1], r_lat: x[2], r_en: x[3], r_cost: x[4] }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.r_ux, self.r_util, self.r_lat, self.r_en, self.r_cost]
    }

    /// Rewards with cost objectives negated, so that larger is better for
    /// every component and `scalarize(ω, r) = Σ ω_ι·signed_ι`.
    pub fn signed(&self) -> [f64; 5] {
        [self.r_ux, self.r_util, -self.r_lat, -self.r_en, -self.r_cost]
    }
}

/// `ω1·r_ux + ω2·r_util − (ω3·r_lat + ω4·r_en + ω5·r_cost)`.
pub fn scalarize(w: &[f64; 5], r: &RewardVector) -> f64 {
    w[0] * r.r_ux + w[1] * r.r_util - (w[2] * r.r_lat + w[3] * r.r_en + w[4] * r.r_cost)
}

/// Satisfied / violated instance counts for constraints C1 to C10.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub satisfied: [usize; 10],
    pub violated: [usize; 10],
}

impl FeasibilityReport {
    pub fn tally(&mut self, constraint: usize, ok: bool) {
        let k = constraint - 1;
        if ok {
            self.satisfied[k] += 1;
        } else {
            self.violated[k] += 1;
        }
    }

    pub fn violations(&self, constraint: usize) -> usize {
        self.violated[constraint - 1]
    }

    pub fn add(&mut self, other: &FeasibilityReport) {
        for k in 0..10 {
            self.satisfied[k] += other.satisfied[k];
            self.violated[k] += other.violated[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalarize_examples() {
        let r = RewardVector::from_array([2.0, 3.0, 1.0, 1.0, 1.0]);
        assert_eq!(scalarize(&[0.0; 5], &r), 0.0);
        assert_eq!(scalarize(&[1.0; 5], &r), 2.0);
    }

    #[test]
    fn signed_matches_scalarize() {
        let r = RewardVector::from_array([0.3, -1.2, 0.7, 2.0, 0.1]);
        let w = [0.1, 0.2, 0.3, 0.25, 0.15];
        let s = r.signed();
        let dot: f64 = w.iter().zip(s).map(|(a, b)| a * b).sum();
        assert!((dot - scalarize(&w, &r)).abs() < 1e-12);
    }
}
