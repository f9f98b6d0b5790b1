//! Capture technology, net prices and the random-utility patch choice.
//!
//! Alternatives are indexed with the outside option (not fishing) at `0` and
//! patch `k` (0-based) at `k + 1`.

use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{exp, ln, powf};

/// Cobb-Douglas capture `γ·E^α·x^β·Π z^ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureTech {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rho: Vec<f64>,
}

impl CaptureTech {
    pub fn new(gamma: f64, alpha: f64, beta: f64, rho: Vec<f64>) -> Result<Self> {
        for (name, v) in [("gamma", gamma), ("alpha", alpha), ("beta", beta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(alloc::format!("{name} = {v} must be > 0")));
            }
        }
        Ok(Self { gamma, alpha, beta, rho })
    }
}

pub fn capture(tech: &CaptureTech, effort: f64, biomass: f64, z: &[f64]) -> Result<f64> {
    if z.len() != tech.rho.len() {
        return Err(Error::DimensionMismatch {
            context: "capture covariates",
            expected: tech.rho.len(),
            found: z.len(),
        });
    }
    if let Some((index, &value)) = z.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositiveCovariate { index, value });
    }
    if !(effort >= 0.0 && biomass >= 0.0) {
        return Err(Error::InvalidParameter(alloc::format!(
            "effort {effort} and biomass {biomass} must be >= 0"
        )));
    }
    if effort == 0.0 || biomass == 0.0 {
        return Ok(0.0);
    }
    let covariates: f64 = z.iter().zip(&tech.rho).map(|(z, rho)| powf(*z, *rho)).product();
    Ok(tech.gamma * powf(effort, tech.alpha) * powf(biomass, tech.beta) * covariates)
}

/// Inputs to the net price of one port-period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceInputs {
    /// Landed price per ton.
    pub landed_price: f64,
    /// Currency per volume of fuel.
    pub fuel_price: f64,
    /// Fuel volume per nautical mile.
    pub vessel_fuel_rate: f64,
    /// Tons per trip, used to express the trip cost per ton.
    pub expected_catch_per_trip: f64,
}

impl PriceInputs {
    pub fn new(
        landed_price: f64,
        fuel_price: f64,
        vessel_fuel_rate: f64,
        expected_catch_per_trip: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("landed_price", landed_price),
            ("fuel_price", fuel_price),
            ("vessel_fuel_rate", vessel_fuel_rate),
            ("expected_catch_per_trip", expected_catch_per_trip),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(alloc::format!("{name} = {v} must be > 0")));
            }
        }
        Ok(Self { landed_price, fuel_price, vessel_fuel_rate, expected_catch_per_trip })
    }

    /// Round-trip fuel cost of a trip to a patch `distance` miles away, per ton landed.
    pub fn cost_per_ton(&self, distance: f64) -> f64 {
        2.0 * distance * self.vessel_fuel_rate * self.fuel_price / self.expected_catch_per_trip
    }
}

/// Landed price net of the per-ton trip cost. Negative for unprofitable patches.
pub fn net_price(inputs: &PriceInputs, distance: f64) -> f64 {
    inputs.landed_price - inputs.cost_per_ton(distance)
}

/// Linear-in-logs utility `a0 + a1·ln p + a2·ln z + ξ`; the noise scale is fixed at one.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilitySpec {
    pub a0: f64,
    pub a1: f64,
    pub a2: Vec<f64>,
}

impl UtilitySpec {
    pub const SCALE: f64 = 1.0;
}

/// Utility of every alternative, outside option first (normalized to zero).
/// Patches with a non-positive net price get `-inf` (infeasible).
pub fn choice_utilities(
    spec: &UtilitySpec,
    net_prices: &[f64],
    z: &[&[f64]],
    xi: &[f64],
) -> Result<Vec<f64>> {
    let n = net_prices.len();
    if xi.len() != n {
        return Err(Error::DimensionMismatch { context: "unobserved terms", expected: n, found: xi.len() });
    }
    if z.len() != n {
        return Err(Error::DimensionMismatch { context: "covariate rows", expected: n, found: z.len() });
    }
    let mut u = Vec::with_capacity(n + 1);
    u.push(0.0);
    for k in 0..n {
        let zk = z[k];
        if zk.len() != spec.a2.len() {
            return Err(Error::DimensionMismatch {
                context: "utility covariates",
                expected: spec.a2.len(),
                found: zk.len(),
            });
        }
        if let Some((index, &value)) = zk.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::NonPositiveCovariate { index, value });
        }
        let p = net_prices[k];
        if !(p > 0.0) || xi[k] == f64::NEG_INFINITY {
            u.push(f64::NEG_INFINITY);
            continue;
        }
        let covariate_term: f64 = zk.iter().zip(&spec.a2).map(|(z, a)| a * ln(*z)).sum();
        u.push(spec.a0 + spec.a1 * ln(p) + covariate_term + xi[k]);
    }
    Ok(u)
}

/// Multinomial logit shares over all alternatives (outside option included in
/// `utilities`). `-inf` utilities get share zero.
pub fn logit_shares(utilities: &[f64]) -> Vec<f64> {
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return alloc::vec![0.0; utilities.len()];
    }
    let weights: Vec<f64> = utilities.iter().map(|u| exp(u - max)).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Standard Gumbel draw by inversion.
fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // random::<f64>() is in [0, 1); map to (0, 1).
    let u: f64 = 1.0 - rng.random::<f64>();
    -ln(-ln(u))
}

/// Utility-maximizing alternative after adding i.i.d. Gumbel(0, 1) noise.
pub fn sample_choice<R: Rng + ?Sized>(utilities: &[f64], rng: &mut R) -> Result<usize> {
    if !utilities.iter().any(|u| u.is_finite()) {
        return Err(Error::NoFeasibleAlternative);
    }
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, u) in utilities.iter().enumerate() {
        // Draw for every alternative so the stream position does not depend
        // on which alternatives are feasible.
        let noise = gumbel(rng);
        if *u == f64::NEG_INFINITY {
            continue;
        }
        let value = u + noise;
        if value > best_value {
            best_value = value;
            best = i;
        }
    }
    Ok(best)
}

pub fn sample_choice_seeded(utilities: &[f64], seed: u64) -> Result<usize> {
    sample_choice(utilities, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Noise-free argmax. Ties resolve to the lowest index.
pub fn deterministic_choice(utilities: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &u) in utilities.iter().enumerate() {
        if u == f64::NEG_INFINITY {
            continue;
        }
        if best.is_none_or(|(_, b)| u > b) {
            best = Some((i, u));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::NoFeasibleAlternative)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn capture_examples() {
        let unit = CaptureTech::new(1.0, 1.0, 1.0, vec![]).unwrap();
        assert_eq!(capture(&unit, 2.0, 3.0, &[]).unwrap(), 6.0);
        assert_eq!(capture(&unit, 0.0, 3.0, &[]).unwrap(), 0.0);
        let t2001 = CaptureTech::new(125.352, 1.07982, 1.0, vec![]).unwrap();
        assert!((capture(&t2001, 1.0, 1.0, &[]).unwrap() - 125.352).abs() < 1e-12);
        let with_z = CaptureTech::new(1.0, 1.0, 1.0, vec![0.5]).unwrap();
        assert!(matches!(
            capture(&with_z, 1.0, 1.0, &[0.0]),
            Err(Error::NonPositiveCovariate { index: 0, .. })
        ));
    }

    #[test]
    fn net_price_examples() {
        let inputs = PriceInputs::new(100.0, 1.0, 0.5, 2.0).unwrap();
        assert!((net_price(&inputs, 20.0) - 90.0).abs() < 1e-12);
        assert!(net_price(&inputs, 40.0) < net_price(&inputs, 20.0));
        // Break-even: cost per ton equals the landed price.
        assert!(net_price(&inputs, 200.0).abs() < 1e-12);
    }

    #[test]
    fn utilities_match_hand_evaluation() {
        let spec = UtilitySpec { a0: 4.8311, a1: 0.1500, a2: vec![] };
        let u = choice_utilities(&spec, &[1.0], &[&[]], &[0.0]).unwrap();
        assert_eq!(u[0], 0.0);
        assert!((u[1] - 4.8311).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_price_is_infeasible() {
        let spec = UtilitySpec { a0: 0.0, a1: 1.0, a2: vec![] };
        let u = choice_utilities(&spec, &[-5.0, 10.0], &[&[], &[]], &[0.0, 0.0]).unwrap();
        assert_eq!(u[1], f64::NEG_INFINITY);
        assert!(u[2].is_finite());
    }

    #[test]
    fn raising_price_raises_utility() {
        let spec = UtilitySpec { a0: 0.0, a1: 0.7, a2: vec![] };
        let a = choice_utilities(&spec, &[10.0, 10.0], &[&[], &[]], &[0.0, 0.0]).unwrap();
        let b = choice_utilities(&spec, &[10.0, 12.0], &[&[], &[]], &[0.0, 0.0]).unwrap();
        assert!(b[2] > a[2]);
        assert_eq!(a[1], b[1]);
    }

    #[test]
    fn logit_examples() {
        let s = logit_shares(&[0.0; 5]);
        assert!(s.iter().all(|v| (v - 0.2).abs() < 1e-15));

        let s = logit_shares(&[0.0, f64::NEG_INFINITY, 0.0]);
        assert_eq!(s[1], 0.0);
        assert!((s[0] - 0.5).abs() < 1e-15 && (s[2] - 0.5).abs() < 1e-15);

        let s = logit_shares(&[0.0, ln(2.0), ln(3.0)]);
        assert!((s[0] - 1.0 / 6.0).abs() < 1e-15);
        assert!((s[1] - 2.0 / 6.0).abs() < 1e-15);
        assert!((s[2] - 3.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn logit_is_overflow_safe() {
        let s = logit_shares(&[0.0, 800.0, 800.0]);
        assert!((s[1] - 0.5).abs() < 1e-15);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_feasible_alternative_always_chosen() {
        let u = [f64::NEG_INFINITY, 0.3, f64::NEG_INFINITY];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            assert_eq!(sample_choice(&u, &mut rng).unwrap(), 1);
        }
        assert_eq!(
            sample_choice(&[f64::NEG_INFINITY; 3], &mut rng),
            Err(Error::NoFeasibleAlternative)
        );
    }

    #[test]
    fn sampling_is_reproducible() {
        let u = [0.0, 0.4, -0.2, 1.1];
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_choice(&u, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(17), draw(17));
        assert_eq!(sample_choice_seeded(&u, 3).unwrap(), sample_choice_seeded(&u, 3).unwrap());
    }

    #[test]
    fn frequencies_converge_to_logit() {
        // Two patches at utility 0 plus the outside option.
        let u = [0.0, 0.0, 0.0];
        let analytic = logit_shares(&u);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 3];
        let draws = 100_000;
        for _ in 0..draws {
            counts[sample_choice(&u, &mut rng).unwrap()] += 1;
        }
        for (c, s) in counts.iter().zip(&analytic) {
            assert!((*c as f64 / draws as f64 - s).abs() < 0.01);
        }
    }

    #[test]
    fn deterministic_choice_is_monotone_invariant() {
        let u = [0.0, 0.4, -0.2, 1.1];
        let transformed: Vec<f64> = u.iter().map(|v| 3.0 * v + 7.0).collect();
        assert_eq!(deterministic_choice(&u).unwrap(), 3);
        assert_eq!(deterministic_choice(&transformed).unwrap(), 3);
    }
}
