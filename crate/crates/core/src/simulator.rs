//! Forward simulation of stock, fleet choices and landings.
//!
//! Within a month every vessel sees beginning-of-month biomass, draws one
//! choice, and the resulting harvest is removed once at month end. The
//! unobserved patch attractiveness is `ξ = β·ln x`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fleet::{capture, choice_utilities, logit_shares, sample_choice, CaptureTech, UtilitySpec};
use crate::math::ln;
use crate::panel::{
    BuildOptions, CellMap, CostModel, MarketCounts, MarketPanel, PortPrice, RosterEntry, TripRecord,
};
use crate::patch_model::{step, BioParams, DispersionMatrix, PatchGraph, StockState};
use crate::period::Period;

#[derive(Debug, Clone, PartialEq)]
pub struct PortSpec {
    pub vessels: u32,
    /// Port-specific price coefficient; `None` uses the scenario's `a1`.
    pub price_coefficient: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub graph: PatchGraph,
    pub bio: BioParams,
    pub dispersion: DispersionMatrix,
    pub tech: CaptureTech,
    pub utility: UtilitySpec,
    pub ports: Vec<PortSpec>,
    pub cost: CostModel,
    pub start: Period,
    pub horizon: usize,
    pub initial_stock: Vec<f64>,
    /// `landed_price[port][t]`, per ton.
    pub landed_price: Vec<Vec<f64>>,
    /// `fuel_price[port][t]`.
    pub fuel_price: Vec<Vec<f64>>,
    /// `covariates[t][patch]`; empty when the model has no covariates.
    pub covariates: Vec<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl Scenario {
    pub fn n_patches(&self) -> usize {
        self.graph.n_patches()
    }

    pub fn n_ports(&self) -> usize {
        self.ports.len()
    }

    pub fn total_vessels(&self) -> u32 {
        self.ports.iter().map(|p| p.vessels).sum()
    }

    pub fn period(&self, t: usize) -> Period {
        self.start.offset(t as i64)
    }

    pub fn port_utility(&self, port: usize) -> UtilitySpec {
        UtilitySpec {
            a0: self.utility.a0,
            a1: self.ports[port].price_coefficient.unwrap_or(self.utility.a1),
            a2: self.utility.a2.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_patches();
        let n_ports = self.n_ports();
        if self.horizon < 2 {
            return Err(Error::InvalidParameter(format!("horizon {} must be >= 2", self.horizon)));
        }
        if n_ports != self.graph.n_ports() {
            return Err(Error::DimensionMismatch {
                context: "ports vs distance table",
                expected: self.graph.n_ports(),
                found: n_ports,
            });
        }
        if self.bio.n_patches() != n || self.dispersion.n_patches() != n {
            return Err(Error::DimensionMismatch {
                context: "biological parameters vs graph",
                expected: n,
                found: self.bio.n_patches(),
            });
        }
        if self.initial_stock.len() != n {
            return Err(Error::DimensionMismatch {
                context: "initial stock",
                expected: n,
                found: self.initial_stock.len(),
            });
        }
        for (k, (&x, &cap)) in self.initial_stock.iter().zip(self.bio.carrying_capacity()).enumerate() {
            if !(x > 0.0 && x <= cap) {
                return Err(Error::InvalidParameter(format!(
                    "initial stock {x} of patch {} must lie in (0, {cap}]",
                    k + 1
                )));
            }
        }
        if self.tech.rho.len() != self.utility.a2.len() {
            return Err(Error::DimensionMismatch {
                context: "capture vs utility covariates",
                expected: self.utility.a2.len(),
                found: self.tech.rho.len(),
            });
        }
        for (name, series) in [("landed", &self.landed_price), ("fuel", &self.fuel_price)] {
            if series.len() != n_ports {
                return Err(Error::DimensionMismatch { context: "price series ports", expected: n_ports, found: series.len() });
            }
            for s in series.iter() {
                if s.len() < self.horizon {
                    return Err(Error::InvalidParameter(format!(
                        "{name} price series shorter than the horizon"
                    )));
                }
            }
        }
        let n_cov = self.tech.rho.len();
        if n_cov > 0 {
            if self.covariates.len() < self.horizon {
                return Err(Error::InvalidParameter("covariate series shorter than the horizon".into()));
            }
            for row in &self.covariates[..self.horizon] {
                if row.len() != n || row.iter().any(|z| z.len() != n_cov) {
                    return Err(Error::DimensionMismatch { context: "covariate series", expected: n_cov, found: row.len() });
                }
            }
        }
        Ok(())
    }

    fn covariates_at(&self, t: usize, k: usize) -> &[f64] {
        if self.tech.rho.is_empty() { &[] } else { &self.covariates[t][k] }
    }

    pub fn prices(&self) -> Vec<PortPrice> {
        let mut out = Vec::with_capacity(self.n_ports() * self.horizon);
        for t in 0..self.horizon {
            for port in 0..self.n_ports() {
                out.push(PortPrice {
                    port,
                    period: self.period(t),
                    landed_price: self.landed_price[port][t],
                    fuel_price: self.fuel_price[port][t],
                });
            }
        }
        out
    }

    /// Every vessel is on its port's roster for the whole horizon. Vessel ids
    /// run from 1 in port order.
    pub fn roster(&self) -> Vec<RosterEntry> {
        let from = self.start;
        let to = self.period(self.horizon - 1);
        let mut out = Vec::new();
        let mut id = 1;
        for (port, spec) in self.ports.iter().enumerate() {
            for _ in 0..spec.vessels {
                out.push(RosterEntry { vessel_id: id, port, from, to });
                id += 1;
            }
        }
        out
    }

    pub fn covariate_map(&self) -> CellMap<Vec<f64>> {
        let mut out = CellMap::new();
        if !self.tech.rho.is_empty() {
            for t in 0..self.horizon {
                for k in 0..self.n_patches() {
                    out.insert((self.period(t), k), self.covariates[t][k].clone());
                }
            }
        }
        out
    }

    /// Choice utilities of every alternative for one port in month `t`.
    pub fn utilities(&self, port: usize, t: usize, x: &[f64]) -> Result<Vec<f64>> {
        let inputs = self.cost.price_inputs(&PortPrice {
            port,
            period: self.period(t),
            landed_price: self.landed_price[port][t],
            fuel_price: self.fuel_price[port][t],
        })?;
        let n = self.n_patches();
        let prices: Vec<f64> = (0..n)
            .map(|k| crate::fleet::net_price(&inputs, self.graph.distance(port, k)))
            .collect();
        let z: Vec<&[f64]> = (0..n).map(|k| self.covariates_at(t, k)).collect();
        let xi: Vec<f64> = x
            .iter()
            .map(|&v| if v > 0.0 { self.tech.beta * ln(v) } else { f64::NEG_INFINITY })
            .collect();
        choice_utilities(&self.port_utility(port), &prices, &z, &xi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub start: Period,
    /// Trip records, one per vessel-month; empty for expected-value runs.
    pub records: Vec<TripRecord>,
    pub counts: Vec<MarketCounts>,
    /// `biomass[t][k]` at the start of month `t`, for `t = 0..=months`.
    pub biomass: Vec<Vec<f64>>,
    pub effort: Vec<Vec<f64>>,
    pub harvest: Vec<Vec<f64>>,
    /// Patches floored at zero, per month.
    pub depleted: Vec<Vec<bool>>,
    /// Every patch reached zero before the horizon.
    pub collapsed: bool,
}

impl SimOutput {
    pub fn months(&self) -> usize {
        self.harvest.len()
    }

    pub fn period(&self, t: usize) -> Period {
        self.start.offset(t as i64)
    }

    /// Assembles the market panel directly from the choice counts.
    pub fn panel(&self, scenario: &Scenario, options: BuildOptions) -> Result<MarketPanel> {
        let mut prices = BTreeMap::new();
        for p in scenario.prices() {
            prices.insert((p.port, p.period), scenario.cost.price_inputs(&p)?);
        }
        MarketPanel::from_counts(
            self.counts.clone(),
            &prices,
            &scenario.graph,
            scenario.covariate_map(),
            options,
        )
    }

    /// `Σ_k` of the within-year mean biomass, per calendar year of the
    /// simulated months.
    pub fn annual_totals(&self) -> BTreeMap<i32, f64> {
        let mut sums: BTreeMap<i32, (f64, usize)> = BTreeMap::new();
        for t in 0..self.months() {
            let e = sums.entry(self.period(t).year).or_insert((0.0, 0));
            e.0 += self.biomass[t].iter().sum::<f64>();
            e.1 += 1;
        }
        sums.into_iter().map(|(y, (s, n))| (y, s / n as f64)).collect()
    }

    pub fn any_depletion(&self) -> bool {
        self.depleted.iter().flatten().any(|d| *d)
    }
}

/// How each month's choices are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Draws {
    Sampled,
    /// Vessel counts equal roster × analytic share (fractional).
    Expected,
}

/// Stochastic simulation: every vessel draws one Gumbel-perturbed choice per
/// month from its own random stream.
pub fn run(scenario: &Scenario) -> Result<SimOutput> {
    simulate(scenario, Draws::Sampled)
}

/// Noise-free simulation in which patch effort equals the expected number
/// of vessels choosing it. Produces counts but no trip records.
pub fn run_expected(scenario: &Scenario) -> Result<SimOutput> {
    simulate(scenario, Draws::Expected)
}

fn simulate(scenario: &Scenario, draws: Draws) -> Result<SimOutput> {
    scenario.validate()?;
    let n = scenario.n_patches();
    let n_ports = scenario.n_ports();
    let roster = scenario.roster();
    let mut rngs: Vec<ChaCha8Rng> = roster
        .iter()
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
            rng.set_stream(v.vessel_id as u64);
            rng
        })
        .collect();

    let mut state = StockState::new(scenario.initial_stock.clone(), 0)?;
    let mut out = SimOutput {
        start: scenario.start,
        records: Vec::new(),
        counts: Vec::new(),
        biomass: vec![state.x.clone()],
        effort: Vec::new(),
        harvest: Vec::new(),
        depleted: Vec::new(),
        collapsed: false,
    };

    for t in 0..scenario.horizon {
        if state.x.iter().all(|x| *x == 0.0) {
            out.collapsed = true;
            break;
        }
        let period = scenario.period(t);
        let mut chosen = vec![vec![0.0; n]; n_ports];
        let mut month_choices: Vec<Option<usize>> = Vec::with_capacity(roster.len());
        let utilities: Vec<Vec<f64>> =
            (0..n_ports).map(|j| scenario.utilities(j, t, &state.x)).collect::<Result<_>>()?;
        match draws {
            Draws::Sampled => {
                for (v, rng) in roster.iter().zip(rngs.iter_mut()) {
                    let alt = sample_choice(&utilities[v.port], rng)?;
                    let patch = alt.checked_sub(1);
                    if let Some(k) = patch {
                        chosen[v.port][k] += 1.0;
                    }
                    month_choices.push(patch);
                }
            }
            Draws::Expected => {
                for j in 0..n_ports {
                    let shares = logit_shares(&utilities[j]);
                    let vessels = scenario.ports[j].vessels as f64;
                    for k in 0..n {
                        chosen[j][k] = vessels * shares[k + 1];
                    }
                }
            }
        }
        let effort: Vec<f64> = (0..n).map(|k| chosen.iter().map(|c| c[k]).sum()).collect();
        let harvest: Vec<f64> = (0..n)
            .map(|k| capture(&scenario.tech, effort[k], state.x[k], scenario.covariates_at(t, k)))
            .collect::<Result<_>>()?;
        let per_trip: Vec<f64> =
            (0..n).map(|k| if effort[k] > 0.0 { harvest[k] / effort[k] } else { 0.0 }).collect();

        if draws == Draws::Sampled {
            for (v, patch) in roster.iter().zip(&month_choices) {
                out.records.push(TripRecord {
                    vessel_id: v.vessel_id,
                    port: v.port,
                    period,
                    patch: *patch,
                    catch_tons: patch.map_or(0.0, |k| per_trip[k]),
                });
            }
        }
        for (j, c) in chosen.into_iter().enumerate() {
            if scenario.ports[j].vessels == 0 {
                continue;
            }
            let catch = (0..n).map(|k| c[k] * per_trip[k]).collect();
            out.counts.push(MarketCounts {
                port: j,
                period,
                roster: scenario.ports[j].vessels as f64,
                effort: c.clone(),
                chosen: c,
                catch,
            });
        }

        let next = step(&state, &scenario.bio, &scenario.dispersion, &harvest)?;
        out.effort.push(effort);
        out.harvest.push(harvest);
        out.depleted.push(next.depleted);
        state = next.state;
        out.biomass.push(state.x.clone());
    }
    Ok(out)
}

/// Synthetic desk-scale scenario: eight patches in a four-by-two grid
/// (numbered row by row), four ports on the coast, 120 vessels and 48
/// months from January 2001. Magnitudes are illustrative only.
pub fn default_scenario() -> Scenario {
    desk_scenario(48)
}

/// The desk scenario with price series generated for `horizon` months.
pub fn desk_scenario(horizon: usize) -> Scenario {
    const ROWS: usize = 4;
    const COLS: usize = 2;
    const N_PORTS: usize = 4;
    const SPACING: f64 = 30.0;
    let n = ROWS * COLS;

    // Ports sit west of column 0, spread along the rows.
    let port_distances: Vec<Vec<f64>> = (0..N_PORTS)
        .map(|j| {
            let py = j as f64 * (ROWS - 1) as f64 / (N_PORTS - 1) as f64 + 0.15;
            (0..n)
                .map(|k| {
                    let (r, c) = ((k / COLS) as f64, (k % COLS) as f64);
                    let dx = c + 0.6;
                    let dy = r - py;
                    10.0 + SPACING * crate::math::sqrt(dx * dx + dy * dy)
                })
                .collect()
        })
        .collect();
    let graph = PatchGraph::grid(ROWS, COLS, port_distances).expect("grid is valid");

    // Capacities spread log-normally around a common mean.
    const MEAN_CAPACITY: f64 = 250e3;
    let log_spread = [-0.3, 0.15, -0.1, 0.25, 0.5, -0.4, 0.05, -0.15];
    let capacity: Vec<f64> = log_spread.iter().map(|z| MEAN_CAPACITY * libm::exp(*z)).collect();
    let bio = BioParams::new(0.1, capacity.clone()).expect("positive parameters");

    // Detailed balance: the flux c between neighbours is symmetric and the
    // rate from h into k is c / K_h, so the unfished equilibrium is x = K and
    // the whole-fishery logistic stays exact when every patch starts at the
    // same fraction of its capacity.
    let flux_weight = [1.0, 0.6, 1.4, 0.8, 0.5, 1.2, 0.7, 1.1, 0.9, 1.3];
    let mut rates = Vec::new();
    for (i, (h, k)) in graph.edges().into_iter().enumerate() {
        let flux = 0.05 * MEAN_CAPACITY * flux_weight[i % flux_weight.len()];
        rates.push(((h, k), flux / capacity[h]));
        rates.push(((k, h), flux / capacity[k]));
    }
    let dispersion = DispersionMatrix::from_rates(
        &graph,
        &rates,
        crate::patch_model::RowSumConvention::ConservativeZero,
        None,
    )
    .expect("rates follow the grid");

    // A typical cell: 12 vessels on half the mean capacity lands 1.5% of it.
    let typical_stock = 0.5 * MEAN_CAPACITY;
    let gamma = 0.015 * MEAN_CAPACITY / (libm::pow(12.0, 1.05) * typical_stock);
    let tech = CaptureTech::new(gamma, 1.05, 1.0, Vec::new()).expect("positive parameters");
    let cost = CostModel { vessel_fuel_rate: 40.0, expected_catch_per_trip: 150.0 };

    let landed_price: Vec<Vec<f64>> = (0..N_PORTS)
        .map(|j| {
            (0..horizon)
                .map(|t| {
                    let season = libm::sin(2.0 * PI * t as f64 / 12.0 + j as f64);
                    let drift = 1.0 + 0.004 * t as f64;
                    250.0 * drift * (1.0 + 0.08 * season) + 5.0 * j as f64
                })
                .collect()
        })
        .collect();
    let fuel_price: Vec<Vec<f64>> = (0..N_PORTS)
        .map(|j| {
            (0..horizon)
                .map(|t| 0.6 * (1.0 + 0.15 * libm::cos(2.0 * PI * t as f64 / 7.0 + 0.5 * j as f64)))
                .collect()
        })
        .collect();

    let price_coefficients = [0.9, 1.0, 1.1, 1.2];
    // a0 puts a typical patch near a 0.09 share against a 0.25 outside share.
    let a0 = ln(0.09 / 0.25) - 1.05 * ln(230.0) - ln(typical_stock);
    let utility = UtilitySpec { a0, a1: 1.05, a2: Vec::new() };

    let initial_stock = capacity.iter().map(|k| 0.2 * k).collect();

    Scenario {
        graph,
        bio,
        dispersion,
        tech,
        utility,
        ports: price_coefficients
            .iter()
            .map(|&a1| PortSpec { vessels: 30, price_coefficient: Some(a1) })
            .collect(),
        cost,
        start: Period::new(2001, 1).expect("valid month"),
        horizon,
        initial_stock,
        landed_price,
        fuel_price,
        covariates: Vec::new(),
        seed: 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_shape() {
        let s = default_scenario();
        s.validate().unwrap();
        assert_eq!(s.n_patches(), 8);
        assert_eq!(s.n_ports(), 4);
        assert_eq!(s.total_vessels(), 120);
        assert!(s.graph.is_adjacent(2, 4));
        assert!(!s.graph.is_adjacent(0, 3));
        for h in 0..8 {
            for k in 0..8 {
                assert_eq!(s.graph.is_adjacent(h, k), s.graph.is_adjacent(k, h));
            }
        }
    }

    #[test]
    fn record_count_is_vessels_times_months() {
        let out = run(&default_scenario()).unwrap();
        assert_eq!(out.records.len(), 120 * 48);
        assert!(!out.collapsed);
    }

    #[test]
    fn catch_is_zero_exactly_for_outside() {
        let out = run(&default_scenario()).unwrap();
        for r in &out.records {
            assert_eq!(r.patch.is_none(), r.catch_tons == 0.0, "{r:?}");
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let s = default_scenario();
        assert_eq!(run(&s).unwrap(), run(&s).unwrap());
    }

    #[test]
    fn trajectory_satisfies_step() {
        let s = default_scenario();
        let out = run(&s).unwrap();
        for t in 0..out.months() {
            let state = StockState::new(out.biomass[t].clone(), t).unwrap();
            let next = step(&state, &s.bio, &s.dispersion, &out.harvest[t]).unwrap();
            assert_eq!(next.state.x, out.biomass[t + 1]);
        }
    }

    #[test]
    fn zero_fleet_follows_unharvested_path() {
        let mut s = default_scenario();
        s.ports.iter_mut().for_each(|p| p.vessels = 0);
        let out = run(&s).unwrap();
        assert!(out.records.is_empty());
        let mut state = StockState::new(s.initial_stock.clone(), 0).unwrap();
        for t in 0..s.horizon {
            assert!(out.harvest[t].iter().all(|h| *h == 0.0));
            state = step(&state, &s.bio, &s.dispersion, &[0.0; 8]).unwrap().state;
            assert_eq!(state.x, out.biomass[t + 1]);
        }
    }
}
