//! Port × month markets built from vessel-trip records.
//!
//! A market is one home port in one month; its products are the patches and
//! the outside option is not fishing that month. Shares are taken over the
//! port's vessel roster, so vessels that never reported a trip count toward
//! the outside share.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fleet::{net_price, PriceInputs};
use crate::patch_model::PatchGraph;
use crate::period::Period;

/// Map keyed by `(period, patch)`.
pub type CellMap<T> = BTreeMap<(Period, usize), T>;

/// One vessel-trip landing row. `patch == None` is the outside sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub vessel_id: u32,
    /// 0-based port index.
    pub port: usize,
    pub period: Period,
    /// 0-based patch index.
    pub patch: Option<usize>,
    pub catch_tons: f64,
}

/// A vessel's membership in a port fleet over an inclusive month range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RosterEntry {
    pub vessel_id: u32,
    pub port: usize,
    pub from: Period,
    pub to: Period,
}

/// Landed and fuel prices for one port-month.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortPrice {
    pub port: usize,
    pub period: Period,
    pub landed_price: f64,
    pub fuel_price: f64,
}

/// Fleet-level constants turning fuel prices into a cost per ton.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub vessel_fuel_rate: f64,
    pub expected_catch_per_trip: f64,
}

impl CostModel {
    pub fn price_inputs(&self, price: &PortPrice) -> Result<PriceInputs> {
        PriceInputs::new(
            price.landed_price,
            price.fuel_price,
            self.vessel_fuel_rate,
            self.expected_catch_per_trip,
        )
    }
}

/// One patch within a market.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRow {
    pub patch: usize,
    pub share: f64,
    /// Trips from this port to the patch.
    pub effort: f64,
    /// Tons landed by this port's vessels from the patch.
    pub catch: f64,
    pub net_price: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    pub port: usize,
    pub period: Period,
    /// Vessels that could have fished (share denominator).
    pub roster: f64,
    pub outside_share: f64,
    /// One row per patch, in patch order.
    pub rows: Vec<PanelRow>,
    /// Set when the outside share or any patch share is zero.
    pub flagged: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PanelDiagnostics {
    pub markets: usize,
    pub flagged_markets: usize,
    pub zero_share_cells: usize,
    pub zero_outside_markets: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketPanel {
    n_ports: usize,
    n_patches: usize,
    markets: Vec<Market>,
    covariates: CellMap<Vec<f64>>,
    n_covariates: usize,
    pub diagnostics: PanelDiagnostics,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BuildOptions {
    /// Pseudo-count added to every alternative's vessel count before
    /// computing shares. `None` leaves zero shares in place.
    pub pseudo_count: Option<f64>,
}

/// Choice counts for one market, the common input of record-based and
/// analytic panels.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketCounts {
    pub port: usize,
    pub period: Period,
    pub roster: f64,
    /// Vessel count per patch (may be fractional).
    pub chosen: Vec<f64>,
    pub effort: Vec<f64>,
    pub catch: Vec<f64>,
}

impl MarketPanel {
    /// Assembles a panel from per-market choice counts and prices.
    pub fn from_counts(
        counts: Vec<MarketCounts>,
        prices: &BTreeMap<(usize, Period), PriceInputs>,
        graph: &PatchGraph,
        covariates: CellMap<Vec<f64>>,
        options: BuildOptions,
    ) -> Result<Self> {
        let n_patches = graph.n_patches();
        let n_covariates = covariates.values().next().map_or(0, Vec::len);
        if let Some(bad) = covariates.values().find(|z| z.len() != n_covariates) {
            return Err(Error::DimensionMismatch {
                context: "covariate vector",
                expected: n_covariates,
                found: bad.len(),
            });
        }
        let mut diagnostics = PanelDiagnostics::default();
        let mut markets = Vec::with_capacity(counts.len());
        for c in counts {
            if c.port >= graph.n_ports() {
                return Err(Error::Data(format!("unknown port id {}", c.port + 1)));
            }
            let inputs = prices.get(&(c.port, c.period)).ok_or_else(|| {
                Error::Data(format!("no price row for port {} in {}", c.port + 1, c.period))
            })?;
            let active: f64 = c.chosen.iter().sum();
            if active > c.roster + 1e-9 {
                return Err(Error::Data(format!(
                    "port {} in {}: {active} active vessels exceed the roster of {}",
                    c.port + 1,
                    c.period,
                    c.roster
                )));
            }
            let outside_count = (c.roster - active).max(0.0);
            let (pseudo, denom) = match options.pseudo_count {
                Some(a) => (a, c.roster + a * (n_patches + 1) as f64),
                None => (0.0, c.roster),
            };
            let rows: Vec<PanelRow> = (0..n_patches)
                .map(|k| PanelRow {
                    patch: k,
                    share: (c.chosen[k] + pseudo) / denom,
                    effort: c.effort[k],
                    catch: c.catch[k],
                    net_price: net_price(inputs, graph.distance(c.port, k)),
                })
                .collect();
            let outside_share = (outside_count + pseudo) / denom;
            let zero_cells = rows.iter().filter(|r| r.share == 0.0).count();
            let flagged = zero_cells > 0 || outside_share == 0.0;
            diagnostics.markets += 1;
            diagnostics.zero_share_cells += zero_cells;
            if outside_share == 0.0 {
                diagnostics.zero_outside_markets += 1;
            }
            if flagged {
                diagnostics.flagged_markets += 1;
            }
            markets.push(Market {
                port: c.port,
                period: c.period,
                roster: c.roster,
                outside_share,
                rows,
                flagged,
            });
        }
        markets.sort_by_key(|m| (m.period, m.port));
        Ok(Self {
            n_ports: graph.n_ports(),
            n_patches,
            markets,
            covariates,
            n_covariates,
            diagnostics,
        })
    }

    pub fn n_ports(&self) -> usize {
        self.n_ports
    }

    pub fn n_patches(&self) -> usize {
        self.n_patches
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn markets(&self) -> &[Market] {
        &self.markets
    }

    pub fn periods(&self) -> Vec<Period> {
        let set: BTreeSet<Period> = self.markets.iter().map(|m| m.period).collect();
        set.into_iter().collect()
    }

    pub fn years(&self) -> Vec<i32> {
        let set: BTreeSet<i32> = self.markets.iter().map(|m| m.period.year).collect();
        set.into_iter().collect()
    }

    /// Covariates of a patch-month; empty when the panel has none.
    pub fn covariates(&self, period: Period, patch: usize) -> &[f64] {
        self.covariates.get(&(period, patch)).map_or(&[], Vec::as_slice)
    }

    /// Total trips to each patch per month, summed over ports.
    pub fn patch_effort(&self) -> CellMap<f64> {
        self.patch_totals(|r| r.effort)
    }

    /// Total tons landed from each patch per month, summed over ports.
    pub fn patch_catch(&self) -> CellMap<f64> {
        self.patch_totals(|r| r.catch)
    }

    fn patch_totals(&self, f: impl Fn(&PanelRow) -> f64) -> CellMap<f64> {
        let mut out = CellMap::new();
        for m in &self.markets {
            for r in &m.rows {
                *out.entry((m.period, r.patch)).or_insert(0.0) += f(r);
            }
        }
        out
    }

    /// Checks share adding-up and effort/catch consistency.
    pub fn check_invariants(&self) -> Result<()> {
        for m in &self.markets {
            let total: f64 = m.outside_share + m.rows.iter().map(|r| r.share).sum::<f64>();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Data(format!(
                    "shares of port {} in {} sum to {total}",
                    m.port + 1,
                    m.period
                )));
            }
            for r in &m.rows {
                if r.share < 0.0 || (r.catch > 0.0 && !(r.effort > 0.0)) {
                    return Err(Error::Data(format!(
                        "inconsistent row: port {} patch {} in {}",
                        m.port + 1,
                        r.patch + 1,
                        m.period
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Number of roster vessels per `(port, period)` over `periods`.
pub fn roster_counts(
    roster: &[RosterEntry],
    periods: &BTreeSet<Period>,
) -> BTreeMap<(usize, Period), usize> {
    let mut out = BTreeMap::new();
    for entry in roster {
        for p in periods.range(entry.from..=entry.to) {
            *out.entry((entry.port, *p)).or_insert(0) += 1;
        }
    }
    out
}

/// Aggregates trip records into the market panel.
///
/// A vessel reporting trips to several patches in one month splits its one
/// choice equally among them; effort counts every trip.
pub fn build_panel(
    records: &[TripRecord],
    roster: &[RosterEntry],
    prices: &[PortPrice],
    cost: CostModel,
    graph: &PatchGraph,
    covariates: CellMap<Vec<f64>>,
    options: BuildOptions,
) -> Result<MarketPanel> {
    let n_patches = graph.n_patches();
    for r in records {
        if r.port >= graph.n_ports() {
            return Err(Error::Data(format!("vessel {}: unknown port id {}", r.vessel_id, r.port + 1)));
        }
        if let Some(k) = r.patch {
            graph.check_patch(k).map_err(|_| {
                Error::Data(format!("vessel {}: unknown patch id {}", r.vessel_id, k + 1))
            })?;
        }
        if !(r.catch_tons >= 0.0 && r.catch_tons.is_finite()) {
            return Err(Error::Data(format!(
                "vessel {}: catch {} must be finite and >= 0",
                r.vessel_id, r.catch_tons
            )));
        }
    }
    let periods: BTreeSet<Period> = records.iter().map(|r| r.period).collect();
    let rosters = roster_counts(roster, &periods);

    // Patches visited per (port, period, vessel).
    let mut visits: BTreeMap<(usize, Period, u32), BTreeSet<usize>> = BTreeMap::new();
    let mut effort: BTreeMap<(usize, Period), Vec<f64>> = BTreeMap::new();
    let mut catch: BTreeMap<(usize, Period), Vec<f64>> = BTreeMap::new();
    for r in records {
        let key = (r.port, r.period);
        effort.entry(key).or_insert_with(|| vec![0.0; n_patches]);
        catch.entry(key).or_insert_with(|| vec![0.0; n_patches]);
        if let Some(k) = r.patch {
            visits.entry((r.port, r.period, r.vessel_id)).or_default().insert(k);
            effort.get_mut(&key).unwrap()[k] += 1.0;
            catch.get_mut(&key).unwrap()[k] += r.catch_tons;
        }
    }
    let mut chosen: BTreeMap<(usize, Period), Vec<f64>> = BTreeMap::new();
    for ((port, period, _), patches) in &visits {
        let entry = chosen.entry((*port, *period)).or_insert_with(|| vec![0.0; n_patches]);
        let weight = 1.0 / patches.len() as f64;
        for &k in patches {
            entry[k] += weight;
        }
    }

    let mut price_map = BTreeMap::new();
    for p in prices {
        price_map.insert((p.port, p.period), cost.price_inputs(p)?);
    }

    let mut counts = Vec::new();
    for (&(port, period), roster_n) in &rosters {
        let key = (port, period);
        counts.push(MarketCounts {
            port,
            period,
            roster: *roster_n as f64,
            chosen: chosen.remove(&key).unwrap_or_else(|| vec![0.0; n_patches]),
            effort: effort.remove(&key).unwrap_or_else(|| vec![0.0; n_patches]),
            catch: catch.remove(&key).unwrap_or_else(|| vec![0.0; n_patches]),
        });
    }
    // Activity in a market with no roster entry.
    if let Some((port, period)) = chosen.keys().next() {
        return Err(Error::Data(format!(
            "port {} in {period}: active vessels but an empty roster",
            port + 1
        )));
    }
    MarketPanel::from_counts(counts, &price_map, graph, covariates, options)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph() -> PatchGraph {
        PatchGraph::new(2, &[(0, 1)], vec![vec![10.0, 20.0]]).unwrap()
    }

    fn p(m: u8) -> Period {
        Period::new(2001, m).unwrap()
    }

    fn trip(vessel_id: u32, patch: Option<usize>, catch_tons: f64) -> TripRecord {
        TripRecord { vessel_id, port: 0, period: p(1), patch, catch_tons }
    }

    fn roster(n: u32) -> Vec<RosterEntry> {
        (1..=n).map(|v| RosterEntry { vessel_id: v, port: 0, from: p(1), to: p(12) }).collect()
    }

    fn prices() -> Vec<PortPrice> {
        vec![PortPrice { port: 0, period: p(1), landed_price: 100.0, fuel_price: 1.0 }]
    }

    const COST: CostModel = CostModel { vessel_fuel_rate: 0.5, expected_catch_per_trip: 2.0 };

    #[test]
    fn counts_shares_over_roster() {
        let g = graph();
        let records = vec![
            trip(1, Some(0), 3.0),
            trip(2, Some(0), 2.0),
            trip(3, Some(1), 1.0),
            trip(4, None, 0.0),
        ];
        let panel = build_panel(&records, &roster(5), &prices(), COST, &g, CellMap::new(), BuildOptions::default()).unwrap();
        let m = &panel.markets()[0];
        assert!((m.rows[0].share - 0.4).abs() < 1e-15);
        assert!((m.rows[1].share - 0.2).abs() < 1e-15);
        assert!((m.outside_share - 0.4).abs() < 1e-15);
        assert_eq!(m.rows[0].effort, 2.0);
        assert_eq!(m.rows[0].catch, 5.0);
        assert!((m.rows[0].net_price - 95.0).abs() < 1e-12);
        assert!(!m.flagged);
        panel.check_invariants().unwrap();
    }

    #[test]
    fn all_outside_market_is_flagged() {
        let g = graph();
        let records = vec![trip(1, None, 0.0), trip(2, None, 0.0)];
        let panel = build_panel(&records, &roster(2), &prices(), COST, &g, CellMap::new(), BuildOptions::default()).unwrap();
        let m = &panel.markets()[0];
        assert!(m.rows.iter().all(|r| r.share == 0.0));
        assert!(m.flagged);
        assert_eq!(panel.diagnostics.zero_share_cells, 2);
    }

    #[test]
    fn roster_smaller_than_active_fleet_is_an_error() {
        let g = graph();
        let records = vec![trip(1, Some(0), 1.0), trip(2, Some(1), 1.0)];
        let err = build_panel(&records, &roster(1), &prices(), COST, &g, CellMap::new(), BuildOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn pseudo_count_removes_zero_shares() {
        let g = graph();
        let records = vec![trip(1, Some(0), 1.0)];
        let panel = build_panel(
            &records,
            &roster(3),
            &prices(),
            COST,
            &g,
            CellMap::new(),
            BuildOptions { pseudo_count: Some(0.5) },
        )
        .unwrap();
        let m = &panel.markets()[0];
        assert!(m.rows.iter().all(|r| r.share > 0.0));
        assert!(!m.flagged);
        panel.check_invariants().unwrap();
    }

    #[test]
    fn unknown_patch_rejected() {
        let g = graph();
        let records = vec![trip(1, Some(5), 1.0)];
        assert!(build_panel(&records, &roster(1), &prices(), COST, &g, CellMap::new(), BuildOptions::default()).is_err());
    }
}
