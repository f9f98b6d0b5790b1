//! First stage: share inversion, the joint demand and capture system, and
//! biomass levels from the estimated patch-month effects.
//!
//! Demand rows are grouped into one equation per port. The log capture
//! equation `ln H = ln γ_y + α_y ln E + Σ ρ ln z + ξ` shares the patch-month
//! effect block with every demand equation. One reference cell per year is
//! dropped from the block and absorbed into that year's intercepts.
//!
//! Both intercepts of a year carry the same reference-cell shift, so the
//! capture intercept is written `ln γ_y = α0_y + κ` with `κ = ln γ − a0`
//! common to all years. This ties the yearly effect blocks to one scale.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::econ::{sur, EstimateSet, IndexMode, LinearSystemSpec, SurOptions, SystemEquation};
use crate::error::{Error, Result};
use crate::math::{exp, ln, log_sum_exp};
use crate::panel::{CellMap, MarketPanel};
use crate::period::Period;

/// Log odds `ln s_k − ln s_0` of every inside alternative; `shares[0]` is the
/// outside option.
pub fn log_odds(shares: &[f64]) -> Vec<f64> {
    let s0 = ln(shares[0]);
    shares[1..].iter().map(|s| ln(*s) - s0).collect()
}

/// One demand regression row.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareRow {
    pub port: usize,
    pub period: Period,
    pub patch: usize,
    /// `ln s_k − ln s_0`.
    pub response: f64,
    pub ln_price: f64,
    pub ln_covariates: Vec<f64>,
}

/// A `(port, period, patch)` cell left out of the demand rows.
pub type MarketCell = (usize, Period, usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Inversion {
    pub rows: Vec<ShareRow>,
    pub nonpositive_price: Vec<MarketCell>,
    pub zero_share: Vec<MarketCell>,
    /// Markets with no vessel staying out.
    pub zero_outside: Vec<(usize, Period)>,
}

pub fn invert_shares(panel: &MarketPanel) -> Result<Inversion> {
    let mut out = Inversion::default();
    for m in panel.markets() {
        if !(m.outside_share > 0.0) {
            out.zero_outside.push((m.port, m.period));
            continue;
        }
        let s0 = ln(m.outside_share);
        for r in &m.rows {
            let cell = (m.port, m.period, r.patch);
            if !(r.net_price > 0.0) {
                out.nonpositive_price.push(cell);
            } else if !(r.share > 0.0) {
                out.zero_share.push(cell);
            } else {
                out.rows.push(ShareRow {
                    port: m.port,
                    period: m.period,
                    patch: r.patch,
                    response: ln(r.share) - s0,
                    ln_price: ln(r.net_price),
                    ln_covariates: panel.covariates(m.period, r.patch).iter().map(|z| ln(*z)).collect(),
                });
            }
        }
    }
    if out.rows.is_empty() {
        return Err(Error::NoUsableRows("share inversion"));
    }
    Ok(out)
}

/// Which coefficients are shared across years. Shared coefficients keep
/// their per-year rows in reports, all carrying the same estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct YearPooling {
    /// One price coefficient per port instead of per port and year.
    pub price: bool,
    /// One effort elasticity instead of one per year.
    pub effort: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Options {
    pub sur: SurOptions,
    pub pooling: YearPooling,
}

impl Default for Stage1Options {
    fn default() -> Self {
        Self {
            sur: SurOptions { mode: IndexMode::Pairwise, ..SurOptions::default() },
            pooling: YearPooling::default(),
        }
    }
}

pub fn alpha0_label(year: i32) -> String {
    format!("alpha0_{year}")
}

/// `port` is 0-based; labels are 1-based.
pub fn alpha1_label(year: i32, port: usize) -> String {
    format!("alpha1_{year}_{}", port + 1)
}

pub fn alpha2_label(year: i32) -> String {
    format!("alpha2_{year}")
}

/// Equality restrictions tying every year's coefficient to the first year's.
fn pooling_restrictions(years: &[i32], ports: &[usize], pooling: YearPooling) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let Some(&first) = years.first() else { return out };
    for &y in &years[1..] {
        if pooling.price {
            out.extend(ports.iter().map(|&j| (alpha1_label(first, j), alpha1_label(y, j))));
        }
        if pooling.effort {
            out.push((alpha2_label(first), alpha2_label(y)));
        }
    }
    out
}

/// Common capture-minus-demand intercept `κ`.
pub const KAPPA_LABEL: &str = "kappa";

pub fn effect_label(period: Period, patch: usize) -> String {
    format!("xi_{}_{}", period.ym(), patch + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Fit {
    pub estimates: EstimateSet,
    pub inversion: Inversion,
    pub years: Vec<i32>,
    pub ports: Vec<usize>,
    /// Cells normalized to a zero effect, one per year.
    pub reference_cells: BTreeMap<i32, (Period, usize)>,
    /// Estimated effects `ξ̂`, zero at reference cells.
    pub effects: CellMap<f64>,
    /// Capture rows used (cells with positive effort and catch).
    pub capture_cells: usize,
}

impl Stage1Fit {
    /// `ξ̂ + α̂0_y`: effects on a scale common to all years, equal to
    /// `a0 + β ln x` when the model holds.
    pub fn linked_effects(&self) -> Result<CellMap<f64>> {
        let mut out = CellMap::new();
        for (&(period, k), &xi) in &self.effects {
            out.insert((period, k), xi + self.estimates.get(&alpha0_label(period.year))?);
        }
        Ok(out)
    }
}

fn cell_key(period: Period, patch: usize, n_patches: usize) -> u64 {
    (period.ordinal() as u64) * n_patches as u64 + patch as u64
}

fn has_label(spec: &LinearSystemSpec, label: &str) -> bool {
    spec.equations.iter().any(|e| e.labels.iter().any(|l| l == label))
}

/// Jointly estimates the port demand equations and the capture equation.
pub fn fit_stage1(panel: &MarketPanel, options: &Stage1Options) -> Result<Stage1Fit> {
    let periods = panel.periods();
    if periods.len() < 2 {
        return Err(Error::Data("first stage needs at least two months".into()));
    }
    let n_patches = panel.n_patches();
    let n_cov = panel.n_covariates();
    let inversion = invert_shares(panel)?;
    let effort = panel.patch_effort();
    let catch = panel.patch_catch();
    let capture: Vec<(Period, usize, f64, f64)> = effort
        .iter()
        .filter_map(|(&(p, k), &e)| {
            let h = catch.get(&(p, k)).copied().unwrap_or(0.0);
            (e > 0.0 && h > 0.0).then_some((p, k, e, h))
        })
        .collect();

    // Effect cells present in any row; the first cell of each year is the reference.
    let mut cells: BTreeSet<(Period, usize)> = inversion.rows.iter().map(|r| (r.period, r.patch)).collect();
    cells.extend(capture.iter().map(|c| (c.0, c.1)));
    let mut reference_cells = BTreeMap::new();
    for &(p, k) in &cells {
        reference_cells.entry(p.year).or_insert((p, k));
    }
    let is_reference = |p: Period, k: usize| reference_cells.get(&p.year) == Some(&(p, k));
    let years: Vec<i32> = reference_cells.keys().copied().collect();
    let ports: Vec<usize> = inversion.rows.iter().map(|r| r.port).collect::<BTreeSet<_>>().into_iter().collect();

    let covariate_labels = |prefix: &str| -> Vec<String> { (0..n_cov).map(|c| format!("{prefix}_{}", c + 1)).collect() };
    let mut equations = Vec::new();
    for &port in &ports {
        let rows: Vec<&ShareRow> = inversion.rows.iter().filter(|r| r.port == port).collect();
        let port_years: BTreeSet<i32> = rows.iter().map(|r| r.period.year).collect();
        let port_cells: BTreeSet<(Period, usize)> = rows
            .iter()
            .map(|r| (r.period, r.patch))
            .filter(|&(p, k)| !is_reference(p, k))
            .collect();
        let mut labels: Vec<String> = Vec::new();
        let mut col = BTreeMap::new();
        for &y in &port_years {
            col.insert(alpha0_label(y), labels.len());
            labels.push(alpha0_label(y));
            col.insert(alpha1_label(y, port), labels.len());
            labels.push(alpha1_label(y, port));
        }
        let z_start = labels.len();
        labels.extend(covariate_labels("a2z"));
        let mut effect_col = BTreeMap::new();
        for &(p, k) in &port_cells {
            effect_col.insert((p, k), labels.len());
            labels.push(effect_label(p, k));
        }
        let mut x = DMatrix::<f64>::zeros(rows.len(), labels.len());
        for (i, r) in rows.iter().enumerate() {
            x[(i, col[&alpha0_label(r.period.year)])] = 1.0;
            x[(i, col[&alpha1_label(r.period.year, port)])] = r.ln_price;
            for (c, z) in r.ln_covariates.iter().enumerate() {
                x[(i, z_start + c)] = *z;
            }
            if let Some(&j) = effect_col.get(&(r.period, r.patch)) {
                x[(i, j)] = 1.0;
            }
        }
        equations.push(SystemEquation {
            name: format!("demand_port{}", port + 1),
            response: rows.iter().map(|r| r.response).collect(),
            design: x,
            labels,
            index: Some(rows.iter().map(|r| cell_key(r.period, r.patch, n_patches)).collect()),
        });
    }

    if !capture.is_empty() {
        let cap_years: BTreeSet<i32> = capture.iter().map(|c| c.0.year).collect();
        let mut labels: Vec<String> = Vec::new();
        let mut col = BTreeMap::new();
        col.insert(String::from(KAPPA_LABEL), labels.len());
        labels.push(KAPPA_LABEL.into());
        for &y in &cap_years {
            col.insert(alpha0_label(y), labels.len());
            labels.push(alpha0_label(y));
            col.insert(alpha2_label(y), labels.len());
            labels.push(alpha2_label(y));
        }
        let z_start = labels.len();
        labels.extend(covariate_labels("rho"));
        let mut effect_col = BTreeMap::new();
        for &(p, k, _, _) in &capture {
            if !is_reference(p, k) {
                effect_col.insert((p, k), labels.len());
                labels.push(effect_label(p, k));
            }
        }
        let mut x = DMatrix::<f64>::zeros(capture.len(), labels.len());
        for (i, &(p, k, e, _)) in capture.iter().enumerate() {
            x[(i, col[KAPPA_LABEL])] = 1.0;
            x[(i, col[&alpha0_label(p.year)])] = 1.0;
            x[(i, col[&alpha2_label(p.year)])] = ln(e);
            for (c, z) in panel.covariates(p, k).iter().enumerate() {
                x[(i, z_start + c)] = ln(*z);
            }
            if let Some(&j) = effect_col.get(&(p, k)) {
                x[(i, j)] = 1.0;
            }
        }
        equations.push(SystemEquation {
            name: "capture".into(),
            response: capture.iter().map(|c| ln(c.3)).collect(),
            design: x,
            labels,
            index: Some(capture.iter().map(|c| cell_key(c.0, c.1, n_patches)).collect()),
        });
    }

    let spec = LinearSystemSpec { equations, restrictions: Vec::new() };
    let restrictions = pooling_restrictions(&years, &ports, options.pooling)
        .into_iter()
        .filter(|(a, b)| has_label(&spec, a) && has_label(&spec, b))
        .collect();
    let estimates = sur(&LinearSystemSpec { restrictions, ..spec }, &options.sur)?;
    let mut effects = CellMap::new();
    for &(p, k) in &cells {
        let value = if is_reference(p, k) { 0.0 } else { estimates.get(&effect_label(p, k))? };
        effects.insert((p, k), value);
    }
    Ok(Stage1Fit {
        estimates,
        inversion,
        years,
        ports,
        reference_cells,
        effects,
        capture_cells: capture.len(),
    })
}

/// How effects are converted to biomass levels.
#[derive(Debug, Clone, PartialEq)]
pub enum BetaSource {
    /// `x̂ = exp(effect / β)`.
    Fixed(f64),
    /// Fit `β` and a level offset so that `Σ_k` mean-over-months `x̂` matches
    /// the given annual totals in log least squares.
    Calibrate(BTreeMap<i32, f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Calibration {
    Fixed,
    Annual {
        years: Vec<i32>,
        /// Sum of squared log errors at the solution.
        objective: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiomassPanel {
    pub biomass: CellMap<f64>,
    /// Effects net of the fitted offset: `β·ln x̂` equals these exactly.
    pub effects: CellMap<f64>,
    pub beta: f64,
    /// Level offset removed from the input effects (zero in fixed mode).
    pub offset: f64,
    pub calibration: Calibration,
}

impl BiomassPanel {
    pub fn get(&self, period: Period, patch: usize) -> Option<f64> {
        self.biomass.get(&(period, patch)).copied()
    }

    pub fn periods(&self) -> Vec<Period> {
        self.biomass.keys().map(|(p, _)| *p).collect::<BTreeSet<_>>().into_iter().collect()
    }
}

pub const BETA_RANGE: (f64, f64) = (1e-3, 10.0);
const BETA_TOLERANCE: f64 = 1e-10;
const GRID_POINTS: usize = 200;

struct YearCells {
    total: f64,
    /// `(effect, ln n_yk)` per cell, `n_yk` the months of patch k in year y.
    cells: Vec<(f64, f64)>,
}

/// Profiled objective and its derivative at `beta`.
fn calibration_objective(years: &[YearCells], beta: f64) -> (f64, f64) {
    let m = years.len() as f64;
    let mut d = Vec::with_capacity(years.len());
    let mut g = Vec::with_capacity(years.len());
    for y in years {
        let lse = log_sum_exp(y.cells.iter().map(|(e, ln_n)| e / beta - ln_n));
        d.push(ln(y.total) - lse);
        // ∂ ln S_y / ∂β = −Σ w e / β², w the softmax weights.
        let weighted: f64 = y.cells.iter().map(|(e, ln_n)| exp(e / beta - ln_n - lse) * e).sum();
        g.push(-weighted / (beta * beta));
    }
    let d_mean = d.iter().sum::<f64>() / m;
    let g_mean = g.iter().sum::<f64>() / m;
    let mut j = 0.0;
    let mut dj = 0.0;
    for (di, gi) in d.iter().zip(&g) {
        let e = di - d_mean;
        j += e * e;
        dj -= 2.0 * e * (gi - g_mean);
    }
    (j, dj)
}

fn profiled_offset(years: &[YearCells], beta: f64) -> f64 {
    let c = years
        .iter()
        .map(|y| ln(y.total) - log_sum_exp(y.cells.iter().map(|(e, ln_n)| e / beta - ln_n)))
        .sum::<f64>()
        / years.len() as f64;
    -c * beta
}

pub fn recover_biomass(effects: &CellMap<f64>, source: &BetaSource) -> Result<BiomassPanel> {
    if effects.is_empty() {
        return Err(Error::NoUsableRows("biomass recovery"));
    }
    let (beta, offset, calibration) = match source {
        BetaSource::Fixed(beta) => {
            if !(*beta > 0.0 && beta.is_finite()) {
                return Err(Error::InvalidParameter(format!("beta = {beta} must be > 0")));
            }
            (*beta, 0.0, Calibration::Fixed)
        }
        BetaSource::Calibrate(totals) => calibrate(effects, totals)?,
    };
    let mut biomass = CellMap::new();
    let mut adjusted = CellMap::new();
    for (&cell, &e) in effects {
        let a = e - offset;
        biomass.insert(cell, exp(a / beta));
        adjusted.insert(cell, a);
    }
    Ok(BiomassPanel { biomass, effects: adjusted, beta, offset, calibration })
}

fn calibrate(effects: &CellMap<f64>, totals: &BTreeMap<i32, f64>) -> Result<(f64, f64, Calibration)> {
    if let Some((y, b)) = totals.iter().find(|(_, b)| !(**b > 0.0 && b.is_finite())) {
        return Err(Error::Calibration(format!("annual total for {y} is {b}, must be > 0")));
    }
    let mut months: BTreeMap<(i32, usize), f64> = BTreeMap::new();
    for &(p, k) in effects.keys() {
        *months.entry((p.year, k)).or_insert(0.0) += 1.0;
    }
    let mut years = Vec::new();
    let mut used = Vec::new();
    for (&y, &total) in totals {
        let cells: Vec<(f64, f64)> = effects
            .iter()
            .filter(|((p, _), _)| p.year == y)
            .map(|(&(p, k), &e)| (e, ln(months[&(p.year, k)])))
            .collect();
        if !cells.is_empty() {
            years.push(YearCells { total, cells });
            used.push(y);
        }
    }
    if years.len() < 2 {
        return Err(Error::Calibration(format!(
            "calibration needs totals for at least two estimated years, found {}",
            years.len()
        )));
    }
    let (lo, hi) = BETA_RANGE;
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| exp(ln(lo) + (ln(hi) - ln(lo)) * i as f64 / (GRID_POINTS - 1) as f64))
        .collect();
    let values: Vec<f64> = grid.iter().map(|b| calibration_objective(&years, *b).0).collect();
    let best = (0..GRID_POINTS)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("non-empty grid");
    if best == 0 || best == GRID_POINTS - 1 {
        return Err(Error::Calibration(format!(
            "calibration minimum lies at the edge of beta in [{lo}, {hi}]"
        )));
    }
    // dJ changes sign between the neighbors of the grid minimum.
    let (mut a, mut b) = (grid[best - 1], grid[best + 1]);
    let (mut da, db) = (calibration_objective(&years, a).1, calibration_objective(&years, b).1);
    let beta = if da < 0.0 && db > 0.0 {
        while b - a > BETA_TOLERANCE {
            let mid = 0.5 * (a + b);
            let dm = calibration_objective(&years, mid).1;
            if dm == 0.0 {
                a = mid;
                b = mid;
                break;
            }
            if (dm < 0.0) == (da < 0.0) {
                a = mid;
                da = dm;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    } else {
        // Flat objective at working precision.
        grid[best]
    };
    let objective = calibration_objective(&years, beta).0;
    Ok((beta, profiled_offset(&years, beta), Calibration::Annual { years: used, objective }))
}

/// Capture-function parameters implied by the first stage on the biomass scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureEstimates {
    /// `γ = exp(κ̂ + offset)`.
    pub gamma: f64,
    pub years: Vec<i32>,
    /// Effort elasticity per year.
    pub alpha: Vec<f64>,
    pub alpha_se: Vec<f64>,
    pub beta: f64,
}

pub fn capture_estimates(fit: &Stage1Fit, biomass: &BiomassPanel) -> Result<CaptureEstimates> {
    let kappa = fit.estimates.get(KAPPA_LABEL).map_err(|_| Error::NoUsableRows("capture equation"))?;
    let mut out = CaptureEstimates {
        gamma: exp(kappa + biomass.offset),
        years: Vec::new(),
        alpha: Vec::new(),
        alpha_se: Vec::new(),
        beta: biomass.beta,
    };
    for &y in &fit.years {
        if fit.estimates.index_of(&alpha2_label(y)).is_some() {
            out.years.push(y);
            out.alpha.push(fit.estimates.get(&alpha2_label(y))?);
            out.alpha_se.push(fit.estimates.std_error(&alpha2_label(y))?);
        }
    }
    Ok(out)
}

/// Annual totals `Σ_k mean_t x` of a biomass grid laid out as `x[t][k]` from `start`.
pub fn annual_totals(start: Period, biomass: &[Vec<f64>]) -> BTreeMap<i32, f64> {
    let mut sums: BTreeMap<i32, (f64, f64)> = BTreeMap::new();
    for (t, row) in biomass.iter().enumerate() {
        let e = sums.entry(start.offset(t as i64).year).or_insert((0.0, 0.0));
        e.0 += row.iter().sum::<f64>();
        e.1 += 1.0;
    }
    sums.into_iter().map(|(y, (s, n))| (y, s / n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::logit_shares;
    use alloc::vec;

    #[test]
    fn equal_odds_give_zero() {
        assert_eq!(log_odds(&[0.2, 0.2, 0.2, 0.2, 0.2]), vec![0.0; 4]);
    }

    #[test]
    fn log_odds_inverts_logit() {
        let u = [0.0, 0.3, -1.2, 2.5];
        let r = log_odds(&logit_shares(&u));
        for (a, b) in r.iter().zip(&u[1..]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn cells(values: &[(i32, u8, usize, f64)]) -> CellMap<f64> {
        values.iter().map(|&(y, m, k, v)| ((Period::new(y, m).unwrap(), k), v)).collect()
    }

    #[test]
    fn fixed_beta_identity_and_scaling() {
        let e = cells(&[(2001, 1, 0, 0.0), (2001, 1, 1, 2.0)]);
        let b1 = recover_biomass(&e, &BetaSource::Fixed(1.0)).unwrap();
        assert_eq!(b1.get(Period::new(2001, 1).unwrap(), 0), Some(1.0));
        let b2 = recover_biomass(&e, &BetaSource::Fixed(2.0)).unwrap();
        let p = Period::new(2001, 1).unwrap();
        assert!((ln(b2.get(p, 1).unwrap()) - 0.5 * ln(b1.get(p, 1).unwrap())).abs() < 1e-15);
    }

    #[test]
    fn calibration_recovers_beta_and_offset() {
        // effect = a0 + β ln x with β = 0.4, a0 = −3.
        let (beta, a0) = (0.4, -3.0);
        let mut truth = Vec::new();
        for t in 0..36 {
            truth.push((0..3).map(|k| 1e5 * (1.0 + 0.5 * k as f64) * (1.0 + 0.02 * t as f64 + 0.1 * libm::sin(t as f64))).collect::<Vec<f64>>());
        }
        let start = Period::new(2001, 1).unwrap();
        let mut e = CellMap::new();
        for (t, row) in truth.iter().enumerate() {
            for (k, x) in row.iter().enumerate() {
                e.insert((start.offset(t as i64), k), a0 + beta * ln(*x));
            }
        }
        let totals = annual_totals(start, &truth);
        let panel = recover_biomass(&e, &BetaSource::Calibrate(totals)).unwrap();
        assert!((panel.beta - beta).abs() < 1e-8, "{}", panel.beta);
        assert!((panel.offset - a0).abs() < 1e-6, "{}", panel.offset);
        for (t, row) in truth.iter().enumerate() {
            for (k, x) in row.iter().enumerate() {
                let xh = panel.get(start.offset(t as i64), k).unwrap();
                assert!((xh / x - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn calibration_needs_two_years() {
        let e = cells(&[(2001, 1, 0, 1.0), (2001, 2, 0, 2.0)]);
        let totals = [(2001, 10.0)].into_iter().collect();
        assert!(matches!(recover_biomass(&e, &BetaSource::Calibrate(totals)), Err(Error::Calibration(_))));
        let bad = [(2001, 10.0), (2002, -1.0)].into_iter().collect();
        assert!(matches!(recover_biomass(&e, &BetaSource::Calibrate(bad)), Err(Error::Calibration(_))));
    }
}
