//! Second stage: per-patch transition regressions on recovered biomass, the
//! whole-fishery logistic fit, and the structural growth, capacity and
//! migration parameters.
//!
//! Patch `k`'s equation is
//! `x_{t+1,k} + H_tk = α0_k·x_tk − α1_k·x_tk² + Σ_{h~k} d_hk·x_th`,
//! which expands the patch dynamics with `α0_k = 1 + r + d_kk` and
//! `α1_k = r/K_k`. Harvest on the left is optional.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::econ::{
    critical_value, nls_system, ols, EstimateSet, IndexMode, LinearSystemSpec, NlsOptions,
    ResidualModel, SurOptions, SystemEquation, sur,
};
use crate::error::{Error, Result};
use crate::panel::CellMap;
use crate::patch_model::{DispersionMatrix, PatchGraph};
use crate::period::Period;

/// `k` is 0-based; labels are 1-based.
pub fn alpha0_label(k: usize) -> String {
    format!("alpha0_{}", k + 1)
}

pub fn alpha1_label(k: usize) -> String {
    format!("alpha1_{}", k + 1)
}

/// Rate from patch `h` into patch `k`.
pub fn dispersion_label(h: usize, k: usize) -> String {
    format!("d_{}_{}", h + 1, k + 1)
}

/// Regression data of one patch equation.
#[derive(Debug, Clone, PartialEq)]
pub struct MigrationRows {
    pub patch: usize,
    pub neighbors: Vec<usize>,
    /// Month `t` of each row; the response is dated `t + 1`.
    pub periods: Vec<Period>,
    pub response: Vec<f64>,
    /// Columns: `x_tk`, `−x_tk²`, then one per neighbor.
    pub design: DMatrix<f64>,
    pub labels: Vec<String>,
    /// Months without a usable successor (gaps or missing neighbors).
    pub dropped: Vec<Period>,
}

impl MigrationRows {
    pub fn n_params(&self) -> usize {
        self.labels.len()
    }
}

pub const MIN_PAIRS: usize = 3;

/// Builds one equation per patch. `harvest`, when given, is added to the
/// response (missing cells count as zero).
pub fn build_migration_rows(
    biomass: &CellMap<f64>,
    graph: &PatchGraph,
    harvest: Option<&CellMap<f64>>,
) -> Result<Vec<MigrationRows>> {
    let n = graph.n_patches();
    let periods: Vec<Period> = biomass
        .keys()
        .map(|(p, _)| *p)
        .collect::<alloc::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let neighbors: Vec<usize> = graph.neighbors(k).collect();
        let mut labels = vec![alpha0_label(k), alpha1_label(k)];
        labels.extend(neighbors.iter().map(|&h| dispersion_label(h, k)));
        let mut rows: Vec<(Period, f64, Vec<f64>)> = Vec::new();
        let mut dropped = Vec::new();
        for &t in &periods {
            let Some(&x) = biomass.get(&(t, k)) else { continue };
            let next = biomass.get(&(t.next(), k));
            let nbr: Option<Vec<f64>> = neighbors.iter().map(|&h| biomass.get(&(t, h)).copied()).collect();
            match (next, nbr) {
                (Some(&x1), Some(nbr)) => {
                    let h = harvest.and_then(|m| m.get(&(t, k)).copied()).unwrap_or(0.0);
                    let mut reg = vec![x, -x * x];
                    reg.extend(nbr);
                    rows.push((t, x1 + h, reg));
                }
                _ => {
                    if t != *periods.last().expect("non-empty") {
                        dropped.push(t);
                    }
                }
            }
        }
        if rows.len() < MIN_PAIRS {
            return Err(Error::Data(format!(
                "patch {} has {} usable month pairs, need at least {MIN_PAIRS}",
                k + 1,
                rows.len()
            )));
        }
        let design = DMatrix::from_fn(rows.len(), labels.len(), |i, j| rows[i].2[j]);
        out.push(MigrationRows {
            patch: k,
            neighbors,
            periods: rows.iter().map(|r| r.0).collect(),
            response: rows.iter().map(|r| r.1).collect(),
            design,
            labels,
            dropped,
        });
    }
    Ok(out)
}

pub fn stage2_sur_options() -> SurOptions {
    SurOptions { mode: IndexMode::Pairwise, ..SurOptions::default() }
}

/// Joint SUR of the patch equations. Dispersion rates are unrestricted in sign.
pub fn fit_stage2(rows: &[MigrationRows], options: &SurOptions) -> Result<EstimateSet> {
    let equations = rows
        .iter()
        .map(|r| SystemEquation {
            name: format!("patch{}", r.patch + 1),
            response: r.response.clone(),
            design: r.design.clone(),
            labels: r.labels.clone(),
            index: Some(r.periods.iter().map(|p| p.ordinal() as u64).collect()),
        })
        .collect();
    sur(&LinearSystemSpec { equations, restrictions: Vec::new() }, options)
}

/// Whole-fishery biomass and harvest over the longest run of consecutive
/// months in which every patch has a biomass value. `x` has one more
/// element than `h`.
pub fn aggregate_series(
    biomass: &CellMap<f64>,
    harvest: &CellMap<f64>,
    n_patches: usize,
) -> (Period, Vec<f64>, Vec<f64>) {
    let mut totals: BTreeMap<Period, (f64, usize)> = BTreeMap::new();
    for (&(p, _), &x) in biomass {
        let e = totals.entry(p).or_insert((0.0, 0));
        e.0 += x;
        e.1 += 1;
    }
    let complete: Vec<(Period, f64)> =
        totals.into_iter().filter(|(_, (_, c))| *c == n_patches).map(|(p, (x, _))| (p, x)).collect();
    let mut best: (usize, usize) = (0, 0);
    let mut start = 0;
    for i in 0..complete.len() {
        if i > 0 && complete[i].0 != complete[i - 1].0.next() {
            start = i;
        }
        if i + 1 - start > best.1 - best.0 {
            best = (start, i + 1);
        }
    }
    let run = &complete[best.0..best.1];
    let x: Vec<f64> = run.iter().map(|r| r.1).collect();
    let h: Vec<f64> = run[..run.len().saturating_sub(1)]
        .iter()
        .map(|(p, _)| (0..n_patches).map(|k| harvest.get(&(*p, k)).copied().unwrap_or(0.0)).sum())
        .collect();
    let first = run.first().map(|r| r.0).unwrap_or(Period { year: 0, month: 1 });
    (first, x, h)
}

/// Whole-fishery logistic transition as a residual model over `(r, K)`.
pub struct AggregateLogistic<'a> {
    pub x: &'a [f64],
    pub h: &'a [f64],
}

impl ResidualModel for AggregateLogistic<'_> {
    fn n_params(&self) -> usize {
        2
    }

    fn residuals(&self, p: &[f64]) -> Vec<f64> {
        let (r, k) = (p[0], p[1]);
        (0..self.h.len())
            .map(|t| {
                let x = self.x[t];
                self.x[t + 1] - (x + r * x * (1.0 - x / k) - self.h[t])
            })
            .collect()
    }

    fn jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        let (r, k) = (p[0], p[1]);
        Some(DMatrix::from_fn(self.h.len(), 2, |t, j| {
            let x = self.x[t];
            if j == 0 { -x * (1.0 - x / k) } else { -r * x * x / (k * k) }
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxFit {
    pub r: f64,
    pub k_total: f64,
    /// Labels `r` and `K`.
    pub estimates: EstimateSet,
}

/// Nonlinear least squares of `X_{t+1} = X_t + r·X_t·(1 − X_t/K) − H_t`.
pub fn fit_aux_total(x: &[f64], h: &[f64]) -> Result<AuxFit> {
    if x.len() < 4 || h.len() + 1 != x.len() {
        return Err(Error::Data(format!(
            "aggregate fit needs at least 4 biomass values and one fewer harvest values, got {} and {}",
            x.len(),
            h.len()
        )));
    }
    if x.iter().any(|v| !(*v > 0.0)) || h.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Data("aggregate biomass must be > 0 and harvest >= 0".into()));
    }
    // Linear start: X_{t+1} − X_t + H_t = r·X − (r/K)·X².
    let m = h.len();
    let design = DMatrix::from_fn(m, 2, |t, j| if j == 0 { x[t] } else { -x[t] * x[t] });
    let y: Vec<f64> = (0..m).map(|t| x[t + 1] - x[t] + h[t]).collect();
    let max_x = x.iter().copied().fold(0.0, f64::max);
    let start = match ols(&y, &design) {
        Ok(est) if est.estimates[0] > 0.0 && est.estimates[1] > 0.0 => {
            [est.estimates[0], est.estimates[0] / est.estimates[1]]
        }
        _ => [0.1, 2.0 * max_x],
    };
    let labels = [String::from("r"), String::from("K")];
    let model = AggregateLogistic { x, h };
    let estimates = match nls_system(&model, &start, &labels, &NlsOptions::default()) {
        Ok(e) => e,
        Err(Error::RankDeficient { .. }) => {
            return Err(Error::Unidentified(
                "aggregate growth: singular Jacobian (series at equilibrium)".into(),
            ))
        }
        Err(e) => return Err(e),
    };
    let (r, k_total) = (estimates.estimates[0], estimates.estimates[1]);
    if !(r > 0.0 && k_total > 0.0) {
        return Err(Error::Unidentified(format!(
            "aggregate growth: r = {r}, K = {k_total} (both must be > 0)"
        )));
    }
    Ok(AuxFit { r, k_total, estimates })
}

/// Mapping from reduced-form own-stock coefficients to `d_kk`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StructuralMapping {
    /// `d_kk = α0 − 1 − r`, the expansion of the patch dynamics.
    #[default]
    Expansion,
    /// `d_kk = r − α0`.
    Paper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchCapacity {
    pub patch: usize,
    /// `r/α1` at the point estimate (negative when `α1 < 0`).
    pub point: f64,
    /// `r/(α1 + z·se)` at the 80 % and 90 % two-sided upper limits.
    pub at_80: f64,
    pub at_90: f64,
    /// Value entering the rescaling; `None` when unidentified.
    pub chosen: Option<f64>,
    /// The point value was replaced by the upper-limit value.
    pub fallback: bool,
    /// `chosen` after rescaling to the aggregate capacity.
    pub rescaled: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueSe {
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralEstimates {
    pub r: ValueSe,
    pub k_total: f64,
    pub level: f64,
    pub mapping: StructuralMapping,
    pub alpha0: Vec<ValueSe>,
    pub alpha1: Vec<ValueSe>,
    pub d_own: Vec<ValueSe>,
    /// `((h, k), d_hk)` for every adjacent ordered pair.
    pub d_cross: Vec<((usize, usize), ValueSe)>,
    pub capacity: Vec<PatchCapacity>,
    /// Multiplier applied to the chosen capacities.
    pub scale: f64,
    /// Reduced-form covariance (same order as the reduced estimates).
    pub covariance: DMatrix<f64>,
}

impl StructuralEstimates {
    pub fn d(&self, h: usize, k: usize) -> Option<f64> {
        if h == k {
            return self.d_own.get(k).map(|v| v.value);
        }
        self.d_cross.iter().find(|(hk, _)| *hk == (h, k)).map(|(_, v)| v.value)
    }

    pub fn fallback_patches(&self) -> Vec<usize> {
        self.capacity.iter().filter(|c| c.fallback).map(|c| c.patch).collect()
    }
}

/// Structural parameters from the reduced form and the aggregate fit.
/// `level` is the two-sided confidence level of the capacity fallback.
pub fn recover_structure(
    reduced: &EstimateSet,
    graph: &PatchGraph,
    aux: &AuxFit,
    level: f64,
    mapping: StructuralMapping,
) -> Result<StructuralEstimates> {
    let r = aux.r;
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("aggregate r = {r} must be > 0")));
    }
    let z = critical_value(level)?;
    let z80 = critical_value(0.80)?;
    let z90 = critical_value(0.90)?;
    let r_se = aux.estimates.std_errors.first().copied().unwrap_or(0.0);
    let n = graph.n_patches();
    let mut alpha0 = Vec::with_capacity(n);
    let mut alpha1 = Vec::with_capacity(n);
    let mut d_own = Vec::with_capacity(n);
    let mut capacity = Vec::with_capacity(n);
    for k in 0..n {
        let a0 = ValueSe { value: reduced.get(&alpha0_label(k))?, se: reduced.std_error(&alpha0_label(k))? };
        let a1 = ValueSe { value: reduced.get(&alpha1_label(k))?, se: reduced.std_error(&alpha1_label(k))? };
        // r comes from an independent fit; its variance adds.
        let se = libm::sqrt(a0.se * a0.se + r_se * r_se);
        let d = match mapping {
            StructuralMapping::Expansion => a0.value - 1.0 - r,
            StructuralMapping::Paper => r - a0.value,
        };
        d_own.push(ValueSe { value: d, se });
        let upper = |zz: f64| r / (a1.value + zz * a1.se);
        let point = r / a1.value;
        let (chosen, fallback) = if a1.value > 0.0 {
            (Some(point), false)
        } else if a1.value + z * a1.se > 0.0 {
            (Some(upper(z)), true)
        } else {
            (None, true)
        };
        capacity.push(PatchCapacity {
            patch: k,
            point,
            at_80: upper(z80),
            at_90: upper(z90),
            chosen,
            fallback,
            rescaled: None,
        });
        alpha0.push(a0);
        alpha1.push(a1);
    }
    let sum: f64 = capacity.iter().filter_map(|c| c.chosen).sum();
    if !(sum > 0.0) {
        return Err(Error::Unidentified("no patch has an identified carrying capacity".into()));
    }
    let scale = aux.k_total / sum;
    for c in &mut capacity {
        c.rescaled = c.chosen.map(|v| v * scale);
    }
    let mut d_cross = Vec::new();
    for k in 0..n {
        for h in graph.neighbors(k) {
            let label = dispersion_label(h, k);
            d_cross.push(((h, k), ValueSe { value: reduced.get(&label)?, se: reduced.std_error(&label)? }));
        }
    }
    d_cross.sort_by_key(|(hk, _)| *hk);
    Ok(StructuralEstimates {
        r: ValueSe { value: r, se: r_se },
        k_total: aux.k_total,
        level,
        mapping,
        alpha0,
        alpha1,
        d_own,
        d_cross,
        capacity,
        scale,
        covariance: reduced.covariance.clone(),
    })
}

/// Reduced-form coefficients implied by a structure under the expansion
/// mapping, as `(label, value)` pairs.
pub fn reduced_form_of(
    r: f64,
    capacity: &[f64],
    dispersion: &DispersionMatrix,
    graph: &PatchGraph,
) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (k, cap) in capacity.iter().enumerate().take(graph.n_patches()) {
        out.push((alpha0_label(k), 1.0 + r + dispersion.rate(k, k)));
        out.push((alpha1_label(k), r / cap));
        for h in graph.neighbors(k) {
            out.push((dispersion_label(h, k), dispersion.rate(h, k)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_series_recovered() {
        let (r, k) = (0.05, 1e6);
        let mut x = vec![2e5];
        for _ in 0..60 {
            let last = *x.last().unwrap();
            x.push(last + r * last * (1.0 - last / k));
        }
        let h = vec![0.0; 60];
        let fit = fit_aux_total(&x, &h).unwrap();
        assert!((fit.r / r - 1.0).abs() < 1e-6);
        assert!((fit.k_total / k - 1.0).abs() < 1e-6);
    }

    #[test]
    fn equilibrium_series_is_unidentified() {
        let x = vec![1e6; 10];
        let h = vec![0.0; 9];
        assert!(matches!(fit_aux_total(&x, &h), Err(Error::Unidentified(_))));
    }

    #[test]
    fn short_series_rejected() {
        assert!(fit_aux_total(&[1.0, 2.0, 3.0], &[0.0, 0.0]).is_err());
    }
}
