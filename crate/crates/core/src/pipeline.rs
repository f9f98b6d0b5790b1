//! End-to-end estimation: first stage, biomass recovery, second stage, and
//! comparison of the result with a known scenario.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::econ::EstimateSet;
use crate::error::Result;
use crate::panel::MarketPanel;
use crate::patch_model::PatchGraph;
use crate::simulator::Scenario;
use crate::stage1::{
    capture_estimates, fit_stage1, recover_biomass, BetaSource, BiomassPanel, CaptureEstimates, Stage1Fit,
    Stage1Options,
};
use crate::stage2::{
    aggregate_series, build_migration_rows, fit_aux_total, fit_stage2, recover_structure, stage2_sur_options,
    AuxFit, MigrationRows, StructuralEstimates, StructuralMapping,
};

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationOptions {
    pub stage1: Stage1Options,
    /// Two-sided level of the capacity fallback.
    pub level: f64,
    pub mapping: StructuralMapping,
    /// Add observed harvest to the second-stage response.
    pub harvest: bool,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            stage1: Stage1Options::default(),
            level: 0.8,
            mapping: StructuralMapping::Expansion,
            harvest: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimation {
    pub stage1: Stage1Fit,
    pub biomass: BiomassPanel,
    pub capture: CaptureEstimates,
    pub migration_rows: Vec<MigrationRows>,
    pub reduced: EstimateSet,
    pub aux: AuxFit,
    pub structure: StructuralEstimates,
}

pub fn estimate(
    panel: &MarketPanel,
    graph: &PatchGraph,
    beta: &BetaSource,
    options: &EstimationOptions,
) -> Result<Estimation> {
    let stage1 = fit_stage1(panel, &options.stage1)?;
    let biomass = recover_biomass(&stage1.linked_effects()?, beta)?;
    let capture = capture_estimates(&stage1, &biomass)?;
    let catch = panel.patch_catch();
    let harvest = options.harvest.then_some(&catch);
    let migration_rows = build_migration_rows(&biomass.biomass, graph, harvest)?;
    let reduced = fit_stage2(&migration_rows, &stage2_sur_options())?;
    // The aggregate transition always nets out harvest: it is part of the
    // whole-fishery balance, not of the per-patch regression design.
    let (_, x, h) = aggregate_series(&biomass.biomass, &catch, graph.n_patches());
    let aux = fit_aux_total(&x, &h)?;
    let structure = recover_structure(&reduced, graph, &aux, options.level, options.mapping)?;
    Ok(Estimation { stage1, biomass, capture, migration_rows, reduced, aux, structure })
}

/// One scalar compared against the scenario. `se` is NaN when the estimator
/// provides none.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterRecovery {
    pub name: String,
    pub truth: f64,
    pub estimate: f64,
    pub se: f64,
}

impl ParameterRecovery {
    pub fn error(&self) -> f64 {
        self.estimate - self.truth
    }

    pub fn relative_error(&self) -> f64 {
        self.error() / self.truth
    }
}

/// Structural and capture parameters next to their scenario values. Patches
/// and pairs are 1-based in names; unidentified capacities are NaN.
pub fn compare_with_truth(scenario: &Scenario, est: &Estimation) -> Vec<ParameterRecovery> {
    let mut out = Vec::new();
    let mut push = |name: String, truth: f64, estimate: f64, se: f64| {
        out.push(ParameterRecovery { name, truth, estimate, se })
    };
    push("gamma".into(), scenario.tech.gamma, est.capture.gamma, f64::NAN);
    push("beta".into(), scenario.tech.beta, est.capture.beta, f64::NAN);
    for ((y, a), se) in est.capture.years.iter().zip(&est.capture.alpha).zip(&est.capture.alpha_se) {
        push(format!("alpha_{y}"), scenario.tech.alpha, *a, *se);
    }
    let s = &est.structure;
    push("r".into(), scenario.bio.r(), s.r.value, s.r.se);
    let caps = scenario.bio.carrying_capacity();
    push("K_total".into(), caps.iter().sum(), s.k_total, f64::NAN);
    for c in &s.capacity {
        push(format!("K_{}", c.patch + 1), caps[c.patch], c.rescaled.unwrap_or(f64::NAN), f64::NAN);
    }
    for (k, v) in s.d_own.iter().enumerate() {
        push(format!("d_{0}_{0}", k + 1), scenario.dispersion.rate(k, k), v.value, v.se);
    }
    for ((h, k), v) in &s.d_cross {
        push(format!("d_{}_{}", h + 1, k + 1), scenario.dispersion.rate(*h, *k), v.value, v.se);
    }
    out
}

/// Counts of off-diagonal `d_hk` within an absolute tolerance and of
/// capacities within a relative tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecoveryScore {
    pub d_within: usize,
    pub d_total: usize,
    pub k_within: usize,
    pub k_total: usize,
}

impl RecoveryScore {
    pub fn d_fraction(&self) -> f64 {
        self.d_within as f64 / self.d_total.max(1) as f64
    }

    pub fn k_fraction(&self) -> f64 {
        self.k_within as f64 / self.k_total.max(1) as f64
    }
}

pub fn recovery_score(scenario: &Scenario, s: &StructuralEstimates, d_tol: f64, k_rel_tol: f64) -> RecoveryScore {
    let d_within = s
        .d_cross
        .iter()
        .filter(|((h, k), v)| (v.value - scenario.dispersion.rate(*h, *k)).abs() <= d_tol)
        .count();
    let caps = scenario.bio.carrying_capacity();
    let k_within = s
        .capacity
        .iter()
        .filter(|c| c.rescaled.is_some_and(|v| (v / caps[c.patch] - 1.0).abs() <= k_rel_tol))
        .count();
    RecoveryScore { d_within, d_total: s.d_cross.len(), k_within, k_total: s.capacity.len() }
}
