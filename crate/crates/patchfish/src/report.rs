//! Parameter tables as CSV (full precision) and aligned text (fixed
//! decimals per column, E-notation below 1e-3 in magnitude).

use std::fmt::Write as _;

use patchfish_core::econ::EstimateSet;
use patchfish_core::pipeline::Estimation;
use patchfish_core::stage1::{alpha0_label, alpha1_label, alpha2_label, Stage1Fit, KAPPA_LABEL};
use patchfish_core::stage2::{alpha0_label as reduced_alpha0, alpha1_label as reduced_alpha1, StructuralEstimates};

/// One estimated parameter. `stat` is the estimate over its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub stat: f64,
}

impl ParameterRow {
    pub fn new(name: impl Into<String>, estimate: f64, std_error: f64) -> Self {
        Self { name: name.into(), estimate, std_error, stat: estimate / std_error }
    }

    /// For rows whose statistic is given rather than derived.
    pub fn with_stat(name: impl Into<String>, estimate: f64, std_error: f64, stat: f64) -> Self {
        Self { name: name.into(), estimate, std_error, stat }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquationRow {
    pub name: String,
    pub obs: usize,
    pub parameters: usize,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityRow {
    pub patch: usize,
    pub at_80: f64,
    pub at_90: f64,
    pub mean: f64,
}

/// Decimal places of the estimate, standard error and statistic columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decimals(pub usize, pub usize, pub usize);

/// Column layout of each table.
pub mod layout {
    use super::Decimals;

    pub const STAGE1: Decimals = Decimals(4, 4, 2);
    pub const REDUCED: Decimals = Decimals(5, 5, 2);
    pub const CAPTURE: Decimals = Decimals(5, 4, 2);
    pub const STRUCTURAL: Decimals = Decimals(5, 4, 2);
    pub const CAPACITY: usize = 3;
}

/// Fixed notation with `decimals` places; nonzero values below 1e-3 in
/// magnitude use two-decimal E-notation with a signed two-digit exponent.
pub fn format_number(v: f64, decimals: usize) -> String {
    if v.is_nan() {
        return "NA".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if v != 0.0 && v.abs() < 1e-3 {
        let s = format!("{v:.2E}");
        let (mantissa, exp) = s.split_once('E').expect("E-notation");
        let exp: i32 = exp.parse().expect("exponent");
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}E{sign}{:02}", exp.abs());
    }
    format!("{v:.decimals$}")
}

/// CSV float: shortest representation that round-trips, `NaN` as empty.
fn csv_number(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:?}")
    }
}

fn aligned(title: &str, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for line in title.lines() {
        let _ = writeln!(out, "{line}");
    }
    out.push('\n');
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "  {cell:>w$}");
            }
        }
        s.trim_end().to_string()
    };
    let header: Vec<String> = header.iter().map(|h| h.to_string()).collect();
    let _ = writeln!(out, "{}", line(&header));
    for row in rows {
        let _ = writeln!(out, "{}", line(row));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub csv: String,
    pub text: String,
}

/// Parameter table with an optional per-equation block. `stat_name` is
/// `z` or `t`.
pub fn parameter_table(
    title: &str,
    rows: &[ParameterRow],
    equations: &[EquationRow],
    stat_name: &str,
    d: Decimals,
) -> Rendered {
    let mut csv = format!("parameter,estimate,std_error,{stat_name}_value\n");
    for r in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            r.name,
            csv_number(r.estimate),
            csv_number(r.std_error),
            csv_number(r.stat)
        );
    }
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.name.clone(),
                format_number(r.estimate, d.0),
                format_number(r.std_error, d.1),
                format_number(r.stat, d.2),
            ]
        })
        .collect();
    let stat_header = format!("{stat_name}-value");
    let mut text = aligned(title, &["Parameter", "Estimate", "St. Error", &stat_header], &cells);
    if !equations.is_empty() {
        let eq_cells: Vec<Vec<String>> = equations
            .iter()
            .map(|e| vec![e.name.clone(), e.obs.to_string(), e.parameters.to_string(), format_number(e.r_squared, 2)])
            .collect();
        let block = aligned("", &["Equation", "Obs", "Parameters", "R2"], &eq_cells);
        text.push_str(block.trim_start_matches('\n'));
    }
    Rendered { csv, text }
}

pub fn equation_csv(equations: &[EquationRow]) -> String {
    let mut out = String::from("equation,obs,parameters,r_squared\n");
    for e in equations {
        let _ = writeln!(out, "{},{},{},{}", e.name, e.obs, e.parameters, csv_number(e.r_squared));
    }
    out
}

pub fn capacity_table(title: &str, rows: &[CapacityRow]) -> Rendered {
    let mut csv = String::from("patch,at_80,at_90,mean\n");
    for r in rows {
        let _ = writeln!(csv, "K_{},{},{},{}", r.patch, csv_number(r.at_80), csv_number(r.at_90), csv_number(r.mean));
    }
    let d = layout::CAPACITY;
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![format!("K_{}", r.patch), format_number(r.at_80, d), format_number(r.at_90, d), format_number(r.mean, d)]
        })
        .collect();
    let text = aligned(title, &["Patch", "At 80%", "At 90%", "Mean"], &cells);
    Rendered { csv, text }
}

fn row_of(est: &EstimateSet, label: &str) -> Option<ParameterRow> {
    let i = est.index_of(label)?;
    Some(ParameterRow::new(label, est.estimates[i], est.std_errors[i]))
}

fn equations_of(est: &EstimateSet) -> Vec<EquationRow> {
    est.equations
        .iter()
        .map(|e| EquationRow { name: e.name.clone(), obs: e.n_obs, parameters: e.n_params, r_squared: e.r_squared })
        .collect()
}

/// First-stage rows: year intercepts, price coefficients by year and port,
/// effort elasticities, the capture intercept, then covariates.
pub fn stage1_rows(fit: &Stage1Fit) -> Vec<ParameterRow> {
    let est = &fit.estimates;
    let mut out = Vec::new();
    out.extend(fit.years.iter().filter_map(|y| row_of(est, &alpha0_label(*y))));
    for y in &fit.years {
        out.extend(fit.ports.iter().filter_map(|j| row_of(est, &alpha1_label(*y, *j))));
    }
    out.extend(fit.years.iter().filter_map(|y| row_of(est, &alpha2_label(*y))));
    out.extend(row_of(est, KAPPA_LABEL));
    out.extend(est.labels.iter().filter(|l| l.starts_with("a2z_") || l.starts_with("rho_")).filter_map(|l| row_of(est, l)));
    out
}

pub fn stage1_table(fit: &Stage1Fit) -> (Rendered, String) {
    let equations = equations_of(&fit.estimates);
    let table = parameter_table(
        "First-stage reduced form: port demand and capture equations",
        &stage1_rows(fit),
        &equations,
        "z",
        layout::STAGE1,
    );
    (table, equation_csv(&equations))
}

pub fn reduced_rows(reduced: &EstimateSet, n_patches: usize) -> Vec<ParameterRow> {
    let mut out = Vec::new();
    out.extend((0..n_patches).filter_map(|k| row_of(reduced, &reduced_alpha0(k))));
    out.extend((0..n_patches).filter_map(|k| row_of(reduced, &reduced_alpha1(k))));
    out
}

pub fn reduced_table(reduced: &EstimateSet, n_patches: usize) -> (Rendered, String) {
    let equations = equations_of(reduced);
    let table = parameter_table(
        "Second-stage reduced form: patch transition equations",
        &reduced_rows(reduced, n_patches),
        &equations,
        "z",
        layout::REDUCED,
    );
    (table, equation_csv(&equations))
}

pub fn capture_rows(est: &Estimation) -> Vec<ParameterRow> {
    let c = &est.capture;
    // Delta method on γ = exp(κ + offset) with the offset held fixed.
    let kappa_se = est.stage1.estimates.std_error(KAPPA_LABEL).unwrap_or(f64::NAN);
    let mut out = vec![ParameterRow::new("gamma", c.gamma, c.gamma * kappa_se)];
    for ((y, a), se) in c.years.iter().zip(&c.alpha).zip(&c.alpha_se) {
        out.push(ParameterRow::new(format!("alpha_{y}"), *a, *se));
    }
    out.push(ParameterRow::new("beta", c.beta, f64::NAN));
    out
}

pub fn capture_table(est: &Estimation) -> Rendered {
    parameter_table("Capture function", &capture_rows(est), &[], "z", layout::CAPTURE)
}

/// `r`, own rates `d_kk`, then cross rates `d_hk` ordered by `(h, k)`.
pub fn structural_rows(s: &StructuralEstimates) -> Vec<ParameterRow> {
    let mut out = vec![ParameterRow::new("r", s.r.value, s.r.se)];
    for (k, v) in s.d_own.iter().enumerate() {
        out.push(ParameterRow::new(format!("d_{0}_{0}", k + 1), v.value, v.se));
    }
    for ((h, k), v) in &s.d_cross {
        out.push(ParameterRow::new(format!("d_{}_{}", h + 1, k + 1), v.value, v.se));
    }
    out
}

pub fn structural_table(s: &StructuralEstimates) -> Rendered {
    parameter_table("Growth and migration parameters", &structural_rows(s), &[], "t", layout::STRUCTURAL)
}

pub fn capacity_rows(s: &StructuralEstimates) -> Vec<CapacityRow> {
    s.capacity
        .iter()
        .map(|c| CapacityRow { patch: c.patch + 1, at_80: c.at_80, at_90: c.at_90, mean: c.point })
        .collect()
}

pub fn capacity_report(s: &StructuralEstimates) -> Rendered {
    capacity_table("Carrying capacity per patch (upper confidence limits and point value)", &capacity_rows(s))
}

/// Capacities as used downstream: the chosen path, fallback flag and
/// rescaled value.
pub fn capacity_detail_csv(s: &StructuralEstimates) -> String {
    let mut out = String::from("patch,point,at_80,at_90,chosen,fallback,rescaled\n");
    for c in &s.capacity {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.patch + 1,
            csv_number(c.point),
            csv_number(c.at_80),
            csv_number(c.at_90),
            c.chosen.map_or(String::new(), csv_number),
            c.fallback,
            c.rescaled.map_or(String::new(), csv_number)
        );
    }
    out
}
