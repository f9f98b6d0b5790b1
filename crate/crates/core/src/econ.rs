//! Estimation machinery: OLS, feasible-GLS seemingly unrelated regressions,
//! damped Gauss-Newton for nonlinear systems, and normal-theory intervals.
//!
//! Parameters are addressed by label. In a [`LinearSystemSpec`] a label that
//! appears in several equations is one shared parameter; explicit
//! [`LinearSystemSpec::restrictions`] merge distinct labels.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::PivotedQr;
use crate::math::{exp, ln, sqrt};

/// Per-equation fit summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EquationSummary {
    pub name: String,
    pub n_obs: usize,
    pub n_params: usize,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSet {
    pub labels: Vec<String>,
    pub estimates: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub std_errors: Vec<f64>,
    /// Cross-equation residual covariance (1 × 1 for single equations).
    pub residual_covariance: DMatrix<f64>,
    pub equations: Vec<EquationSummary>,
    /// Ridge added to the residual covariance, in its own units.
    pub ridge_jitter: f64,
    /// Negative eigenvalues of a pairwise residual covariance were clipped.
    pub sigma_projected: bool,
    /// Labels merged into another parameter by a restriction, with the
    /// index of the parameter they resolve to.
    pub aliases: BTreeMap<String, usize>,
    pub iterations: usize,
}

impl EstimateSet {
    /// Estimates with a diagonal covariance, e.g. reported values or an
    /// exact reduced form.
    pub fn from_values(labels: Vec<String>, estimates: Vec<f64>, std_errors: Vec<f64>) -> Self {
        let covariance = DMatrix::from_diagonal(&DVector::from_iterator(
            std_errors.len(),
            std_errors.iter().map(|s| s * s),
        ));
        Self {
            labels,
            estimates,
            covariance,
            std_errors,
            residual_covariance: DMatrix::zeros(0, 0),
            equations: Vec::new(),
            ridge_jitter: 0.0,
            sigma_projected: false,
            aliases: BTreeMap::new(),
            iterations: 0,
        }
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label).or_else(|| self.aliases.get(label).copied())
    }

    fn require(&self, label: &str) -> Result<usize> {
        self.index_of(label).ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn get(&self, label: &str) -> Result<f64> {
        Ok(self.estimates[self.require(label)?])
    }

    pub fn std_error(&self, label: &str) -> Result<f64> {
        Ok(self.std_errors[self.require(label)?])
    }

    pub fn z_value(&self, label: &str) -> Result<f64> {
        let i = self.require(label)?;
        Ok(self.estimates[i] / self.std_errors[i])
    }

    pub fn covariance_between(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.covariance[(self.require(a)?, self.require(b)?)])
    }
}

fn std_errors_of(cov: &DMatrix<f64>) -> Vec<f64> {
    (0..cov.nrows()).map(|i| sqrt(cov[(i, i)].max(0.0))).collect()
}

fn r_squared(y: &[f64], residuals: &[f64]) -> f64 {
    let n = y.len() as f64;
    if y.is_empty() {
        return f64::NAN;
    }
    let mean = y.iter().sum::<f64>() / n;
    let tss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    if tss == 0.0 {
        if rss == 0.0 { 1.0 } else { f64::NAN }
    } else {
        1.0 - rss / tss
    }
}

fn default_labels(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("b{j}")).collect()
}

fn rank_error(qr: &PivotedQr, labels: &[String]) -> Error {
    Error::RankDeficient {
        dependent: qr.dependent_columns().into_iter().map(|j| labels[j].clone()).collect(),
    }
}

/// Ordinary least squares with labels `b0, b1, …`.
pub fn ols(y: &[f64], x: &DMatrix<f64>) -> Result<EstimateSet> {
    ols_labeled(y, x, &default_labels(x.ncols()))
}

pub fn ols_labeled(y: &[f64], x: &DMatrix<f64>, labels: &[String]) -> Result<EstimateSet> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch { context: "ols response", expected: n, found: y.len() });
    }
    if labels.len() != p {
        return Err(Error::DimensionMismatch { context: "ols labels", expected: p, found: labels.len() });
    }
    if n == 0 {
        return Err(Error::NoUsableRows("ols"));
    }
    let qr = PivotedQr::new(x);
    if !qr.is_full_rank() {
        return Err(rank_error(&qr, labels));
    }
    let b = qr.solve(y);
    let fitted = x * &b;
    let residuals: Vec<f64> = y.iter().zip(fitted.iter()).map(|(y, f)| y - f).collect();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let sigma2 = if n > p { rss / (n - p) as f64 } else { 0.0 };
    let covariance = qr.inverse_gram() * sigma2;
    Ok(EstimateSet {
        labels: labels.to_vec(),
        estimates: b.iter().copied().collect(),
        std_errors: std_errors_of(&covariance),
        covariance,
        residual_covariance: DMatrix::from_element(1, 1, rss / n as f64),
        equations: vec![EquationSummary {
            name: "ols".into(),
            n_obs: n,
            n_params: p,
            r_squared: r_squared(y, &residuals),
            residuals,
        }],
        ridge_jitter: 0.0,
        sigma_projected: false,
        aliases: BTreeMap::new(),
        iterations: 1,
    })
}

/// One equation of a linear system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemEquation {
    pub name: String,
    pub response: Vec<f64>,
    pub design: DMatrix<f64>,
    /// One label per design column, unique within the equation.
    pub labels: Vec<String>,
    /// Observation keys aligning rows across equations (e.g. a market or a
    /// period). `None` means row position.
    pub index: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearSystemSpec {
    pub equations: Vec<SystemEquation>,
    /// Pairs of labels constrained to be equal.
    pub restrictions: Vec<(String, String)>,
}

/// How rows are aligned across equations for the cross-equation covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IndexMode {
    /// Every equation must carry the same observation keys.
    #[default]
    Balanced,
    /// Keep only keys present in every equation.
    Intersect,
    /// Keep every row; each observation is weighted by the inverse of the
    /// covariance block of the equations it appears in, and the residual
    /// covariance is estimated from pairwise-complete observations.
    Pairwise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurOptions {
    pub mode: IndexMode,
    /// Iterate FGLS until the coefficients settle.
    pub iterate: bool,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for SurOptions {
    fn default() -> Self {
        Self { mode: IndexMode::Balanced, iterate: false, max_iterations: 50, tolerance: 1e-8 }
    }
}

struct Stacked {
    labels: Vec<String>,
    aliases: BTreeMap<String, usize>,
    /// Rows grouped by observation key.
    x: DMatrix<f64>,
    y: Vec<f64>,
    /// Equation of each stacked row.
    row_eq: Vec<usize>,
    /// `(first row, equations)` per observation group.
    groups: Vec<(usize, Vec<usize>)>,
    n_eq: usize,
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut root = i;
    while parent[root] != root {
        root = parent[root];
    }
    let mut node = i;
    while parent[node] != root {
        let next = parent[node];
        parent[node] = root;
        node = next;
    }
    root
}

fn stack(spec: &LinearSystemSpec, mode: IndexMode) -> Result<Stacked> {
    if spec.equations.is_empty() {
        return Err(Error::NoUsableRows("system with no equations"));
    }
    // Labels in order of first appearance.
    let mut label_ids: BTreeMap<&str, usize> = BTreeMap::new();
    let mut all_labels: Vec<&str> = Vec::new();
    for eq in &spec.equations {
        if eq.response.len() != eq.design.nrows() {
            return Err(Error::DimensionMismatch {
                context: "equation rows",
                expected: eq.design.nrows(),
                found: eq.response.len(),
            });
        }
        if eq.labels.len() != eq.design.ncols() {
            return Err(Error::DimensionMismatch {
                context: "equation labels",
                expected: eq.design.ncols(),
                found: eq.labels.len(),
            });
        }
        if let Some(index) = &eq.index {
            if index.len() != eq.response.len() {
                return Err(Error::DimensionMismatch {
                    context: "equation index",
                    expected: eq.response.len(),
                    found: index.len(),
                });
            }
        }
        let mut seen = BTreeMap::new();
        for l in &eq.labels {
            if seen.insert(l.as_str(), ()).is_some() {
                return Err(Error::InvalidParameter(format!(
                    "label `{l}` repeated within equation `{}`",
                    eq.name
                )));
            }
            if !label_ids.contains_key(l.as_str()) {
                label_ids.insert(l.as_str(), all_labels.len());
                all_labels.push(l.as_str());
            }
        }
    }
    let mut parent: Vec<usize> = (0..all_labels.len()).collect();
    for (a, b) in &spec.restrictions {
        let ia = *label_ids.get(a.as_str()).ok_or_else(|| Error::UnknownLabel(a.clone()))?;
        let ib = *label_ids.get(b.as_str()).ok_or_else(|| Error::UnknownLabel(b.clone()))?;
        let (ra, rb) = (find(&mut parent, ia), find(&mut parent, ib));
        if ra != rb {
            // Keep the earlier label as representative.
            let (keep, drop) = if ra < rb { (ra, rb) } else { (rb, ra) };
            parent[drop] = keep;
        }
    }
    let mut column_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut labels = Vec::new();
    let mut label_column = vec![0usize; all_labels.len()];
    let mut aliases = BTreeMap::new();
    for i in 0..all_labels.len() {
        let root = find(&mut parent, i);
        let col = *column_of_root.entry(root).or_insert_with(|| {
            labels.push(all_labels[root].to_string());
            labels.len() - 1
        });
        label_column[i] = col;
        if root != i {
            aliases.insert(all_labels[i].to_string(), col);
        }
    }

    // Observation keys.
    let keys: Vec<Vec<u64>> = spec
        .equations
        .iter()
        .map(|eq| eq.index.clone().unwrap_or_else(|| (0..eq.response.len() as u64).collect()))
        .collect();
    let mut by_key: BTreeMap<u64, Vec<(usize, usize)>> = BTreeMap::new();
    for (e, ks) in keys.iter().enumerate() {
        for (row, k) in ks.iter().enumerate() {
            let slot = by_key.entry(*k).or_default();
            if slot.iter().any(|(eq, _)| *eq == e) {
                return Err(Error::Data(format!(
                    "observation key {k} repeated in equation `{}`",
                    spec.equations[e].name
                )));
            }
            slot.push((e, row));
        }
    }
    let n_eq = spec.equations.len();
    match mode {
        IndexMode::Balanced => {
            if let Some((k, _)) = by_key.iter().find(|(_, rows)| rows.len() != n_eq) {
                return Err(Error::Data(format!(
                    "unbalanced system: observation {k} missing from some equations"
                )));
            }
        }
        IndexMode::Intersect => by_key.retain(|_, rows| rows.len() == n_eq),
        IndexMode::Pairwise => {}
    }
    let n_rows: usize = by_key.values().map(Vec::len).sum();
    if n_rows == 0 {
        return Err(Error::NoUsableRows("system"));
    }
    let mut x = DMatrix::<f64>::zeros(n_rows, labels.len());
    let mut y = Vec::with_capacity(n_rows);
    let mut row_eq = Vec::with_capacity(n_rows);
    let mut groups = Vec::with_capacity(by_key.len());
    let mut r = 0;
    for rows in by_key.values() {
        let mut rows = rows.clone();
        rows.sort_unstable();
        groups.push((r, rows.iter().map(|(e, _)| *e).collect()));
        for (e, src) in rows {
            let eq = &spec.equations[e];
            y.push(eq.response[src]);
            row_eq.push(e);
            for (j, label) in eq.labels.iter().enumerate() {
                let col = label_column[label_ids[label.as_str()]];
                x[(r, col)] += eq.design[(src, j)];
            }
            r += 1;
        }
    }
    Ok(Stacked { labels, aliases, x, y, row_eq, groups, n_eq })
}

/// Residual covariance across equations. Entries are averaged over the
/// observations where both equations are present (denominator `n`, not `n − k`).
fn residual_covariance(st: &Stacked, residuals: &[f64]) -> DMatrix<f64> {
    let m = st.n_eq;
    let mut sum = DMatrix::<f64>::zeros(m, m);
    let mut count = DMatrix::<f64>::zeros(m, m);
    for (start, eqs) in &st.groups {
        for (a, ea) in eqs.iter().enumerate() {
            for (b, eb) in eqs.iter().enumerate() {
                sum[(*ea, *eb)] += residuals[start + a] * residuals[start + b];
                count[(*ea, *eb)] += 1.0;
            }
        }
    }
    sum.zip_map(&count, |s, c| if c > 0.0 { s / c } else { 0.0 })
}

/// Clips eigenvalues below `1e-8·λ_max` up to that floor. Pairwise-complete
/// covariance estimates need not be positive semidefinite.
fn project_psd(sigma: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eig = sigma.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let floor = 1e-8 * max;
    if !(max > 0.0) || eig.eigenvalues.min() >= floor {
        return (sigma.clone(), false);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    (out.clone() * 0.5 + out.transpose() * 0.5, true)
}

/// Cholesky factor of a scaled and, if needed, ridge-regularized `sigma`.
/// Returns `(L, scale, jitter)` with `sigma + jitter·I ≈ scale·L·Lᵀ`.
fn regularized_cholesky(sigma: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64, f64)> {
    let m = sigma.nrows();
    let scale = sigma.trace() / m as f64;
    if !(scale > 0.0 && scale.is_finite()) {
        // Perfect fit: any positive-definite weight gives the same coefficients.
        return Ok((DMatrix::identity(m, m), 0.0, 0.0));
    }
    let normalized = sigma / scale;
    let mut jitter = 0.0;
    loop {
        let candidate = &normalized + DMatrix::<f64>::identity(m, m) * jitter;
        if let Some(chol) = candidate.clone().cholesky() {
            let l = chol.l();
            let diag: Vec<f64> = (0..m).map(|i| l[(i, i)] * l[(i, i)]).collect();
            let max = diag.iter().copied().fold(0.0, f64::max);
            let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
            if min > 1e-12 * max {
                return Ok((l, scale, jitter * scale));
            }
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > 1e-2 {
            return Err(Error::SingularCovariance { jitter: jitter * scale });
        }
    }
}

/// Whitens each observation group by the Cholesky factor of its block of
/// the residual covariance.
fn whiten(st: &Stacked, chol: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut x = st.x.clone();
    let mut y = st.y.clone();
    let p = x.ncols();
    let mut cache: BTreeMap<Vec<usize>, DMatrix<f64>> = BTreeMap::new();
    let full = chol * chol.transpose();
    for (start, eqs) in &st.groups {
        let l = cache.entry(eqs.clone()).or_insert_with(|| {
            let sub = DMatrix::from_fn(eqs.len(), eqs.len(), |a, b| full[(eqs[a], eqs[b])]);
            sub.cholesky().map(|c| c.l()).unwrap_or_else(|| DMatrix::identity(eqs.len(), eqs.len()))
        });
        let g = eqs.len();
        // Forward substitution L z = v on the group rows.
        for a in 0..g {
            let ra = start + a;
            for b in 0..a {
                let rb = start + b;
                let lab = l[(a, b)];
                y[ra] -= lab * y[rb];
                for c in 0..p {
                    let v = x[(rb, c)];
                    if v != 0.0 {
                        x[(ra, c)] -= lab * v;
                    }
                }
            }
            let laa = l[(a, a)];
            y[ra] /= laa;
            for c in 0..p {
                x[(ra, c)] /= laa;
            }
        }
    }
    (x, y)
}

fn stacked_residuals(st: &Stacked, b: &DVector<f64>) -> Vec<f64> {
    let fitted = &st.x * b;
    st.y.iter().zip(fitted.iter()).map(|(y, f)| y - f).collect()
}

/// Feasible-GLS seemingly unrelated regressions (Zellner two-step, optionally
/// iterated). The first step is system OLS honoring the restrictions.
pub fn sur(spec: &LinearSystemSpec, options: &SurOptions) -> Result<EstimateSet> {
    let st = stack(spec, options.mode)?;
    let qr = PivotedQr::new(&st.x);
    if !qr.is_full_rank() {
        return Err(rank_error(&qr, &st.labels));
    }
    let mut b = qr.solve(&st.y);
    drop(qr);

    let mut iterations = 0;
    let mut result;
    loop {
        iterations += 1;
        let residuals = stacked_residuals(&st, &b);
        let (sigma, projected) = project_psd(&residual_covariance(&st, &residuals));
        let (chol, scale, jitter) = regularized_cholesky(&sigma)?;
        let (xw, yw) = whiten(&st, &chol);
        let qr = PivotedQr::new(&xw);
        if !qr.is_full_rank() {
            return Err(rank_error(&qr, &st.labels));
        }
        let b_new = qr.solve(&yw);
        let change = b_new
            .iter()
            .zip(b.iter())
            .map(|(a, c)| (a - c).abs() / (1.0 + c.abs()))
            .fold(0.0, f64::max);
        b = b_new;
        result = (qr.inverse_gram() * scale, projected, jitter);
        if !options.iterate || change < options.tolerance || iterations >= options.max_iterations {
            break;
        }
    }
    let (covariance, sigma_projected, jitter) = result;
    let residuals = stacked_residuals(&st, &b);
    let sigma = residual_covariance(&st, &residuals);

    let mut per_eq_y: Vec<Vec<f64>> = vec![Vec::new(); st.n_eq];
    let mut per_eq_e: Vec<Vec<f64>> = vec![Vec::new(); st.n_eq];
    for (r, e) in st.row_eq.iter().enumerate() {
        per_eq_y[*e].push(st.y[r]);
        per_eq_e[*e].push(residuals[r]);
    }
    let equations = spec
        .equations
        .iter()
        .enumerate()
        .map(|(e, eq)| EquationSummary {
            name: eq.name.clone(),
            n_obs: per_eq_y[e].len(),
            n_params: eq.labels.len(),
            r_squared: r_squared(&per_eq_y[e], &per_eq_e[e]),
            residuals: core::mem::take(&mut per_eq_e[e]),
        })
        .collect();
    Ok(EstimateSet {
        labels: st.labels,
        estimates: b.iter().copied().collect(),
        std_errors: std_errors_of(&covariance),
        covariance,
        residual_covariance: sigma,
        equations,
        ridge_jitter: jitter,
        sigma_projected,
        aliases: st.aliases,
        iterations,
    })
}

/// A residual vector as a function of parameters.
pub trait ResidualModel {
    fn n_params(&self) -> usize;

    fn residuals(&self, params: &[f64]) -> Vec<f64>;

    /// Analytic Jacobian `∂r_i/∂p_j`; `None` selects central differences.
    fn jacobian(&self, _params: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// Central-difference Jacobian with step `rel_step·max(|p_j|, 1)`.
pub fn central_difference_jacobian<M: ResidualModel + ?Sized>(
    model: &M,
    params: &[f64],
    rel_step: f64,
) -> DMatrix<f64> {
    let base = model.residuals(params);
    let mut jac = DMatrix::<f64>::zeros(base.len(), params.len());
    let mut p = params.to_vec();
    for j in 0..params.len() {
        let h = rel_step * params[j].abs().max(1.0);
        p[j] = params[j] + h;
        let plus = model.residuals(&p);
        p[j] = params[j] - h;
        let minus = model.residuals(&p);
        p[j] = params[j];
        for i in 0..base.len() {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

/// Largest column-wise relative discrepancy `‖a_j − b_j‖∞ / ‖a_j‖∞`.
pub fn jacobian_discrepancy(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..a.ncols() {
        let norm = a.column(j).amax();
        let diff = (a.column(j) - b.column(j)).amax();
        let rel = if norm > 0.0 { diff / norm } else { diff };
        worst = worst.max(rel);
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlsOptions {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub objective_tolerance: f64,
    /// Optional per-residual weights (the objective is `Σ w_i r_i²`).
    pub weights: Option<Vec<f64>>,
    pub fd_step: f64,
}

impl Default for NlsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            step_tolerance: 1e-10,
            objective_tolerance: 1e-12,
            weights: None,
            fd_step: 1e-6,
        }
    }
}

struct Weighted<'a, M: ?Sized> {
    model: &'a M,
    sqrt_w: Option<Vec<f64>>,
    fd_step: f64,
}

impl<M: ResidualModel + ?Sized> Weighted<'_, M> {
    fn residuals(&self, p: &[f64]) -> Vec<f64> {
        let mut r = self.model.residuals(p);
        if let Some(w) = &self.sqrt_w {
            r.iter_mut().zip(w).for_each(|(r, w)| *r *= w);
        }
        r
    }

    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let mut j = self
            .model
            .jacobian(p)
            .unwrap_or_else(|| central_difference_jacobian(self.model, p, self.fd_step));
        if let Some(w) = &self.sqrt_w {
            for (i, wi) in w.iter().enumerate() {
                j.row_mut(i).scale_mut(*wi);
            }
        }
        j
    }
}

fn half_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Levenberg-Marquardt with Marquardt's diagonal scaling. Covariance is
/// `σ²(JᵀJ)⁻¹` at the solution with `σ² = Σ w r² / (m − n)`.
pub fn nls_system<M: ResidualModel + ?Sized>(
    model: &M,
    start: &[f64],
    labels: &[String],
    options: &NlsOptions,
) -> Result<EstimateSet> {
    let n = model.n_params();
    if start.len() != n || labels.len() != n {
        return Err(Error::DimensionMismatch { context: "nls start/labels", expected: n, found: start.len() });
    }
    let sqrt_w = match &options.weights {
        Some(w) => {
            if w.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidParameter("nls weights must be >= 0".into()));
            }
            Some(w.iter().map(|v| sqrt(*v)).collect::<Vec<_>>())
        }
        None => None,
    };
    let problem = Weighted { model, sqrt_w, fd_step: options.fd_step };
    let mut p = start.to_vec();
    let mut r = problem.residuals(&p);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("residuals not finite at the starting point".into()));
    }
    let m = r.len();
    let mut f = half_sq(&r);
    let mut mu = 1e-3;
    let mut diag = vec![0.0f64; n];
    let mut converged = f == 0.0;
    let mut iterations = 0;

    while !converged && iterations < options.max_iterations {
        iterations += 1;
        let jac = problem.jacobian(&p);
        for (j, dj) in diag.iter_mut().enumerate() {
            *dj = dj.max(jac.column(j).norm()).max(1e-300);
        }
        loop {
            // [J; √μ D] δ = [−r; 0]
            let mut aug = DMatrix::<f64>::zeros(m + n, n);
            aug.view_mut((0, 0), (m, n)).copy_from(&jac);
            let mut rhs = vec![0.0; m + n];
            for i in 0..m {
                rhs[i] = -r[i];
            }
            for j in 0..n {
                aug[(m + j, j)] = sqrt(mu) * diag[j];
            }
            let delta = PivotedQr::new(&aug).solve(&rhs);
            let trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
            let r_trial = problem.residuals(&trial);
            let f_trial = if r_trial.iter().all(|v| v.is_finite()) { half_sq(&r_trial) } else { f64::INFINITY };
            if f_trial < f {
                let step_norm = delta.norm();
                let p_norm = sqrt(p.iter().map(|v| v * v).sum());
                let rel_drop = (f - f_trial) / f;
                p = trial;
                r = r_trial;
                f = f_trial;
                mu = (mu / 3.0).max(1e-20);
                if f == 0.0
                    || step_norm <= options.step_tolerance * (p_norm + options.step_tolerance)
                    || rel_drop < options.objective_tolerance
                {
                    converged = true;
                }
                break;
            }
            mu *= 4.0;
            if mu > 1e20 {
                // No descent possible at working precision: stationary point.
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::NonConvergence { iterations, best: p, objective: f });
    }

    let jac = problem.jacobian(&p);
    let qr = PivotedQr::new(&jac);
    if !qr.is_full_rank() {
        return Err(Error::RankDeficient {
            dependent: qr.dependent_columns().into_iter().map(|j| labels[j].clone()).collect(),
        });
    }
    let sigma2 = if m > n { 2.0 * f / (m - n) as f64 } else { 0.0 };
    let covariance = qr.inverse_gram() * sigma2;
    let raw = model.residuals(&p);
    let y_dummy: Vec<f64> = vec![0.0; m];
    Ok(EstimateSet {
        labels: labels.to_vec(),
        estimates: p,
        std_errors: std_errors_of(&covariance),
        covariance,
        residual_covariance: DMatrix::from_element(1, 1, 2.0 * f / m as f64),
        equations: vec![EquationSummary {
            name: "nls".into(),
            n_obs: m,
            n_params: n,
            r_squared: r_squared(&y_dummy, &raw),
            residuals: raw,
        }],
        ridge_jitter: 0.0,
        sigma_projected: false,
        aliases: BTreeMap::new(),
        iterations,
    })
}

/// Standard normal quantile `Φ⁻¹(p)` (Acklam's rational approximation with
/// one Halley refinement step).
pub fn normal_quantile(p: f64) -> f64 {
    if !(p > 0.0 && p < 1.0) {
        return if p == 0.0 { f64::NEG_INFINITY } else if p == 1.0 { f64::INFINITY } else { f64::NAN };
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const LOW: f64 = 0.02425;
    let x = if p < LOW {
        let q = sqrt(-2.0 * ln(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = sqrt(-2.0 * ln(1.0 - p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // Halley step on Φ(x) − p.
    let e = 0.5 * libm::erfc(-x / core::f64::consts::SQRT_2) - p;
    let u = e * sqrt(2.0 * core::f64::consts::PI) * exp(x * x / 2.0);
    x - u / (1.0 + x * u / 2.0)
}

/// Two-sided critical value for a central interval of probability `level`.
pub fn critical_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidLevel(level));
    }
    Ok(normal_quantile(0.5 + level / 2.0))
}

/// `estimate ± z(level)·se` for a labeled parameter.
pub fn confidence_interval(est: &EstimateSet, label: &str, level: f64) -> Result<(f64, f64)> {
    let z = critical_value(level)?;
    let point = est.get(label)?;
    let se = est.std_error(label)?;
    Ok((point - z * se, point + z * se))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_ols_recovers_coefficients() {
        let x = DMatrix::from_fn(10, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => ((i * i) % 7) as f64,
        });
        let b0 = DVector::from_vec(vec![0.5, -1.25, 2.0]);
        let y = &x * &b0;
        let est = ols(y.as_slice(), &x).unwrap();
        for (a, b) in est.estimates.iter().zip(b0.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn intercept_only_is_mean() {
        let y = [1.0, 4.0, 2.0, 9.0];
        let est = ols(&y, &DMatrix::from_element(4, 1, 1.0)).unwrap();
        assert!((est.estimates[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let x = DMatrix::from_fn(6, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => 2.0 + 3.0 * i as f64,
        });
        let labels: Vec<String> = ["const", "t", "affine"].iter().map(|s| s.to_string()).collect();
        match ols_labeled(&[0.0; 6], &x, &labels) {
            Err(Error::RankDeficient { dependent }) => assert_eq!(dependent.len(), 1),
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn quantiles() {
        assert!((critical_value(0.80).unwrap() - 1.2816).abs() < 1e-4);
        assert!((critical_value(0.90).unwrap() - 1.6449).abs() < 1e-4);
        assert!((critical_value(0.95).unwrap() - 1.959964).abs() < 1e-6);
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-12);
        assert!(critical_value(1.0).is_err());
    }

    fn single(point: f64, se: f64) -> EstimateSet {
        EstimateSet {
            labels: vec!["theta".into()],
            estimates: vec![point],
            covariance: DMatrix::from_element(1, 1, se * se),
            std_errors: vec![se],
            residual_covariance: DMatrix::zeros(1, 1),
            equations: vec![],
            ridge_jitter: 0.0,
            sigma_projected: false,
            aliases: BTreeMap::new(),
            iterations: 1,
        }
    }

    #[test]
    fn interval_examples() {
        let (lo, hi) = confidence_interval(&single(3.0, 0.0), "theta", 0.9).unwrap();
        assert_eq!((lo, hi), (3.0, 3.0));
        let (lo, hi) = confidence_interval(&single(0.0, 1.0), "theta", 0.9).unwrap();
        assert!((lo + 1.6449).abs() < 1e-4 && (hi - 1.6449).abs() < 1e-4);
        let w80 = confidence_interval(&single(0.0, 1.0), "theta", 0.8).unwrap();
        let w95 = confidence_interval(&single(0.0, 1.0), "theta", 0.95).unwrap();
        assert!(w95.1 - w95.0 > hi - lo && hi - lo > w80.1 - w80.0);
        assert!(matches!(
            confidence_interval(&single(0.0, 1.0), "nope", 0.9),
            Err(Error::UnknownLabel(_))
        ));
    }
}
