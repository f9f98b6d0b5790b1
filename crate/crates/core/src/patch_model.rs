//! Spatial layout and discrete-time stock dynamics.
//!
//! The stock in patch `k` evolves as
//!
//! ```text
//! x[t+1][k] = x[t][k] + r·x[t][k]·(1 − x[t][k]/K[k]) − H[t][k] + MN[t][k]
//! MN[t][k]  = d[k][k]·x[t][k] + Σ_{h≠k} d[h][k]·x[t][h]
//! ```
//!
//! `d[h][k]` is the per-period rate at which stock in `h` flows into `k`, so
//! net migration is driven by the *source* patch stock. Under the
//! conservative row-sum convention every row of `D` sums to zero, which makes
//! migration a pure redistribution of mass.
//!
//! Note on orientation: the widely quoted form of the migration equation
//! multiplies every inflow rate by the destination stock `x[t][k]`. That
//! reading cannot conserve mass and contradicts the matrix form
//! `x + F(x) − H + Dx`; this module uses the source-stock form above.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Patch ids, neighbor adjacency and port-to-patch distances (nautical miles).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGraph {
    n_patches: usize,
    adjacency: Vec<bool>,
    port_distances: Vec<Vec<f64>>,
}

impl PatchGraph {
    /// Builds a graph from undirected 0-based `edges`. `port_distances` is
    /// ports × patches.
    pub fn new(
        n_patches: usize,
        edges: &[(usize, usize)],
        port_distances: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if n_patches == 0 {
            return Err(Error::InvalidGraph("no patches".into()));
        }
        let mut adjacency = vec![false; n_patches * n_patches];
        for &(h, k) in edges {
            if h >= n_patches || k >= n_patches {
                return Err(Error::InvalidPatch { index: h.max(k), n_patches });
            }
            if h == k {
                return Err(Error::InvalidGraph(alloc::format!(
                    "self-loop on patch {}",
                    h + 1
                )));
            }
            adjacency[h * n_patches + k] = true;
            adjacency[k * n_patches + h] = true;
        }
        for (j, row) in port_distances.iter().enumerate() {
            if row.len() != n_patches {
                return Err(Error::DimensionMismatch {
                    context: "port distance row",
                    expected: n_patches,
                    found: row.len(),
                });
            }
            if let Some(bad) = row.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
                return Err(Error::InvalidGraph(alloc::format!(
                    "distance {bad} from port {} is not strictly positive and finite",
                    j + 1
                )));
            }
        }
        let graph = Self { n_patches, adjacency, port_distances };
        if !graph.is_connected() {
            return Err(Error::InvalidGraph("patches are not connected".into()));
        }
        Ok(graph)
    }

    /// A `rows × cols` lattice numbered row by row, with 4-neighborhood
    /// adjacency. A 4 × 2 lattice is the eight-patch layout:
    ///
    /// ```text
    /// 1 2
    /// 3 4
    /// 5 6
    /// 7 8
    /// ```
    pub fn grid(rows: usize, cols: usize, port_distances: Vec<Vec<f64>>) -> Result<Self> {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let id = r * cols + c;
                if c + 1 < cols {
                    edges.push((id, id + 1));
                }
                if r + 1 < rows {
                    edges.push((id, id + cols));
                }
            }
        }
        Self::new(rows * cols, &edges, port_distances)
    }

    fn is_connected(&self) -> bool {
        let n = self.n_patches;
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(h) = stack.pop() {
            for k in self.neighbors(h) {
                if !seen[k] {
                    seen[k] = true;
                    stack.push(k);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn n_patches(&self) -> usize {
        self.n_patches
    }

    pub fn n_ports(&self) -> usize {
        self.port_distances.len()
    }

    pub fn is_adjacent(&self, h: usize, k: usize) -> bool {
        h < self.n_patches && k < self.n_patches && self.adjacency[h * self.n_patches + k]
    }

    pub fn neighbors(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_patches).filter(move |&h| self.is_adjacent(h, k))
    }

    pub fn degree(&self, k: usize) -> usize {
        self.neighbors(k).count()
    }

    /// Undirected edges with `h < k`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for h in 0..self.n_patches {
            for k in h + 1..self.n_patches {
                if self.is_adjacent(h, k) {
                    out.push((h, k));
                }
            }
        }
        out
    }

    pub fn distance(&self, port: usize, patch: usize) -> f64 {
        self.port_distances[port][patch]
    }

    pub fn port_distances(&self) -> &[Vec<f64>] {
        &self.port_distances
    }

    pub(crate) fn check_patch(&self, k: usize) -> Result<()> {
        if k < self.n_patches {
            Ok(())
        } else {
            Err(Error::InvalidPatch { index: k, n_patches: self.n_patches })
        }
    }
}

/// Logistic growth parameters: common intrinsic rate and per-patch capacities (tons).
#[derive(Debug, Clone, PartialEq)]
pub struct BioParams {
    r: f64,
    carrying_capacity: Vec<f64>,
}

impl BioParams {
    pub fn new(r: f64, carrying_capacity: Vec<f64>) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!("growth rate r = {r} must be > 0")));
        }
        if let Some((k, cap)) =
            carrying_capacity.iter().enumerate().find(|(_, c)| !(**c > 0.0 && c.is_finite()))
        {
            return Err(Error::InvalidParameter(alloc::format!(
                "carrying capacity of patch {} is {cap}, must be > 0",
                k + 1
            )));
        }
        Ok(Self { r, carrying_capacity })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn carrying_capacity(&self) -> &[f64] {
        &self.carrying_capacity
    }

    pub fn n_patches(&self) -> usize {
        self.carrying_capacity.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RowSumConvention {
    /// Rows sum to zero and diagonals are non-positive (mass conserving).
    #[default]
    ConservativeZero,
    /// Rows sum to one.
    PaperOne,
    /// No row constraint.
    Unconstrained,
}

const ROW_SUM_TOL: f64 = 1e-12;

/// Neighbor-restricted migration matrix; entry `(h, k)` is `d_hk`.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionMatrix {
    rates: DMatrix<f64>,
    convention: RowSumConvention,
}

impl DispersionMatrix {
    pub fn new(
        graph: &PatchGraph,
        rates: DMatrix<f64>,
        convention: RowSumConvention,
    ) -> Result<Self> {
        let n = graph.n_patches();
        if rates.nrows() != n || rates.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "dispersion matrix",
                expected: n,
                found: rates.nrows().max(rates.ncols()),
            });
        }
        for h in 0..n {
            for k in 0..n {
                let d = rates[(h, k)];
                if !d.is_finite() {
                    return Err(Error::InvalidParameter(alloc::format!(
                        "dispersion rate d[{}][{}] is not finite",
                        h + 1,
                        k + 1
                    )));
                }
                if h != k && d != 0.0 && !graph.is_adjacent(h, k) {
                    return Err(Error::NonAdjacentRate { from: h, to: k });
                }
            }
        }
        let target = match convention {
            RowSumConvention::ConservativeZero => Some(0.0),
            RowSumConvention::PaperOne => Some(1.0),
            RowSumConvention::Unconstrained => None,
        };
        if let Some(target) = target {
            for h in 0..n {
                let sum: f64 = rates.row(h).iter().sum();
                if (sum - target).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidParameter(alloc::format!(
                        "row {} of the dispersion matrix sums to {sum}, expected {target}",
                        h + 1
                    )));
                }
            }
        }
        if convention == RowSumConvention::ConservativeZero {
            if let Some(k) = (0..n).find(|&k| rates[(k, k)] > 0.0) {
                return Err(Error::InvalidParameter(alloc::format!(
                    "diagonal d[{0}][{0}] must be <= 0 under the conservative convention",
                    k + 1
                )));
            }
        }
        Ok(Self { rates, convention })
    }

    /// Builds the matrix from directed off-diagonal rates `((h, k), d_hk)`,
    /// filling the diagonal from the row-sum convention. Under
    /// [`RowSumConvention::Unconstrained`] the diagonal is taken from
    /// `diagonal`, which must then be provided.
    pub fn from_rates(
        graph: &PatchGraph,
        off_diagonal: &[((usize, usize), f64)],
        convention: RowSumConvention,
        diagonal: Option<&[f64]>,
    ) -> Result<Self> {
        let n = graph.n_patches();
        let mut rates = DMatrix::<f64>::zeros(n, n);
        for &((h, k), d) in off_diagonal {
            graph.check_patch(h)?;
            graph.check_patch(k)?;
            if h == k {
                return Err(Error::InvalidParameter(
                    "off-diagonal list contains a diagonal entry".into(),
                ));
            }
            rates[(h, k)] = d;
        }
        for h in 0..n {
            let off: f64 = (0..n).filter(|&k| k != h).map(|k| rates[(h, k)]).sum();
            rates[(h, h)] = match convention {
                RowSumConvention::ConservativeZero => -off,
                RowSumConvention::PaperOne => 1.0 - off,
                RowSumConvention::Unconstrained => match diagonal {
                    Some(diag) if diag.len() == n => diag[h],
                    Some(diag) => {
                        return Err(Error::DimensionMismatch {
                            context: "dispersion diagonal",
                            expected: n,
                            found: diag.len(),
                        })
                    }
                    None => {
                        return Err(Error::InvalidParameter(
                            "unconstrained dispersion requires an explicit diagonal".into(),
                        ))
                    }
                },
            };
        }
        Self::new(graph, rates, convention)
    }

    pub fn zero(n: usize) -> Self {
        Self { rates: DMatrix::zeros(n, n), convention: RowSumConvention::ConservativeZero }
    }

    pub fn n_patches(&self) -> usize {
        self.rates.nrows()
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.rates[(from, to)]
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn convention(&self) -> RowSumConvention {
        self.convention
    }
}

/// Biomass per patch (tons) at period index `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StockState {
    pub x: Vec<f64>,
    pub t: usize,
}

impl StockState {
    pub fn new(x: Vec<f64>, t: usize) -> Result<Self> {
        if let Some((k, v)) = x.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(alloc::format!(
                "biomass in patch {} is {v}, must be finite and >= 0",
                k + 1
            )));
        }
        Ok(Self { x, t })
    }

    pub fn total(&self) -> f64 {
        self.x.iter().sum()
    }
}

/// Next state plus a per-patch flag set when the raw update went negative
/// and was floored at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: StockState,
    pub depleted: Vec<bool>,
}

/// `r·x·(1 − x/K_k)`.
pub fn logistic_growth(x: f64, params: &BioParams, k: usize) -> Result<f64> {
    let cap = *params
        .carrying_capacity
        .get(k)
        .ok_or(Error::InvalidPatch { index: k, n_patches: params.n_patches() })?;
    Ok(params.r * x * (1.0 - x / cap))
}

/// `MN_k = Σ_h d_hk·x_h` for every patch `k` (the `h = k` term is the own-patch rate).
pub fn net_migration(state: &StockState, d: &DispersionMatrix) -> Result<Vec<f64>> {
    let n = d.n_patches();
    if state.x.len() != n {
        return Err(Error::DimensionMismatch {
            context: "stock vector vs dispersion matrix",
            expected: n,
            found: state.x.len(),
        });
    }
    Ok((0..n)
        .map(|k| (0..n).map(|h| d.rates[(h, k)] * state.x[h]).sum())
        .collect())
}

/// Advances the stock by one period.
pub fn step(
    state: &StockState,
    params: &BioParams,
    d: &DispersionMatrix,
    harvest: &[f64],
) -> Result<StepOutcome> {
    let n = state.x.len();
    if params.n_patches() != n {
        return Err(Error::DimensionMismatch {
            context: "carrying capacities vs stock vector",
            expected: n,
            found: params.n_patches(),
        });
    }
    if harvest.len() != n {
        return Err(Error::DimensionMismatch {
            context: "harvest vector",
            expected: n,
            found: harvest.len(),
        });
    }
    if let Some((k, h)) = harvest.iter().enumerate().find(|(_, h)| !(**h >= 0.0)) {
        return Err(Error::InvalidParameter(alloc::format!(
            "harvest in patch {} is {h}, must be >= 0",
            k + 1
        )));
    }
    let migration = net_migration(state, d)?;
    let mut x = Vec::with_capacity(n);
    let mut depleted = Vec::with_capacity(n);
    for k in 0..n {
        let xk = state.x[k];
        let next = xk + logistic_growth(xk, params, k)? - harvest[k] + migration[k];
        depleted.push(next < 0.0);
        x.push(if next < 0.0 { 0.0 } else { next });
    }
    Ok(StepOutcome { state: StockState { x, t: state.t + 1 }, depleted })
}
