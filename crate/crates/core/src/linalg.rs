//! Dense least squares via Householder QR with column pivoting.
//!
//! Columns are equilibrated to unit Euclidean norm before factorization so
//! that rank decisions do not depend on the units of the regressors (biomass
//! in tons next to its square, for instance).

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::math::sqrt;

/// Relative tolerance used for rank decisions, scaled by the Frobenius norm
/// of the equilibrated matrix.
pub const RANK_TOLERANCE: f64 = 1e-10;

pub struct PivotedQr {
    m: usize,
    n: usize,
    /// Column-major; R on and above the diagonal, reflectors below.
    qr: Vec<f64>,
    tau: Vec<f64>,
    /// `perm[j]` is the original column stored at position `j`.
    perm: Vec<usize>,
    /// Multiplier applied to each original column before factorization.
    scale: Vec<f64>,
    rank: usize,
}

impl PivotedQr {
    pub fn new(a: &DMatrix<f64>) -> Self {
        Self::with_tolerance(a, RANK_TOLERANCE)
    }

    pub fn with_tolerance(a: &DMatrix<f64>, rel_tol: f64) -> Self {
        let (m, n) = a.shape();
        let mut qr: Vec<f64> = a.as_slice().to_vec();
        let mut scale = vec![1.0; n];
        for j in 0..n {
            let col = &mut qr[j * m..(j + 1) * m];
            let norm = sqrt(col.iter().map(|v| v * v).sum());
            if norm > 0.0 && norm.is_finite() {
                scale[j] = 1.0 / norm;
                col.iter_mut().for_each(|v| *v *= scale[j]);
            }
        }
        let frob = sqrt(qr.iter().map(|v| v * v).sum());
        let tol = rel_tol * frob.max(f64::MIN_POSITIVE);

        let mut perm: Vec<usize> = (0..n).collect();
        let mut tau = vec![0.0; n.min(m)];
        let steps = m.min(n);
        let mut rank = steps;

        for k in 0..steps {
            // Pivot: remaining column with the largest trailing norm.
            let mut best = k;
            let mut best_norm = -1.0;
            for j in k..n {
                let col = &qr[j * m + k..(j + 1) * m];
                let norm2: f64 = col.iter().map(|v| v * v).sum();
                if norm2 > best_norm {
                    best_norm = norm2;
                    best = j;
                }
            }
            let best_norm = sqrt(best_norm.max(0.0));
            if best_norm <= tol {
                rank = k;
                break;
            }
            if best != k {
                for i in 0..m {
                    qr.swap(k * m + i, best * m + i);
                }
                perm.swap(k, best);
            }

            // Householder reflector for column k, rows k..m.
            let x0 = qr[k * m + k];
            let beta = if x0 >= 0.0 { -best_norm } else { best_norm };
            let denom = x0 - beta;
            tau[k] = (beta - x0) / beta;
            for i in k + 1..m {
                qr[k * m + i] /= denom;
            }
            qr[k * m + k] = beta;

            let (head, tail) = qr.split_at_mut((k + 1) * m);
            let v = &head[k * m + k + 1..(k + 1) * m];
            for j in 0..n - k - 1 {
                let col = &mut tail[j * m..(j + 1) * m];
                let mut w = col[k];
                for (ci, vi) in col[k + 1..].iter().zip(v) {
                    w += ci * vi;
                }
                w *= tau[k];
                col[k] -= w;
                for (ci, vi) in col[k + 1..].iter_mut().zip(v) {
                    *ci -= w * vi;
                }
            }
        }

        Self { m, n, qr, tau, perm, scale, rank }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.n
    }

    /// Original indices of the columns found to be linearly dependent on the
    /// preceding pivots.
    pub fn dependent_columns(&self) -> Vec<usize> {
        let mut cols = self.perm[self.rank..].to_vec();
        cols.sort_unstable();
        cols
    }

    fn apply_qt(&self, b: &mut [f64]) {
        let m = self.m;
        for k in 0..self.rank {
            let v = &self.qr[k * m + k + 1..(k + 1) * m];
            let mut w = b[k];
            for (bi, vi) in b[k + 1..].iter().zip(v) {
                w += bi * vi;
            }
            w *= self.tau[k];
            b[k] -= w;
            for (bi, vi) in b[k + 1..].iter_mut().zip(v) {
                *bi -= w * vi;
            }
        }
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        self.qr[j * self.m + i]
    }

    /// Least-squares solution of `A x ≈ b`. Columns beyond the numerical
    /// rank are set to zero (basic solution).
    pub fn solve(&self, b: &[f64]) -> DVector<f64> {
        assert_eq!(b.len(), self.m, "right-hand side length");
        let mut qtb = b.to_vec();
        self.apply_qt(&mut qtb);
        let r = self.rank;
        let mut z = vec![0.0; r];
        for i in (0..r).rev() {
            let mut s = qtb[i];
            for (j, zj) in z.iter().enumerate().skip(i + 1) {
                s -= self.r(i, j) * zj;
            }
            z[i] = s / self.r(i, i);
        }
        let mut x = DVector::zeros(self.n);
        for (pos, zi) in z.into_iter().enumerate() {
            let col = self.perm[pos];
            x[col] = zi * self.scale[col];
        }
        x
    }

    /// `(AᵀA)⁻¹` in the original column order. Requires full column rank.
    pub fn inverse_gram(&self) -> DMatrix<f64> {
        assert!(self.is_full_rank(), "inverse_gram needs full column rank");
        let n = self.n;
        // Invert the upper-triangular R.
        let mut rinv = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            rinv[(j, j)] = 1.0 / self.r(j, j);
            for i in (0..j).rev() {
                let mut s = 0.0;
                for l in i + 1..=j {
                    s += self.r(i, l) * rinv[(l, j)];
                }
                rinv[(i, j)] = -s / self.r(i, i);
            }
        }
        let g = &rinv * rinv.transpose();
        let mut out = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let ci = self.perm[i];
            for j in 0..n {
                let cj = self.perm[j];
                out[(ci, cj)] = g[(i, j)] * self.scale[ci] * self.scale[cj];
            }
        }
        out
    }
}
