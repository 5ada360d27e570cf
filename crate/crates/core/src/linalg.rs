//! Sparse storage and a symmetric envelope (profile) `L D Lᵀ` factorization.
//!
//! Every matrix factored here is a symmetric stiffness matrix minus a
//! diagonal. The factorization does not pivot; the count of negative pivots
//! is the inertia of the matrix (Sylvester), which is how Morse indices and
//! shift bounds are certified. Solves are followed by iterative refinement
//! against the unfactored matrix.

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists; duplicates are summed, columns sorted.
    pub fn from_rows(n_cols: usize, mut rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                debug_assert!(c < n_cols);
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { n_rows: rows.len(), n_cols, row_ptr, col_idx, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        for (i, yi) in y.iter_mut().enumerate().take(self.n_rows) {
            *yi = self.row(i).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    /// Sorted coordinate triplets `(row, col, value)`, one per stored entry.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n_rows).flat_map(|i| self.row(i).map(move |(c, v)| (i, c, v))).collect()
    }

    /// Largest absolute row sum after dividing row `i` by `scale[i]`.
    pub fn scaled_row_norm(&self, scale: &[f64]) -> f64 {
        (0..self.n_rows)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>() / scale[i])
            .fold(0.0, f64::max)
    }
}

/// `L D Lᵀ` factorization of `K + diag(shift)` in envelope storage.
#[derive(Clone, Debug)]
pub struct EnvelopeLdl {
    n: usize,
    first: Vec<usize>,
    start: Vec<usize>,
    lower: Vec<f64>,
    pivots: Vec<f64>,
    /// Number of negative pivots, i.e. the number of negative eigenvalues.
    pub negative_pivots: usize,
    /// Smallest `|d_i| / |a_ii|` encountered.
    pub min_relative_pivot: f64,
    /// Pivots that were too small and got replaced by a tiny value of the same sign.
    pub perturbed_pivots: usize,
}

const TINY_PIVOT: f64 = 1e-15;

impl EnvelopeLdl {
    /// Factors the symmetric matrix `k + diag(diag_add)`. Only the lower
    /// triangle of `k` is read.
    pub fn factor(k: &CsrMatrix, diag_add: &[f64]) -> Result<Self> {
        let n = k.n_rows;
        assert_eq!(k.n_cols, n, "envelope factorization needs a square matrix");
        assert_eq!(diag_add.len(), n);
        let mut first = vec![0usize; n];
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            let fi = k.row(i).map(|(c, _)| c).filter(|&c| c <= i).min().unwrap_or(i);
            first[i] = fi;
            start[i + 1] = start[i] + (i - fi);
        }
        let mut lower = vec![0.0; start[n]];
        let mut pivots = vec![0.0; n];
        let mut buf: Vec<f64> = Vec::new();
        let mut negative = 0;
        let mut min_rel = f64::INFINITY;
        let mut perturbed = 0;
        for i in 0..n {
            let fi = first[i];
            let width = i - fi;
            buf.clear();
            buf.resize(width, 0.0);
            let mut aii = diag_add[i];
            for (c, v) in k.row(i) {
                if c < i {
                    buf[c - fi] += v;
                } else if c == i {
                    aii += v;
                }
            }
            // buf holds a_ij; transform in place into u_ij = L_ij d_j.
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                let row_j = &lower[start[j]..start[j + 1]];
                let mut s = buf[j - fi];
                let ui = &buf[lo - fi..j - fi];
                let lj = &row_j[lo - fj..j - fj];
                s -= ui.iter().zip(lj).map(|(a, b)| a * b).sum::<f64>();
                buf[j - fi] = s;
            }
            let mut di = aii;
            let row_i = &mut lower[start[i]..start[i + 1]];
            for (off, u) in buf.iter().enumerate() {
                let j = fi + off;
                let l = u / pivots[j];
                row_i[off] = l;
                di -= u * l;
            }
            let scale = aii.abs().max(f64::MIN_POSITIVE);
            if !di.is_finite() {
                return Err(Error::SingularJacobian(format!("non-finite pivot in row {i}")));
            }
            if di.abs() < TINY_PIVOT * scale {
                di = if di < 0.0 { -TINY_PIVOT * scale } else { TINY_PIVOT * scale };
                perturbed += 1;
            }
            min_rel = min_rel.min(di.abs() / scale);
            if di < 0.0 {
                negative += 1;
            }
            pivots[i] = di;
        }
        Ok(Self {
            n,
            first,
            start,
            lower,
            pivots,
            negative_pivots: negative,
            min_relative_pivot: min_rel,
            perturbed_pivots: perturbed,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Overwrites `b` with the solution.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.lower[self.start[i]..self.start[i + 1]];
            let s: f64 = row.iter().zip(&b[fi..i]).map(|(l, y)| l * y).sum();
            b[i] -= s;
        }
        for (bi, d) in b.iter_mut().zip(&self.pivots) {
            *bi /= d;
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let xi = b[i];
            let row = &self.lower[self.start[i]..self.start[i + 1]];
            for (bk, l) in b[fi..i].iter_mut().zip(row) {
                *bk -= l * xi;
            }
        }
    }
}

/// A factored symmetric matrix `k + diag(diag_add)` that keeps the
/// unfactored operator for residual correction.
#[derive(Clone, Debug)]
pub struct SymmetricSolver<'a> {
    k: &'a CsrMatrix,
    diag_add: Vec<f64>,
    pub ldl: EnvelopeLdl,
}

impl<'a> SymmetricSolver<'a> {
    pub fn new(k: &'a CsrMatrix, diag_add: Vec<f64>) -> Result<Self> {
        let ldl = EnvelopeLdl::factor(k, &diag_add)?;
        Ok(Self { k, diag_add, ldl })
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.k.mul_vec(x, y);
        for ((yi, d), xi) in y.iter_mut().zip(&self.diag_add).zip(x) {
            *yi += d * xi;
        }
    }

    pub fn negative_pivots(&self) -> usize {
        self.ldl.negative_pivots
    }

    /// Solves with up to three steps of iterative refinement.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = b.len();
        let mut x = b.to_vec();
        self.ldl.solve_in_place(&mut x);
        let bnorm = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if bnorm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let mut r = vec![0.0; n];
        for _ in 0..3 {
            self.apply(&x, &mut r);
            let mut rnorm = 0.0f64;
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri = bi - *ri;
                rnorm = rnorm.max(ri.abs());
            }
            if rnorm <= 1e-14 * bnorm {
                break;
            }
            self.ldl.solve_in_place(&mut r);
            for (xi, ri) in x.iter_mut().zip(&r) {
                *xi += ri;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian("non-finite solution".into()));
        }
        Ok(x)
    }
}

/// Weighted inner product `Σ w_i a_i b_i`.
pub fn wdot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

pub fn wnorm(w: &[f64], a: &[f64]) -> f64 {
    wdot(w, a, a).sqrt()
}

pub fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
