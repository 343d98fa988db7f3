//! Sparse and dense linear algebra used by assembly and the corrector solves.
//!
//! Everything here is deliberately small: compressed sparse rows with a
//! deterministic layout, a banded Cholesky factorization for the stiffness
//! and mass matrices of tensor meshes, and dense Cholesky variants for the
//! small reduced systems.

use crate::error::{LodError, Result};
use crate::scalar::Scalar;

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Csr<T> {
    /// Builds a matrix from (row, col, value) triplets, summing duplicates.
    ///
    /// Entries are sorted by `(row, col)` and duplicates are summed in input
    /// order, so the result is a deterministic function of the triplet list.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of bounds");
            if last == Some((i, j)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                data.push(v);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        Csr {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Csr {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, T::one())).collect())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.data[r])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => T::zero(),
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &x)| (i, j, x))
        })
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            let mut acc = T::zero();
            for (&j, &a) in c.iter().zip(v) {
                acc += a * x[j];
            }
            *yi = acc;
        }
    }

    /// `y += alpha * A^T x`
    pub fn mul_vec_transpose_acc(&self, alpha: T, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let s = alpha * xi;
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                y[j] += s * a;
            }
        }
    }

    pub fn transpose(&self) -> Csr<T> {
        Csr::from_triplets(
            self.ncols,
            self.nrows,
            self.triplets().map(|(i, j, v)| (j, i, v)).collect(),
        )
    }

    /// Quadratic form `x^T A y`.
    pub fn bilinear(&self, x: &[T], y: &[T]) -> T {
        assert_eq!(x.len(), self.nrows);
        let mut acc = T::zero();
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let (c, v) = self.row(i);
            let mut row = T::zero();
            for (&j, &a) in c.iter().zip(v) {
                row += a * y[j];
            }
            acc += xi * row;
        }
        acc
    }

    pub fn scaled(&self, s: T) -> Csr<T> {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Restriction to the given rows and columns (`Some(new_index)` maps keep
    /// an entry, `None` drops it).
    pub fn restrict(
        &self,
        row_map: &[Option<usize>],
        n_rows: usize,
        col_map: &[Option<usize>],
        n_cols: usize,
    ) -> Csr<T> {
        assert_eq!(row_map.len(), self.nrows);
        assert_eq!(col_map.len(), self.ncols);
        let mut trip = Vec::new();
        for (i, j, v) in self.triplets() {
            if let (Some(ri), Some(cj)) = (row_map[i], col_map[j]) {
                trip.push((ri, cj, v));
            }
        }
        Csr::from_triplets(n_rows, n_cols, trip)
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut d = vec![T::zero(); self.nrows * self.ncols];
        for (i, j, v) in self.triplets() {
            d[i * self.ncols + j] += v;
        }
        d
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn asymmetry(&self) -> T {
        assert_eq!(self.nrows, self.ncols);
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(T::zero(), T::max)
    }

    /// Half bandwidth `max |i - j|` over stored entries.
    pub fn half_bandwidth(&self) -> usize {
        self.triplets()
            .map(|(i, j, _)| i.abs_diff(j))
            .max()
            .unwrap_or(0)
    }

    pub fn cast<U: Scalar>(&self) -> Csr<U> {
        Csr {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    /// Sum of two matrices of equal shape, `A + s B`.
    pub fn add_scaled(&self, s: T, other: &Csr<T>) -> Csr<T> {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut trip: Vec<_> = self.triplets().collect();
        trip.extend(other.triplets().map(|(i, j, v)| (i, j, s * v)));
        Csr::from_triplets(self.nrows, self.ncols, trip)
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn norm_inf<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

/// Cholesky factorization of a symmetric positive definite band matrix.
///
/// The lower band is stored row by row: entry `(i, j)` with
/// `i - bw <= j <= i` lives at `i * (bw + 1) + (j + bw - i)`.
#[derive(Clone, Debug)]
pub struct BandedCholesky<T> {
    n: usize,
    bw: usize,
    l: Vec<T>,
}

impl<T: Scalar> BandedCholesky<T> {
    pub fn factor(a: &Csr<T>) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(LodError::Dimension(format!(
                "banded Cholesky needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let bw = a.half_bandwidth();
        let w = bw + 1;
        let mut l = vec![T::zero(); n * w];
        for (i, j, v) in a.triplets() {
            if j <= i {
                l[i * w + (j + bw - i)] += v;
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                // L_ij = (A_ij - sum_k L_ik L_jk) / L_jj
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = l[i * w + (j + bw - i)];
                for k in k0..j {
                    s -= l[i * w + (k + bw - i)] * l[j * w + (k + bw - j)];
                }
                if i == j {
                    if !(s > T::zero()) || !s.is_finite() {
                        return Err(LodError::NotPositiveDefinite {
                            pivot: i,
                            value: s.to_f64_lossy(),
                        });
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [T]) {
        assert_eq!(x.len(), self.n);
        let (bw, w) = (self.bw, self.bw + 1);
        for i in 0..self.n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * w + (k + bw - i)] * x[k];
            }
            x[i] = s / self.l[i * w + bw];
        }
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for k in (i + 1)..(i + bw + 1).min(self.n) {
                s -= self.l[k * w + (i + bw - k)] * x[k];
            }
            x[i] = s / self.l[i * w + bw];
        }
    }
}

/// Dense Cholesky of a small SPD matrix (row-major, `n x n`).
#[derive(Clone, Debug)]
pub struct DenseCholesky<T> {
    n: usize,
    l: Vec<T>,
}

impl<T: Scalar> DenseCholesky<T> {
    pub fn factor(n: usize, a: &[T]) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut l = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > T::zero()) || !s.is_finite() {
                        return Err(LodError::NotPositiveDefinite {
                            pivot: i,
                            value: s.to_f64_lossy(),
                        });
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(DenseCholesky { n, l })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[i * n + k] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        x
    }
}

/// Diagonally pivoted Cholesky of a symmetric positive semidefinite matrix.
///
/// Pivots below `rel_tol * max(diag)` are treated as zero, which gives a
/// particular solution of consistent singular systems.
#[derive(Clone, Debug)]
pub struct PivotedCholesky<T> {
    n: usize,
    rank: usize,
    perm: Vec<usize>,
    /// `n x rank`, row-major, rows in permuted order.
    l: Vec<T>,
}

impl<T: Scalar> PivotedCholesky<T> {
    pub fn factor(n: usize, a: &[T], rel_tol: T) -> Self {
        assert_eq!(a.len(), n * n);
        let mut work = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let max_diag = (0..n).map(|i| a[i * n + i]).fold(T::zero(), T::max);
        let tol = rel_tol * max_diag;
        let mut l = vec![T::zero(); n * n];
        let mut rank = 0;
        for k in 0..n {
            // pick the largest remaining diagonal
            let (mut p, mut best) = (k, work[perm[k] * n + perm[k]]);
            for (q, &pq) in perm.iter().enumerate().skip(k + 1) {
                let d = work[pq * n + pq];
                if d > best {
                    best = d;
                    p = q;
                }
            }
            if !(best > tol) {
                break;
            }
            perm.swap(k, p);
            l.swap_rows_n(n, k, p);
            let pk = perm[k];
            let d = best.sqrt();
            l[k * n + k] = d;
            for i in (k + 1)..n {
                let pi = perm[i];
                l[i * n + k] = work[pi * n + pk] / d;
            }
            for i in (k + 1)..n {
                let pi = perm[i];
                let lik = l[i * n + k];
                for j in (k + 1)..=i {
                    let pj = perm[j];
                    let v = work[pi * n + pj] - lik * l[j * n + k];
                    work[pi * n + pj] = v;
                    work[pj * n + pi] = v;
                }
            }
            rank += 1;
        }
        let mut lr = vec![T::zero(); n * rank];
        for i in 0..n {
            lr[i * rank..(i + 1) * rank].copy_from_slice(&l[i * n..i * n + rank]);
        }
        PivotedCholesky {
            n,
            rank,
            perm,
            l: lr,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let (n, r) = (self.n, self.rank);
        let mut y = vec![T::zero(); r];
        for i in 0..r {
            let mut s = b[self.perm[i]];
            for k in 0..i {
                s -= self.l[i * r + k] * y[k];
            }
            y[i] = s / self.l[i * r + i];
        }
        for i in (0..r).rev() {
            let mut s = y[i];
            for k in (i + 1)..r {
                s -= self.l[k * r + i] * y[k];
            }
            y[i] = s / self.l[i * r + i];
        }
        let mut x = vec![T::zero(); n];
        for i in 0..r {
            x[self.perm[i]] = y[i];
        }
        x
    }
}

trait SwapRows {
    fn swap_rows_n(&mut self, n: usize, a: usize, b: usize);
}

impl<T: Copy> SwapRows for Vec<T> {
    fn swap_rows_n(&mut self, n: usize, a: usize, b: usize) {
        if a == b {
            return;
        }
        for c in 0..n {
            self.swap(a * n + c, b * n + c);
        }
    }
}
