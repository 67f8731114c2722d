//! Small dense linear-algebra toolkit: row-major matrices, GEMM-backed
//! products, Cholesky solves and column orthonormalization.

use std::fmt;

use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix<{}>({}x{})", T::NAME, self.rows, self.cols)
    }
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// Wraps row-major `data`. Panics when the length does not match.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    /// `self · rhs`
    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        T::gemm(
            self.rows,
            self.cols,
            rhs.cols,
            T::one(),
            &self.data,
            (self.cols, 1),
            &rhs.data,
            (rhs.cols, 1),
            T::zero(),
            &mut out.data,
            (rhs.cols, 1),
        );
        out
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.rows, rhs.rows, "t_matmul shape mismatch");
        let mut out = Self::zeros(self.cols, rhs.cols);
        T::gemm(
            self.cols,
            self.rows,
            rhs.cols,
            T::one(),
            &self.data,
            (1, self.cols),
            &rhs.data,
            (rhs.cols, 1),
            T::zero(),
            &mut out.data,
            (rhs.cols, 1),
        );
        out
    }

    /// `self · rhsᵀ` without materializing the transpose.
    pub fn matmul_t(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.cols, "matmul_t shape mismatch");
        let mut out = Self::zeros(self.rows, rhs.rows);
        T::gemm(
            self.rows,
            self.cols,
            rhs.rows,
            T::one(),
            &self.data,
            (self.cols, 1),
            &rhs.data,
            (1, rhs.cols),
            T::zero(),
            &mut out.data,
            (rhs.rows, 1),
        );
        out
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!(self.shape(), rhs.shape(), "sub shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Failure of a factorization that needs full rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankDeficiency {
    /// Index of the first pivot that fell below tolerance.
    pub index: usize,
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
///
/// A pivot counts as zero once it drops below `rel_tol · max(diag)`.
pub fn cholesky<T: Scalar>(a: &Matrix<T>, rel_tol: T) -> Result<Matrix<T>, RankDeficiency> {
    assert_eq!(a.rows, a.cols, "cholesky needs a square matrix");
    let n = a.rows;
    let max_diag = (0..n).fold(T::zero(), |m, i| m.max(a.get(i, i).abs()));
    let tol = rel_tol * max_diag;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let lj = l.row(j)[..j].to_vec();
        let d = a.get(j, j) - lj.iter().map(|&v| v * v).sum::<T>();
        if !(d > tol) || !d.is_finite() {
            return Err(RankDeficiency { index: j });
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in (j + 1)..n {
            let li = &l.row(i)[..j];
            let s = li.iter().zip(&lj).map(|(&x, &y)| x * y).sum::<T>();
            let v = (a.get(i, j) - s) / djj;
            l.set(i, j, v);
        }
    }
    Ok(l)
}

/// Solves `L·Lᵀ·X = B` for every column of `B`, given the lower factor `L`.
pub fn cholesky_solve<T: Scalar>(l: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let n = l.rows;
    assert_eq!(b.rows, n, "cholesky_solve shape mismatch");
    let m = b.cols;
    let mut x = b.clone();
    // forward: L·Y = B, row by row so the inner loop runs over contiguous RHS columns
    for i in 0..n {
        for p in 0..i {
            let lip = l.get(i, p);
            if lip == T::zero() {
                continue;
            }
            let (head, tail) = x.data.split_at_mut(i * m);
            let src = &head[p * m..(p + 1) * m];
            for (dst, &s) in tail[..m].iter_mut().zip(src) {
                *dst -= lip * s;
            }
        }
        let inv = T::one() / l.get(i, i);
        x.row_mut(i).iter_mut().for_each(|v| *v *= inv);
    }
    // backward: Lᵀ·X = Y
    for i in (0..n).rev() {
        for p in (i + 1)..n {
            let lpi = l.get(p, i);
            if lpi == T::zero() {
                continue;
            }
            let (head, tail) = x.data.split_at_mut(p * m);
            let src = &tail[..m];
            for (dst, &s) in head[i * m..(i + 1) * m].iter_mut().zip(src) {
                *dst -= lpi * s;
            }
        }
        let inv = T::one() / l.get(i, i);
        x.row_mut(i).iter_mut().for_each(|v| *v *= inv);
    }
    x
}

/// Orthonormalizes the columns of `a` (rows ≥ cols) by modified Gram-Schmidt
/// with one re-orthogonalization pass.
pub fn orthonormalize_columns<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>, RankDeficiency> {
    assert!(a.rows >= a.cols, "need at least as many rows as columns");
    let (n, k) = a.shape();
    let mut cols: Vec<Vec<T>> = (0..k).map(|j| a.column(j)).collect();
    let scale = cols
        .iter()
        .map(|c| c.iter().map(|&v| v * v).sum::<T>().sqrt())
        .fold(T::zero(), T::max);
    let tol = T::epsilon() * T::from_usize(n).unwrap() * scale;
    for j in 0..k {
        for _pass in 0..2 {
            for p in 0..j {
                let (done, rest) = cols.split_at_mut(j);
                let q = &done[p];
                let v = &mut rest[0];
                let r = q.iter().zip(v.iter()).map(|(&x, &y)| x * y).sum::<T>();
                v.iter_mut().zip(q).for_each(|(vi, &qi)| *vi -= r * qi);
            }
        }
        let norm = cols[j].iter().map(|&v| v * v).sum::<T>().sqrt();
        if !(norm > tol) {
            return Err(RankDeficiency { index: j });
        }
        cols[j].iter_mut().for_each(|v| *v /= norm);
    }
    Ok(Matrix::from_fn(n, k, |i, j| cols[j][i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Matrix<f64> {
        let a = Matrix::from_fn(n + 3, n, |i, j| ((i * 7 + j * 3) as f64 * 0.61).sin());
        let mut g = a.t_matmul(&a);
        for i in 0..n {
            let v = g.get(i, i) + 0.5;
            g.set(i, i, v);
        }
        g
    }

    #[test]
    fn products_agree_with_explicit_transpose() {
        let a = Matrix::<f64>::from_fn(4, 3, |i, j| (i as f64) - 2.0 * j as f64);
        let b = Matrix::<f64>::from_fn(4, 2, |i, j| (i * j) as f64 + 0.5);
        assert_eq!(a.t_matmul(&b), a.transpose().matmul(&b));
        let c = Matrix::<f64>::from_fn(5, 3, |i, j| (i + j) as f64 * 0.25);
        assert_eq!(a.matmul_t(&c), a.matmul(&c.transpose()));
    }

    #[test]
    fn cholesky_solve_recovers_rhs() {
        let g = spd(6);
        let x = Matrix::from_fn(6, 2, |i, j| i as f64 - j as f64 * 0.3);
        let b = g.matmul(&x);
        let l = cholesky(&g, 1e-12).unwrap();
        let back = l.matmul_t(&l);
        assert!(back.sub(&g).max_abs() < 1e-12);
        let solved = cholesky_solve(&l, &b);
        assert!(solved.sub(&x).max_abs() < 1e-10);
    }

    #[test]
    fn cholesky_flags_singular_matrix() {
        // rank-1 Gram matrix
        let v = Matrix::<f64>::from_vec(1, 3, vec![1.0, 2.0, 3.0]);
        let g = v.t_matmul(&v);
        assert_eq!(cholesky(&g, 1e-12), Err(RankDeficiency { index: 1 }));
    }

    #[test]
    fn orthonormal_columns() {
        let a = Matrix::<f64>::from_fn(10, 4, |i, j| ((i + 1) as f64).powi(j as i32) + (i * j) as f64);
        let q = orthonormalize_columns(&a).unwrap();
        let gram = q.t_matmul(&q);
        assert!(gram.sub(&Matrix::identity(4)).max_abs() < 1e-12);
    }

    #[test]
    fn orthonormalize_rejects_dependent_columns() {
        let a = Matrix::<f64>::from_fn(5, 2, |i, _| i as f64 + 1.0);
        assert!(orthonormalize_columns(&a).is_err());
    }
}
