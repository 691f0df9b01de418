//! Dense matrix primitives, column standardization and data splitting.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense column-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    nrows: usize,
    ncols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, data: vec![T::zero(); nrows * ncols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds from column-major storage.
    pub fn from_col_major(nrows: usize, ncols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {nrows}x{ncols} matrix",
                data.len()
            )));
        }
        Ok(Self { nrows, ncols, data })
    }

    /// Builds from a slice of equally long rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(nrows, ncols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} values, expected {ncols}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    pub fn from_fn(nrows: usize, ncols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(nrows * ncols);
        for j in 0..ncols {
            for i in 0..nrows {
                data.push(f(i, j));
            }
        }
        Self { nrows, ncols, data }
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[T] {
        &self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [T] {
        &mut self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    pub fn row(&self, i: usize) -> Vec<T> {
        (0..self.ncols).map(|j| self[(i, j)]).collect()
    }

    pub fn as_col_major(&self) -> &[T] {
        &self.data
    }

    /// Copy of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.ncols);
        for j in 0..self.ncols {
            let c = self.col(j);
            data.extend(rows.iter().map(|&i| c[i]));
        }
        Self { nrows: rows.len(), ncols: self.ncols, data }
    }

    pub fn select_cols(&self, cols: &[usize]) -> Self {
        let mut data = Vec::with_capacity(cols.len() * self.nrows);
        for &j in cols {
            data.extend_from_slice(self.col(j));
        }
        Self { nrows: self.nrows, ncols: cols.len(), data }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.ncols, self.nrows, |i, j| self[(j, i)])
    }

    /// `self · v`.
    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.ncols, "mul_vec dimension");
        let mut out = vec![T::zero(); self.nrows];
        for (j, &vj) in v.iter().enumerate() {
            if vj != T::zero() {
                for (o, &x) in out.iter_mut().zip(self.col(j)) {
                    *o = *o + x * vj;
                }
            }
        }
        out
    }

    /// `selfᵀ · v`.
    pub fn tr_mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.nrows, "tr_mul_vec dimension");
        (0..self.ncols).map(|j| dot(self.col(j), v)).collect()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows, "matmul dimension");
        let mut out = Self::zeros(self.nrows, other.ncols);
        for j in 0..other.ncols {
            let col = self.mul_vec(other.col(j));
            out.col_mut(j).copy_from_slice(&col);
        }
        out
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Self {
        let p = self.ncols;
        let mut g = Self::zeros(p, p);
        for a in 0..p {
            for b in a..p {
                let v = dot(self.col(a), self.col(b));
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
        }
        g
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.nrows == self.ncols
            && (0..self.nrows)
                .all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { nrows: self.nrows, ncols: self.ncols, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.nrows && j < self.ncols);
        &self.data[j * self.nrows + i]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.nrows && j < self.ncols);
        &mut self.data[j * self.nrows + i]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    // independent accumulators so the loop vectorizes without reassociation
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        s = s + x * y;
    }
    s
}

pub fn mean<T: Scalar>(v: &[T]) -> T {
    v.iter().copied().sum::<T>() / T::of(v.len() as f64)
}

/// Population (denominator `n`) standard deviation.
pub fn sd_population<T: Scalar>(v: &[T]) -> T {
    let m = mean(v);
    let ss: T = v.iter().map(|&x| (x - m) * (x - m)).sum();
    (ss / T::of(v.len() as f64)).sqrt()
}

/// Centers every column and scales it to unit (denominator `n`) variance.
///
/// Returns the standardized matrix with the original column means and
/// standard deviations.
pub fn standardize<T: Scalar>(x: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>, Vec<T>)> {
    let mut out = x.clone();
    let mut means = Vec::with_capacity(x.ncols());
    let mut sds = Vec::with_capacity(x.ncols());
    let floor = T::of(1e-12);
    for j in 0..x.ncols() {
        let c = out.col_mut(j);
        let m = mean(c);
        for v in c.iter_mut() {
            *v = *v - m;
        }
        let sd = sd_population(c);
        if !(sd >= floor) {
            return Err(Error::ConstantColumn(j));
        }
        for v in c.iter_mut() {
            *v = *v / sd;
        }
        means.push(m);
        sds.push(sd);
    }
    Ok((out, means, sds))
}

/// Inverse of [`standardize`].
pub fn unstandardize<T: Scalar>(z: &Matrix<T>, means: &[T], sds: &[T]) -> Matrix<T> {
    let mut out = z.clone();
    for j in 0..z.ncols() {
        for v in out.col_mut(j) {
            *v = *v * sds[j] + means[j];
        }
    }
    out
}

/// Response vector plus design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub x: Matrix<T>,
    pub y: Vec<T>,
    pub standardized: bool,
    pub column_means: Vec<T>,
    pub column_sds: Vec<T>,
    /// Mean removed from `y` when standardized, zero otherwise.
    pub y_mean: T,
}

impl<T: Scalar> Dataset<T> {
    /// Wraps raw data without transforming it.
    pub fn raw(x: Matrix<T>, y: Vec<T>) -> Result<Self> {
        check_shape(&x, &y)?;
        let p = x.ncols();
        Ok(Self {
            x,
            y,
            standardized: false,
            column_means: vec![T::zero(); p],
            column_sds: vec![T::one(); p],
            y_mean: T::zero(),
        })
    }

    /// Standardizes the columns of `x` and centers `y`.
    pub fn standardized(x: &Matrix<T>, y: &[T]) -> Result<Self> {
        check_shape(x, y)?;
        let (xs, column_means, column_sds) = standardize(x)?;
        let y_mean = mean(y);
        Ok(Self {
            x: xs,
            y: y.iter().map(|&v| v - y_mean).collect(),
            standardized: true,
            column_means,
            column_sds,
            y_mean,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// The given rows, re-standardized on their own.
    pub fn restandardized_rows(&self, rows: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(rows);
        let y: Vec<T> = rows.iter().map(|&i| self.y[i]).collect();
        Self::standardized(&x, &y)
    }
}

fn check_shape<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "x has {} rows but y has {} entries",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() < 4 {
        return Err(Error::TooFewRows(x.nrows()));
    }
    if x.ncols() < 2 {
        return Err(Error::TooFewColumns(x.ncols()));
    }
    Ok(())
}

/// A partition of `0..n` into two halves, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndex {
    pub first_half: Vec<usize>,
    pub second_half: Vec<usize>,
}

/// Uniformly random half-half split: `⌊n/2⌋` rows in the first half.
pub fn random_split<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<SplitIndex> {
    if n < 4 {
        return Err(Error::TooFewRows(n));
    }
    let k = n / 2;
    let mut perm: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        perm.swap(i, j);
    }
    let mut in_first = vec![false; n];
    for &i in &perm[..k] {
        in_first[i] = true;
    }
    let (first_half, second_half) = (0..n).partition(|&i| in_first[i]);
    Ok(SplitIndex { first_half, second_half })
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch(format!("{}x{} is not square", n, a.ncols())));
        }
        let mut l = Matrix::zeros(n, n);
        let floor = T::of(1e-12);
        let mut col = vec![T::zero(); n];
        for j in 0..n {
            // left-looking: column j minus contributions of earlier columns
            col[j..].copy_from_slice(&a.col(j)[j..]);
            for k in 0..j {
                let ljk = l[(j, k)];
                if ljk == T::zero() {
                    continue;
                }
                let lk = &l.col(k)[j..];
                for (c, &v) in col[j..].iter_mut().zip(lk) {
                    *c = *c - ljk * v;
                }
            }
            let d = col[j];
            if !(d > floor) {
                return Err(Error::NotPositiveDefinite { index: j, pivot: d.to_f64_lossy() });
            }
            let djj = d.sqrt();
            let lj = &mut l.col_mut(j)[j..];
            lj[0] = djj;
            for (o, &c) in lj[1..].iter_mut().zip(&col[j + 1..]) {
                *o = c / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn factor(&self) -> &Matrix<T> {
        &self.l
    }

    /// Solves `L w = b`.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let n = self.l.nrows();
        let mut w = b.to_vec();
        for i in 0..n {
            let mut s = w[i];
            for k in 0..i {
                s = s - self.l[(i, k)] * w[k];
            }
            w[i] = s / self.l[(i, i)];
        }
        w
    }

    /// Solves `Lᵀ w = b`.
    pub fn solve_upper(&self, b: &[T]) -> Vec<T> {
        let n = self.l.nrows();
        let mut w = b.to_vec();
        for i in (0..n).rev() {
            let mut s = w[i];
            let li = self.l.col(i);
            for k in i + 1..n {
                s = s - li[k] * w[k];
            }
            w[i] = s / self.l[(i, i)];
        }
        w
    }

    /// Solves `A z = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        self.solve_upper(&self.solve_lower(b))
    }
}

/// Solves `a · z = b` for symmetric positive-definite `a`.
pub fn cholesky_solve<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "rhs of length {} for a {}x{} system",
            b.len(),
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(Cholesky::new(a)?.solve(b))
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues<T: Scalar>(a: &Matrix<T>) -> Vec<T> {
    let n = a.nrows();
    let mut m = a.clone();
    let two = T::of(2.0);
    for _sweep in 0..100 {
        let mut off = T::zero();
        for j in 0..n {
            for i in 0..j {
                off = off + m[(i, j)] * m[(i, j)];
            }
        }
        let scale: T = (0..n).map(|i| m[(i, i)] * m[(i, i)]).sum::<T>() + off;
        if off <= T::epsilon() * T::epsilon() * scale || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<T> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

pub fn min_eigenvalue<T: Scalar>(a: &Matrix<T>) -> T {
    symmetric_eigenvalues(a).first().copied().unwrap_or_else(T::nan)
}
