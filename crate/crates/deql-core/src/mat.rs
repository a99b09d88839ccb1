//! Dense row-major matrices and the factorizations the solvers need.
//!
//! Everything downstream works on small-to-medium dense symmetric systems
//! (n up to a few hundred), so a single contiguous `Vec<f64>` representation
//! with explicit loops is enough. The two factorizations here are chosen for
//! introspection, not generality:
//!
//! - [`Cholesky`] reports its smallest pivot, which powers the positive-
//!   definiteness certificate (a matrix counts as PD when every pivot exceeds
//!   1e-12 times its largest diagonal entry) and lets solver errors say which
//!   column's system failed.
//! - [`symmetric_eigen`] is a cyclic Jacobi sweep; rotation angles depend
//!   only on entry ratios, so uniform scaling of the input commutes exactly
//!   through the decomposition.

use std::fmt;

/// Dense row-major matrix of f64.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// Zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Build from a row-major slice.
    pub fn from_rows(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/data length mismatch");
        Mat { rows, cols, data: data.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Borrow the underlying row-major storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Mutable view of the underlying row-major storage.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row `i` as a contiguous slice.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Column `j` copied into a vector.
    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Overwrite column `j`.
    pub fn set_col(&mut self, j: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    /// Matrix-vector product `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| dot(row, x))
            .collect()
    }

    /// Matrix product `self * other`, accumulated row-by-row (ikj order) so
    /// the inner loop streams over contiguous rows of `other`.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "inner dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a_ik) in a_row.iter().enumerate() {
                if a_ik == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b_kj;
                }
            }
        }
        out
    }

    /// Transpose.
    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    /// Largest absolute difference against `other`.
    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Dot product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pivots relative to the largest diagonal entry must exceed this factor for
/// a matrix to certify as positive definite.
pub const PD_PIVOT_FACTOR: f64 = 1e-12;

/// Lower-triangular Cholesky factor of a symmetric matrix, with the smallest
/// pivot (the diagonal value before its square root) retained for
/// certification.
pub struct Cholesky {
    l: Mat,
    min_pivot: f64,
    /// Pivot threshold the factorization was accepted under.
    threshold: f64,
}

/// Outcome of [`Cholesky::factor`]: either a usable factor or the evidence
/// that the matrix is not positive definite.
pub enum CholeskyOutcome {
    Factored(Cholesky),
    /// Factorization stopped at a pivot at or below the threshold.
    NotPd { min_pivot: f64 },
}

impl Cholesky {
    /// Factor a symmetric matrix, treating pivots at or below
    /// `PD_PIVOT_FACTOR` times the largest diagonal entry as failure.
    ///
    /// Only the lower triangle of `a` is read.
    pub fn factor(a: &Mat) -> CholeskyOutcome {
        assert_eq!(a.rows(), a.cols(), "Cholesky needs a square matrix");
        let n = a.rows();
        let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
        let threshold = PD_PIVOT_FACTOR * max_diag.max(f64::MIN_POSITIVE);
        let mut l = Mat::zeros(n, n);
        let mut min_pivot = f64::INFINITY;
        for j in 0..n {
            let mut pivot = a[(j, j)] - dot(&l.row(j)[..j], &l.row(j)[..j]);
            if pivot.is_nan() {
                pivot = f64::NEG_INFINITY;
            }
            min_pivot = min_pivot.min(pivot);
            if pivot <= threshold {
                return CholeskyOutcome::NotPd { min_pivot };
            }
            let ljj = pivot.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
                l[(i, j)] = s / ljj;
            }
        }
        CholeskyOutcome::Factored(Cholesky { l, min_pivot, threshold })
    }

    /// Smallest pivot encountered.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    /// Pivot acceptance threshold used during factorization.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Solve `A x = b` via forward/back substitution.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows();
        assert_eq!(b.len(), n);
        // L y = b
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = (b[i] - dot(&self.l.row(i)[..i], &y[..i])) / self.l[(i, i)];
        }
        // L^T x = y
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    /// Inverse of the factored matrix, column by column.
    pub fn inverse(&self) -> Mat {
        let n = self.l.rows();
        let mut inv = Mat::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            inv.set_col(j, &self.solve(&e));
            e[j] = 0.0;
        }
        inv
    }
}

/// Eigendecomposition of a symmetric matrix: `a == q * diag(values) * q^T`,
/// columns of `q` orthonormal. Unsorted; callers order as they need.
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub q: Mat,
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
///
/// Sweeps rotate away off-diagonal mass until it falls below 1e-14 times the
/// Frobenius norm (or 64 sweeps, far more than quadratic convergence needs).
pub fn symmetric_eigen(a: &Mat) -> SymmetricEigen {
    assert_eq!(a.rows(), a.cols());
    let n = a.rows();
    let mut m = a.clone();
    let mut q = Mat::identity(n);
    let frob: f64 = m.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
    let tol = 1e-14 * frob.max(f64::MIN_POSITIVE);

    for _sweep in 0..64 {
        let off: f64 = {
            let mut s = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    s += 2.0 * m[(i, j)] * m[(i, j)];
                }
            }
            s.sqrt()
        };
        if off <= tol {
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = m[(p, r)];
                if apr.abs() <= tol / (n as f64) {
                    continue;
                }
                // Stable rotation: t = sign(theta) / (|theta| + sqrt(theta^2+1)).
                let theta = (m[(r, r)] - m[(p, p)]) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkr = m[(k, r)];
                    m[(k, p)] = c * mkp - s * mkr;
                    m[(k, r)] = s * mkp + c * mkr;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mrk = m[(r, k)];
                    m[(p, k)] = c * mpk - s * mrk;
                    m[(r, k)] = s * mpk + c * mrk;
                }
                for k in 0..n {
                    let qkp = q[(k, p)];
                    let qkr = q[(k, r)];
                    q[(k, p)] = c * qkp - s * qkr;
                    q[(k, r)] = s * qkp + c * qkr;
                }
            }
        }
    }

    let values = (0..n).map(|i| m[(i, i)]).collect();
    SymmetricEigen { values, q }
}
