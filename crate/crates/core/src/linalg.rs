//! Dense complex matrices and the factorizations the solvers need.
//!
//! Matrices are row-major `Complex64` buffers. The problem sizes here are
//! tiny (antenna counts below ten, node counts below a few hundred), so the
//! kernels are straightforward loops: a general matrix product, a pivoted
//! Cholesky factorization for Hermitian positive definite systems, and a
//! partially pivoted LU factorization for the general square systems that
//! appear once learned complex weights enter the transmitter update.
//!
//! ```
//! use uwmmse_core::linalg::{CMatrix, hermitian_solve};
//! use num_complex::Complex64;
//!
//! let a = CMatrix::from_rows(2, 2, &[
//!     Complex64::new(4.0, 0.0), Complex64::new(1.0, 1.0),
//!     Complex64::new(1.0, -1.0), Complex64::new(3.0, 0.0),
//! ]);
//! let b = CMatrix::identity(2);
//! let x = hermitian_solve(&a, &b).unwrap();
//! let r = a.gemm(&x).unwrap().sub(&b).unwrap().frob_norm();
//! assert!(r < 1e-12);
//! ```

use num_complex::Complex64;
use std::ops::{Index, IndexMut};
use thiserror::Error;

/// Relative pivot tolerance: a pivot below this fraction of the largest
/// initial diagonal (Cholesky) or largest initial magnitude (LU) is treated
/// as singular.
pub const PIVOT_RTOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("{op}: shape mismatch {lhs_rows}x{lhs_cols} vs {rhs_rows}x{rhs_cols}")]
    ShapeMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },
    #[error("{op}: matrix must be square, got {rows}x{cols}")]
    NotSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("singular matrix: pivot {pivot:.3e} below tolerance at step {step}")]
    Singular { step: usize, pivot: f64 },
    #[error("matrix not positive definite: pivot {pivot:.3e} at step {step}")]
    NotPositiveDefinite { step: usize, pivot: f64 },
}

/// Dense row-major complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, ONE)
    }

    pub fn scaled_identity(n: usize, c: Complex64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = c;
        }
        m
    }

    /// 1x1 matrix holding a single scalar.
    pub fn scalar(c: Complex64) -> Self {
        CMatrix {
            rows: 1,
            cols: 1,
            data: vec![c],
        }
    }

    /// Builds a matrix from a row-major slice. Panics if the slice length
    /// does not match `rows * cols`.
    pub fn from_rows(rows: usize, cols: usize, data: &[Complex64]) -> Self {
        assert_eq!(data.len(), rows * cols, "from_rows: bad buffer length");
        CMatrix {
            rows,
            cols,
            data: data.to_vec(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMatrix { rows, cols, data }
    }

    /// Takes ownership of a row-major buffer.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), rows * cols, "from_vec: bad buffer length");
        CMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Value of a 1x1 matrix. Panics on any other shape.
    pub fn as_scalar(&self) -> Complex64 {
        assert_eq!((self.rows, self.cols), (1, 1), "as_scalar: not 1x1");
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<(), LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::ShapeMismatch {
                op,
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: other.rows,
                rhs_cols: other.cols,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, LinalgError> {
        self.same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, LinalgError> {
        self.same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, c: Complex64) -> Self {
        self.map(|z| c * z)
    }

    /// Entrywise product with a constant coefficient matrix.
    pub fn hadamard(&self, other: &Self) -> Result<Self, LinalgError> {
        self.same_shape(other, "hadamard")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// General matrix product `self * other`.
    pub fn gemm(&self, other: &Self) -> Result<Self, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::ShapeMismatch {
                op: "gemm",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: other.rows,
                rhs_cols: other.cols,
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![ZERO; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == ZERO {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Ok(CMatrix {
            rows: m,
            cols: n,
            data: out,
        })
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    /// Transpose without conjugation.
    pub fn transpose(&self) -> Self {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn trace(&self) -> Complex64 {
        assert!(self.is_square(), "trace: not square");
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    pub fn frob_norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Frobenius norm.
    pub fn frob_norm(&self) -> f64 {
        self.frob_norm_sqr().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Self) -> Result<Self, LinalgError> {
        if self.rows != other.rows {
            return Err(LinalgError::ShapeMismatch {
                op: "hcat",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: other.rows,
                rhs_cols: other.cols,
            });
        }
        Ok(CMatrix::from_fn(self.rows, self.cols + other.cols, |i, j| {
            if j < self.cols {
                self[(i, j)]
            } else {
                other[(i, j - self.cols)]
            }
        }))
    }

    /// Vertical concatenation, `other` below `self`.
    pub fn vcat(&self, other: &Self) -> Result<Self, LinalgError> {
        if self.cols != other.cols {
            return Err(LinalgError::ShapeMismatch {
                op: "vcat",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: other.rows,
                rhs_cols: other.cols,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(CMatrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// Copy of rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.rows, "slice_rows: out of range");
        CMatrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Row-major reinterpretation with the same element count.
    pub fn reshape(&self, rows: usize, cols: usize) -> Self {
        assert_eq!(rows * cols, self.rows * self.cols, "reshape: size mismatch");
        CMatrix {
            rows,
            cols,
            data: self.data.clone(),
        }
    }

    /// Largest entrywise deviation from `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Pivoted Cholesky factorization of a Hermitian positive definite matrix:
/// `P A P^T = L L^H` with diagonal pivoting.
///
/// The caller guarantees Hermitian symmetry; only the lower triangle and the
/// real part of the diagonal are read. A pivot below `PIVOT_RTOL` times the
/// largest initial diagonal aborts with a singularity error, a significantly
/// negative pivot with a definiteness error.
pub struct CholeskyFactor {
    n: usize,
    /// Lower triangle of L, row-major, in pivoted coordinates.
    l: Vec<Complex64>,
    /// `perm[k]` is the original index occupying pivoted position `k`.
    perm: Vec<usize>,
}

impl CholeskyFactor {
    pub fn factor(a: &CMatrix) -> Result<Self, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::NotSquare {
                op: "cholesky",
                rows: a.rows,
                cols: a.cols,
            });
        }
        let n = a.rows;
        let mut w = a.data.clone();
        // Work on an exactly Hermitian copy: mirror the lower triangle into
        // the upper and drop imaginary dust from the diagonal. The pivot
        // swaps below move whole rows and columns, which is only sound when
        // both triangles agree.
        for i in 0..n {
            w[i * n + i] = Complex64::new(w[i * n + i].re, 0.0);
            for j in 0..i {
                w[j * n + i] = w[i * n + j].conj();
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let dmax0 = (0..n).map(|i| w[i * n + i].re).fold(f64::NEG_INFINITY, f64::max);
        let tol = PIVOT_RTOL * dmax0.max(0.0);
        for k in 0..n {
            let (mut pk, mut pv) = (k, w[k * n + k].re);
            for j in k + 1..n {
                let d = w[j * n + j].re;
                if d > pv {
                    pk = j;
                    pv = d;
                }
            }
            if pk != k {
                perm.swap(k, pk);
                for j in 0..n {
                    w.swap(k * n + j, pk * n + j);
                }
                for i in 0..n {
                    w.swap(i * n + k, i * n + pk);
                }
            }
            let pivot = w[k * n + k].re;
            if pivot < -tol {
                return Err(LinalgError::NotPositiveDefinite { step: k, pivot });
            }
            if pivot <= tol {
                return Err(LinalgError::Singular { step: k, pivot });
            }
            let lkk = pivot.sqrt();
            w[k * n + k] = Complex64::new(lkk, 0.0);
            for i in k + 1..n {
                w[i * n + k] /= lkk;
            }
            for i in k + 1..n {
                let lik = w[i * n + k];
                for j in k + 1..=i {
                    let ljk = w[j * n + k];
                    let updated = w[i * n + j] - lik * ljk.conj();
                    w[i * n + j] = updated;
                    if j != i {
                        // Keep the trailing block Hermitian for later swaps.
                        w[j * n + i] = updated.conj();
                    }
                }
            }
        }
        // Keep only the lower triangle; upper entries are stale.
        for i in 0..n {
            for j in i + 1..n {
                w[i * n + j] = ZERO;
            }
        }
        Ok(CholeskyFactor { n, l: w, perm })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves `A X = B` for all columns of `B`.
    pub fn solve(&self, b: &CMatrix) -> Result<CMatrix, LinalgError> {
        let n = self.n;
        if b.rows != n {
            return Err(LinalgError::ShapeMismatch {
                op: "cholesky_solve",
                lhs_rows: n,
                lhs_cols: n,
                rhs_rows: b.rows,
                rhs_cols: b.cols,
            });
        }
        let m = b.cols;
        // Permute rows of B into pivoted coordinates.
        let mut y = vec![ZERO; n * m];
        for k in 0..n {
            let src = self.perm[k];
            y[k * m..(k + 1) * m].copy_from_slice(&b.data[src * m..(src + 1) * m]);
        }
        // Forward substitution L y = P b.
        for i in 0..n {
            for j in 0..i {
                let lij = self.l[i * n + j];
                if lij == ZERO {
                    continue;
                }
                for c in 0..m {
                    let t = lij * y[j * m + c];
                    y[i * m + c] -= t;
                }
            }
            let d = self.l[i * n + i];
            for c in 0..m {
                y[i * m + c] /= d;
            }
        }
        // Back substitution L^H z = y.
        for i in (0..n).rev() {
            for j in i + 1..n {
                let lji = self.l[j * n + i].conj();
                if lji == ZERO {
                    continue;
                }
                for c in 0..m {
                    let t = lji * y[j * m + c];
                    y[i * m + c] -= t;
                }
            }
            let d = self.l[i * n + i];
            for c in 0..m {
                y[i * m + c] /= d;
            }
        }
        // Undo the permutation.
        let mut x = vec![ZERO; n * m];
        for k in 0..n {
            let dst = self.perm[k];
            x[dst * m..(dst + 1) * m].copy_from_slice(&y[k * m..(k + 1) * m]);
        }
        Ok(CMatrix {
            rows: n,
            cols: m,
            data: x,
        })
    }

    pub fn inverse(&self) -> Result<CMatrix, LinalgError> {
        self.solve(&CMatrix::identity(self.n))
    }

    /// Base-2 log-determinant of the factored matrix. The symmetric
    /// permutation leaves the determinant unchanged.
    pub fn log2_det(&self) -> f64 {
        let n = self.n;
        (0..n).map(|k| 2.0 * self.l[k * n + k].re.log2()).sum()
    }
}

/// Partially pivoted LU factorization of a general square matrix:
/// `P A = L U` with unit lower-triangular `L`.
pub struct LuFactor {
    n: usize,
    /// Packed L (strictly lower, unit diagonal implied) and U.
    lu: Vec<Complex64>,
    /// `perm[k]` is the original row index occupying position `k`.
    perm: Vec<usize>,
}

impl LuFactor {
    pub fn factor(a: &CMatrix) -> Result<Self, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::NotSquare {
                op: "lu",
                rows: a.rows,
                cols: a.cols,
            });
        }
        let n = a.rows;
        let mut w = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let tol = PIVOT_RTOL * a.max_abs();
        for k in 0..n {
            let (mut pk, mut pv) = (k, w[k * n + k].norm());
            for i in k + 1..n {
                let v = w[i * n + k].norm();
                if v > pv {
                    pk = i;
                    pv = v;
                }
            }
            if pv <= tol {
                return Err(LinalgError::Singular { step: k, pivot: pv });
            }
            if pk != k {
                perm.swap(k, pk);
                for j in 0..n {
                    w.swap(k * n + j, pk * n + j);
                }
            }
            let pivot = w[k * n + k];
            for i in k + 1..n {
                let f = w[i * n + k] / pivot;
                w[i * n + k] = f;
                for j in k + 1..n {
                    let t = f * w[k * n + j];
                    w[i * n + j] -= t;
                }
            }
        }
        Ok(LuFactor { n, lu: w, perm })
    }

    /// Solves `A X = B`.
    pub fn solve(&self, b: &CMatrix) -> Result<CMatrix, LinalgError> {
        let n = self.n;
        if b.rows != n {
            return Err(LinalgError::ShapeMismatch {
                op: "lu_solve",
                lhs_rows: n,
                lhs_cols: n,
                rhs_rows: b.rows,
                rhs_cols: b.cols,
            });
        }
        let m = b.cols;
        let mut y = vec![ZERO; n * m];
        for k in 0..n {
            let src = self.perm[k];
            y[k * m..(k + 1) * m].copy_from_slice(&b.data[src * m..(src + 1) * m]);
        }
        // L y = P b (unit diagonal).
        for i in 1..n {
            for j in 0..i {
                let lij = self.lu[i * n + j];
                if lij == ZERO {
                    continue;
                }
                for c in 0..m {
                    let t = lij * y[j * m + c];
                    y[i * m + c] -= t;
                }
            }
        }
        // U x = y.
        for i in (0..n).rev() {
            for j in i + 1..n {
                let uij = self.lu[i * n + j];
                if uij == ZERO {
                    continue;
                }
                for c in 0..m {
                    let t = uij * y[j * m + c];
                    y[i * m + c] -= t;
                }
            }
            let d = self.lu[i * n + i];
            for c in 0..m {
                y[i * m + c] /= d;
            }
        }
        Ok(CMatrix {
            rows: n,
            cols: m,
            data: y,
        })
    }

    /// Solves `A^H X = B` reusing the factorization: `A^H = U^H L^H P`.
    pub fn solve_adjoint(&self, b: &CMatrix) -> Result<CMatrix, LinalgError> {
        let n = self.n;
        if b.rows != n {
            return Err(LinalgError::ShapeMismatch {
                op: "lu_solve_adjoint",
                lhs_rows: n,
                lhs_cols: n,
                rhs_rows: b.rows,
                rhs_cols: b.cols,
            });
        }
        let m = b.cols;
        let mut y = b.data.clone();
        // U^H y = b: U^H is lower triangular.
        for i in 0..n {
            for j in 0..i {
                let uji = self.lu[j * n + i].conj();
                if uji == ZERO {
                    continue;
                }
                for c in 0..m {
                    let t = uji * y[j * m + c];
                    y[i * m + c] -= t;
                }
            }
            let d = self.lu[i * n + i].conj();
            for c in 0..m {
                y[i * m + c] /= d;
            }
        }
        // L^H w = y: L^H is unit upper triangular.
        for i in (0..n).rev() {
            for j in i + 1..n {
                let lji = self.lu[j * n + i].conj();
                if lji == ZERO {
                    continue;
                }
                for c in 0..m {
                    let t = lji * y[j * m + c];
                    y[i * m + c] -= t;
                }
            }
        }
        // x = P^T w.
        let mut x = vec![ZERO; n * m];
        for k in 0..n {
            let dst = self.perm[k];
            x[dst * m..(dst + 1) * m].copy_from_slice(&y[k * m..(k + 1) * m]);
        }
        Ok(CMatrix {
            rows: n,
            cols: m,
            data: x,
        })
    }
}

/// Solves `A X = B` for Hermitian positive definite `A`.
///
/// The residual satisfies `|A X - B|_F <= 1e-10 (1 + |B|_F)` for reasonably
/// conditioned systems; singularity within `PIVOT_RTOL` is an error.
pub fn hermitian_solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix, LinalgError> {
    CholeskyFactor::factor(a)?.solve(b)
}

/// Solves `A X = B` for general square `A` via pivoted LU.
pub fn solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix, LinalgError> {
    LuFactor::factor(a)?.solve(b)
}

/// Base-2 log-determinant of a Hermitian positive definite matrix.
pub fn log2_det(a: &CMatrix) -> Result<f64, LinalgError> {
    Ok(CholeskyFactor::factor(a)?.log2_det())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    /// Random HPD matrix G G^H + eps I.
    fn random_hpd(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
        let g = random_matrix(rng, n, n);
        g.gemm(&g.adjoint())
            .unwrap()
            .add(&CMatrix::scaled_identity(n, c(0.5, 0.0)))
            .unwrap()
    }

    /// Independent product oracle: per-entry dot product with explicit
    /// index arithmetic, accumulated in column-major order.
    fn gemm_oracle(a: &CMatrix, b: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(a.rows(), b.cols());
        for j in 0..b.cols() {
            for i in 0..a.rows() {
                let mut acc = ZERO;
                for p in (0..a.cols()).rev() {
                    acc += a[(i, p)] * b[(p, j)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    /// Inverse of a 3x3 matrix by cofactor expansion.
    fn cofactor_inverse_3x3(a: &CMatrix) -> CMatrix {
        assert_eq!(a.shape(), (3, 3));
        let m = |i: usize, j: usize| a[(i, j)];
        let det = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
            - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
            + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
        let cof = |i: usize, j: usize| {
            let (r1, r2) = match i {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c1, c2) = match j {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = m(r1, c1) * m(r2, c2) - m(r1, c2) * m(r2, c1);
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            minor * c(sign, 0.0)
        };
        // inv = adj / det, adj = transpose of cofactor matrix.
        CMatrix::from_fn(3, 3, |i, j| cof(j, i) / det)
    }

    /// Log-determinant via an unpivoted LDL^H elimination, kept independent
    /// of the Cholesky code path.
    fn ldl_log2_det(a: &CMatrix) -> f64 {
        let n = a.rows();
        let mut w = a.clone();
        let mut acc = 0.0;
        for k in 0..n {
            let d = w[(k, k)].re;
            acc += d.log2();
            for i in k + 1..n {
                let f = w[(i, k)] / d;
                for j in k..n {
                    let t = f * w[(k, j)];
                    w[(i, j)] -= t;
                }
                w[(i, k)] = f;
            }
        }
        acc
    }

    #[test]
    fn gemm_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 4, 3);
            let b = random_matrix(&mut rng, 3, 5);
            let got = a.gemm(&b).unwrap();
            assert!(got.max_abs_diff(&gemm_oracle(&a, &b)) < 1e-13);
        }
    }

    #[test]
    fn gemm_identity_and_associativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(&mut rng, 4, 4);
        assert!(a.gemm(&CMatrix::identity(4)).unwrap().max_abs_diff(&a) == 0.0);
        let b = random_matrix(&mut rng, 4, 4);
        let m = random_matrix(&mut rng, 4, 4);
        let lhs = a.gemm(&b).unwrap().gemm(&m).unwrap();
        let rhs = a.gemm(&b.gemm(&m).unwrap()).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-13);
    }

    #[test]
    fn gemm_shape_mismatch_errors() {
        let a = CMatrix::zeros(2, 3);
        let b = CMatrix::zeros(2, 3);
        assert!(matches!(a.gemm(&b), Err(LinalgError::ShapeMismatch { .. })));
    }

    #[test]
    fn adjoint_reverses_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 4, 2);
        let lhs = a.gemm(&b).unwrap().adjoint();
        let rhs = b.adjoint().gemm(&a.adjoint()).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-14);
        assert!(a.adjoint().adjoint().max_abs_diff(&a) == 0.0);
    }

    #[test]
    fn hermitian_solve_matches_cofactor_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let a = random_hpd(&mut rng, 3);
            let inv = hermitian_solve(&a, &CMatrix::identity(3)).unwrap();
            assert!(inv.max_abs_diff(&cofactor_inverse_3x3(&a)) < 1e-11);
        }
    }

    #[test]
    fn hermitian_solve_residual_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1, 2, 5, 8] {
            let a = random_hpd(&mut rng, n);
            let b = random_matrix(&mut rng, n, 3);
            let x = hermitian_solve(&a, &b).unwrap();
            let r = a.gemm(&x).unwrap().sub(&b).unwrap().frob_norm();
            assert!(r <= 1e-10 * (1.0 + b.frob_norm()), "residual {r} at n={n}");
        }
    }

    #[test]
    fn hermitian_solve_rejects_singular_and_indefinite() {
        // Rank-1 PSD matrix is singular for n = 2.
        let v = CMatrix::from_rows(2, 1, &[c(1.0, 0.0), c(2.0, -1.0)]);
        let a = v.gemm(&v.adjoint()).unwrap();
        assert!(matches!(
            hermitian_solve(&a, &CMatrix::identity(2)),
            Err(LinalgError::Singular { .. })
        ));
        let ind = CMatrix::from_rows(2, 2, &[c(1.0, 0.0), ZERO, ZERO, c(-1.0, 0.0)]);
        assert!(matches!(
            hermitian_solve(&ind, &CMatrix::identity(2)),
            Err(LinalgError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn log2_det_matches_ldl_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for n in [1, 2, 4, 7] {
            let a = random_hpd(&mut rng, n);
            let got = log2_det(&a).unwrap();
            assert!((got - ldl_log2_det(&a)).abs() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn log2_det_power_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_hpd(&mut rng, 4);
        let a3 = a.gemm(&a).unwrap().gemm(&a).unwrap();
        let lhs = log2_det(&a3).unwrap();
        let rhs = 3.0 * log2_det(&a).unwrap();
        assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn log2_det_identity_is_zero() {
        assert_eq!(log2_det(&CMatrix::identity(5)).unwrap(), 0.0);
    }

    #[test]
    fn frob_norm_unitary_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_matrix(&mut rng, 4, 3);
        // Gram-Schmidt on a random square matrix gives a unitary Q.
        let g = random_matrix(&mut rng, 4, 4);
        let mut q = CMatrix::zeros(4, 4);
        for j in 0..4 {
            let mut v: Vec<Complex64> = (0..4).map(|i| g[(i, j)]).collect();
            for p in 0..j {
                let dot: Complex64 = (0..4).map(|i| q[(i, p)].conj() * g[(i, j)]).sum();
                for i in 0..4 {
                    let t = dot * q[(i, p)];
                    v[i] -= t;
                }
            }
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            for i in 0..4 {
                q[(i, j)] = v[i] / norm;
            }
        }
        let qa = q.gemm(&a).unwrap();
        assert!((qa.frob_norm() - a.frob_norm()).abs() < 1e-12);
    }

    #[test]
    fn lu_solves_general_and_adjoint_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let a = random_matrix(&mut rng, 5, 5);
            let b = random_matrix(&mut rng, 5, 2);
            let f = LuFactor::factor(&a).unwrap();
            let x = f.solve(&b).unwrap();
            assert!(a.gemm(&x).unwrap().max_abs_diff(&b) < 1e-11);
            let y = f.solve_adjoint(&b).unwrap();
            assert!(a.adjoint().gemm(&y).unwrap().max_abs_diff(&b) < 1e-11);
        }
    }

    #[test]
    fn lu_rejects_singular() {
        let a = CMatrix::from_rows(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)]);
        assert!(matches!(
            LuFactor::factor(&a),
            Err(LinalgError::Singular { .. })
        ));
    }

    #[test]
    fn concat_and_slices_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = random_matrix(&mut rng, 3, 2);
        let b = random_matrix(&mut rng, 3, 4);
        let h = a.hcat(&b).unwrap();
        assert_eq!(h.shape(), (3, 6));
        assert_eq!(h[(2, 1)], a[(2, 1)]);
        assert_eq!(h[(2, 3)], b[(2, 1)]);
        let v = a.vcat(&a).unwrap();
        assert_eq!(v.shape(), (6, 2));
        assert!(v.slice_rows(3, 6).max_abs_diff(&a) == 0.0);
        let r = a.reshape(2, 3);
        assert_eq!(r[(1, 0)], a[(1, 1)]);
    }
}
