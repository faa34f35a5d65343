//! Small dense matrices and the symmetric positive definite kernels used by
//! the filters: Cholesky factorization, SPD solves and log-determinants.
//!
//! Everything here is generic over [`Real`], so the classical filters can run
//! in `f32` as well as `f64`. The learned estimator and its gradient checks
//! stay in `f64`.

use std::fmt::{Debug, Display};
use std::ops::{Index, IndexMut};

use num_traits::{Float, FromPrimitive, NumAssign};

use crate::error::NumericError;

/// Floating point scalar accepted by the filtering code.
pub trait Real:
    Float + FromPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to every Real")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, NumericError> {
        if data.len() != rows * cols {
            return Err(NumericError::dims(
                format!("{} entries for {rows}x{cols}", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumericError::NonFinite {
                row: k / cols.max(1),
                col: k % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from rows of equal length.
    ///
    /// Panics on ragged input; intended for literals.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged matrix literal");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn column(values: &[T]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn outer(a: &[T], b: &[T]) -> Self {
        let mut m = Self::zeros(a.len(), b.len());
        for (i, &ai) in a.iter().enumerate() {
            for (j, &bj) in b.iter().enumerate() {
                m[(i, j)] = ai * bj;
            }
        }
        m
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

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul: inner dimensions differ");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        out
    }

    /// `self * rhsᵀ` without materializing the transpose.
    pub fn matmul_t(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.cols, "matmul_t: inner dimensions differ");
        let mut out = Self::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            for j in 0..rhs.rows {
                let mut acc = T::zero();
                for k in 0..self.cols {
                    acc += self[(i, k)] * rhs[(j, k)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "mul_vec: dimension mismatch");
        (0..self.rows)
            .map(|i| {
                let row = &self.data[i * self.cols..(i + 1) * self.cols];
                row.iter()
                    .zip(v)
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }

    /// `selfᵀ * v`.
    pub fn tr_mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.rows, v.len(), "tr_mul_vec: dimension mismatch");
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self[(i, j)] * vi;
            }
        }
        out
    }

    /// `A M Aᵀ` for square `M`.
    pub fn sandwich(&self, middle: &Self) -> Self {
        self.matmul(middle).matmul_t(self)
    }

    pub fn add(&self, rhs: &Self) -> Self {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    fn zip_with(&self, rhs: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape(), rhs.shape(), "elementwise op: shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `(M + Mᵀ) / 2`.
    pub fn symmetrize(&self) -> Self {
        assert!(self.is_square(), "symmetrize: matrix is not square");
        let half = T::from_f64_lossy(0.5);
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = (self[(i, j)] + self[(j, i)]) * half;
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).fold(T::zero(), |acc, i| acc + self[(i, i)])
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .collect()
    }

    /// Largest absolute entry; the norm used for relative tolerances.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    /// Largest absolute difference between `self[(i,j)]` and `self[(j,i)]`.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts the scalar type.
    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Packed lower-triangular matrix, stored row by row: `(0,0), (1,0), (1,1), ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular<T> {
    dim: usize,
    packed: Vec<T>,
}

/// Number of entries in the lower triangle of a `dim × dim` matrix.
pub fn packed_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Packed index of entry `(i, j)` with `j ≤ i`.
pub fn packed_index(i: usize, j: usize) -> usize {
    debug_assert!(j <= i);
    i * (i + 1) / 2 + j
}

impl<T: Real> LowerTriangular<T> {
    pub fn from_packed(dim: usize, packed: Vec<T>) -> Result<Self, NumericError> {
        if packed.len() != packed_len(dim) {
            return Err(NumericError::dims(
                format!("{} packed entries", packed_len(dim)),
                format!("{}", packed.len()),
            ));
        }
        Ok(Self { dim, packed })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            packed: vec![T::zero(); packed_len(dim)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn packed(&self) -> &[T] {
        &self.packed
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if j > i {
            T::zero()
        } else {
            self.packed[packed_index(i, j)]
        }
    }

    pub fn to_matrix(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in 0..=i {
                m[(i, j)] = self.packed[packed_index(i, j)];
            }
        }
        m
    }

    /// `L Lᵀ`, symmetric by construction.
    pub fn gram(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in 0..=i {
                let mut acc = T::zero();
                for k in 0..=j {
                    acc += self.get(i, k) * self.get(j, k);
                }
                out[(i, j)] = acc;
                out[(j, i)] = acc;
            }
        }
        out
    }

    /// Solves `L x = b` in place.
    pub fn forward_substitute(&self, b: &mut [T]) {
        for i in 0..self.dim {
            let mut acc = b[i];
            for k in 0..i {
                acc -= self.get(i, k) * b[k];
            }
            b[i] = acc / self.get(i, i);
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn backward_substitute(&self, b: &mut [T]) {
        for i in (0..self.dim).rev() {
            let mut acc = b[i];
            for k in (i + 1)..self.dim {
                acc -= self.get(k, i) * b[k];
            }
            b[i] = acc / self.get(i, i);
        }
    }
}

fn check_symmetric<T: Real>(m: &Matrix<T>) -> Result<(), NumericError> {
    if !m.is_square() {
        return Err(NumericError::dims(
            "square matrix",
            format!("{}x{}", m.rows(), m.cols()),
        ));
    }
    let tolerance = T::from_f64_lossy(1e-10) * m.max_abs();
    let asymmetry = m.asymmetry();
    if asymmetry > tolerance {
        return Err(NumericError::NotSymmetric {
            asymmetry: asymmetry.to_f64_lossy(),
            tolerance: tolerance.to_f64_lossy(),
        });
    }
    Ok(())
}

/// Cholesky factor `L` with `L Lᵀ = M`. Reads the lower triangle of `M`.
pub fn cholesky<T: Real>(m: &Matrix<T>) -> Result<LowerTriangular<T>, NumericError> {
    check_symmetric(m)?;
    let n = m.rows();
    let mut l = LowerTriangular::zeros(n);
    for j in 0..n {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            let v = l.packed[packed_index(j, k)];
            pivot -= v * v;
        }
        if !(pivot > T::zero()) {
            return Err(NumericError::NotPositiveDefinite {
                pivot: j,
                value: pivot.to_f64_lossy(),
            });
        }
        let d = pivot.sqrt();
        l.packed[packed_index(j, j)] = d;
        for i in (j + 1)..n {
            let mut acc = m[(i, j)];
            for k in 0..j {
                acc -= l.packed[packed_index(i, k)] * l.packed[packed_index(j, k)];
            }
            l.packed[packed_index(i, j)] = acc / d;
        }
    }
    Ok(l)
}

/// Cholesky-like factor of a positive semi-definite matrix. Pivots at or
/// below `floor` (relative to the largest diagonal entry) are zeroed along
/// with their column, so `L Lᵀ` reproduces `M` on its range.
pub fn cholesky_psd<T: Real>(m: &Matrix<T>, floor: T) -> Result<LowerTriangular<T>, NumericError> {
    check_symmetric(m)?;
    let n = m.rows();
    let scale = m.diag().into_iter().fold(T::zero(), |a, d| a.max(d.abs()));
    let threshold = floor * scale.max(T::one());
    let mut l = LowerTriangular::zeros(n);
    for j in 0..n {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            let v = l.packed[packed_index(j, k)];
            pivot -= v * v;
        }
        if pivot < -threshold {
            return Err(NumericError::NotPositiveDefinite {
                pivot: j,
                value: pivot.to_f64_lossy(),
            });
        }
        if pivot <= threshold {
            continue;
        }
        let d = pivot.sqrt();
        l.packed[packed_index(j, j)] = d;
        for i in (j + 1)..n {
            let mut acc = m[(i, j)];
            for k in 0..j {
                acc -= l.packed[packed_index(i, k)] * l.packed[packed_index(j, k)];
            }
            l.packed[packed_index(i, j)] = acc / d;
        }
    }
    Ok(l)
}

/// Solves `M X = B` for symmetric positive definite `M`.
pub fn spd_solve<T: Real>(m: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>, NumericError> {
    if b.rows() != m.rows() {
        return Err(NumericError::dims(
            format!("{} rows", m.rows()),
            format!("{} rows", b.rows()),
        ));
    }
    let l = cholesky(m)?;
    let mut out = Matrix::zeros(b.rows(), b.cols());
    let mut col = vec![T::zero(); b.rows()];
    for j in 0..b.cols() {
        for (i, c) in col.iter_mut().enumerate() {
            *c = b[(i, j)];
        }
        l.forward_substitute(&mut col);
        l.backward_substitute(&mut col);
        for (i, &c) in col.iter().enumerate() {
            out[(i, j)] = c;
        }
    }
    Ok(out)
}

/// Solves `M x = b` for a single right-hand side.
pub fn spd_solve_vec<T: Real>(m: &Matrix<T>, b: &[T]) -> Result<Vec<T>, NumericError> {
    let l = cholesky(m)?;
    let mut x = b.to_vec();
    if x.len() != l.dim() {
        return Err(NumericError::dims(
            format!("{} entries", l.dim()),
            format!("{}", x.len()),
        ));
    }
    l.forward_substitute(&mut x);
    l.backward_substitute(&mut x);
    Ok(x)
}

pub fn spd_inverse<T: Real>(m: &Matrix<T>) -> Result<Matrix<T>, NumericError> {
    spd_solve(m, &Matrix::identity(m.rows()))
}

/// `log det M` as twice the sum of the log Cholesky pivots.
pub fn log_det_spd<T: Real>(m: &Matrix<T>) -> Result<T, NumericError> {
    let l = cholesky(m)?;
    let two = T::one() + T::one();
    Ok((0..l.dim()).fold(T::zero(), |acc, i| acc + l.get(i, i).ln()) * two)
}

/// Eigenvalues of a symmetric 2×2 matrix in ascending order.
pub fn symmetric_eigenvalues_2x2<T: Real>(m: &Matrix<T>) -> (T, T) {
    assert_eq!(m.shape(), (2, 2), "closed form needs a 2x2 matrix");
    let two = T::one() + T::one();
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = (m[(0, 1)] + m[(1, 0)]) / two;
    let mean = (a + d) / two;
    let radius = (((a - d) / two).powi(2) + b * b).sqrt();
    (mean - radius, mean + radius)
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Smallest eigenvalue of a symmetric matrix of dimension at most 2, or the
/// smallest Cholesky-derived pivot bound otherwise. Used for PSD checks.
pub fn min_eigenvalue_small<T: Real>(m: &Matrix<T>) -> T {
    match m.rows() {
        0 => T::zero(),
        1 => m[(0, 0)],
        2 => symmetric_eigenvalues_2x2(m).0,
        _ => {
            // Gershgorin lower bound; adequate for the sanity checks it backs.
            (0..m.rows())
                .map(|i| {
                    let off = (0..m.cols())
                        .filter(|&j| j != i)
                        .fold(T::zero(), |a, j| a + m[(i, j)].abs());
                    m[(i, i)] - off
                })
                .fold(T::infinity(), T::min)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn cholesky_identity() {
        let l = cholesky(&Matrix::<f64>::identity(2)).unwrap();
        assert_eq!(l.to_matrix(), Matrix::identity(2));
    }

    #[test]
    fn cholesky_hand_example() {
        let m = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]);
        let l = cholesky(&m).unwrap();
        let expected = Matrix::from_rows(&[[2.0, 0.0], [1.0, 2f64.sqrt()]]);
        assert!(l.to_matrix().sub(&expected).max_abs() < 1e-15);
        assert!(l.gram().sub(&m).max_abs() <= 1e-12 * m.max_abs());
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        assert!(matches!(
            cholesky(&m),
            Err(NumericError::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn cholesky_rejects_asymmetric() {
        let m = Matrix::from_rows(&[[2.0, 1.0], [0.0, 2.0]]);
        assert!(matches!(
            cholesky(&m),
            Err(NumericError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn cholesky_psd_handles_rank_deficiency() {
        let m = Matrix::from_diag(&[1.0, 0.0]);
        let l = cholesky_psd(&m, 1e-12).unwrap();
        assert_eq!(l.gram(), m);
        assert!(cholesky(&m).is_err());
    }

    #[test]
    fn spd_solve_examples() {
        let b = Matrix::from_rows(&[[1.0, 3.0], [2.0, -1.0]]);
        assert_eq!(spd_solve(&Matrix::identity(2), &b).unwrap(), b);

        let m = Matrix::from_diag(&[2.0, 2.0]);
        let x = spd_solve(&m, &Matrix::column(&[1.0, 1.0])).unwrap();
        assert!(x.sub(&Matrix::column(&[0.5, 0.5])).max_abs() < 1e-15);

        let bad = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        assert!(matches!(
            spd_solve(&bad, &b),
            Err(NumericError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn log_det_examples() {
        assert_eq!(log_det_spd(&Matrix::<f64>::identity(2)).unwrap(), 0.0);
        let v = log_det_spd(&Matrix::from_diag(&[2.0, 2.0])).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-15);
        assert!((v - 1.3863).abs() < 1e-4);
        assert!(matches!(
            log_det_spd(&Matrix::from_diag(&[1.0, 0.0])),
            Err(NumericError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn works_in_single_precision() {
        let m = Matrix::<f32>::from_rows(&[[4.0, 2.0], [2.0, 3.0]]);
        let l = cholesky(&m).unwrap();
        assert!((l.get(1, 1) - 2f32.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn new_validates_length_and_finiteness() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(NumericError::NonFinite { row: 0, col: 1 })
        ));
    }

    fn spd_strategy(dim: usize) -> impl Strategy<Value = Matrix<f64>> {
        proptest::collection::vec(-3.0f64..3.0, dim * dim).prop_map(move |a| {
            let a = Matrix::new(dim, dim, a).unwrap();
            a.matmul_t(&a).add(&Matrix::identity(dim).scale(1e-3))
        })
    }

    proptest! {
        #[test]
        fn cholesky_reconstructs(m in (1usize..=4).prop_flat_map(spd_strategy)) {
            let l = cholesky(&m).unwrap();
            let err = l.gram().sub(&m).max_abs();
            prop_assert!(err <= 1e-10 * m.max_abs(), "err {err}");
        }

        #[test]
        fn spd_solve_small_residual(
            m in (1usize..=4).prop_flat_map(spd_strategy),
            xs in proptest::collection::vec(-5.0f64..5.0, 8),
        ) {
            let n = m.rows();
            let x = Matrix::new(n, 2, xs[..2 * n].to_vec()).unwrap();
            let b = m.matmul(&x);
            let solved = spd_solve(&m, &b).unwrap();
            let residual = m.matmul(&solved).sub(&b).max_abs();
            prop_assert!(residual <= 1e-10 * (b.max_abs() + m.max_abs() * x.max_abs()));
        }

        #[test]
        fn spd_solve_recovers_x(
            m in spd_strategy(2),
            xs in proptest::collection::vec(-5.0f64..5.0, 2),
        ) {
            let (lo, hi) = symmetric_eigenvalues_2x2(&m);
            prop_assume!(hi / lo <= 1e6);
            let x = Matrix::column(&xs);
            prop_assume!(x.max_abs() > 1e-3);
            let solved = spd_solve(&m, &m.matmul(&x)).unwrap();
            let rel = solved.sub(&x).max_abs() / x.max_abs();
            prop_assert!(rel <= 1e-9, "relative error {rel}");
        }

        #[test]
        fn log_det_matches_eigenvalues(m in spd_strategy(2)) {
            let (lo, hi) = symmetric_eigenvalues_2x2(&m);
            let expected = (lo * hi).ln();
            let got = log_det_spd(&m).unwrap();
            prop_assert!(close(got, expected, 1e-9), "{got} vs {expected}");
        }
    }
}
