//! Dense complex linear algebra on the composite Hilbert space.
//!
//! Matrices are stored row-major. The composite space is ordered with the
//! system index slow and the environment index fast, see [`basis_index`];
//! every reshape in the crate goes through that function.
//!
//! Heavy kernels (eigendecomposition, QR, matrix products) are delegated to
//! `faer` and always run sequentially, so results do not depend on how many
//! worker threads the caller uses.

use std::ops::{Index, IndexMut};

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest matrix dimension accepted anywhere in the crate.
pub const MAX_DIM: usize = 8192;

/// Relative tolerance on `||A - A^H||_F / ||A||_F` for admitting a Hermitian operator.
pub const HERMITICITY_TOL: f64 = 1e-9;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Index of `|s> ⊗ |e>` in the composite basis.
#[inline]
pub fn basis_index(s: usize, e: usize, dim_e: usize) -> usize {
    s * dim_e + e
}

/// Inverse of [`basis_index`].
#[inline]
pub fn split_index(index: usize, dim_e: usize) -> (usize, usize) {
    (index / dim_e, index % dim_e)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_real_diagonal(diagonal: &[f64]) -> Self {
        let n = diagonal.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diagonal.iter().enumerate() {
            m[(i, i)] = C64::new(d, 0.0);
        }
        m
    }

    /// Column vector `(len x 1)`.
    pub fn column(values: &[C64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * factor).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::<C64>::zeros(self.rows, other.cols);
        matmul(out.as_mut(), Accum::Replace, self.view(), other.view(), ONE, Par::Seq);
        Ok(Self::from_faer(out.as_ref()))
    }

    /// Frobenius norm of `A - A^H`.
    pub fn hermiticity_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (self[(i, j)] - self[(j, i)].conj()).norm_sqr();
            }
        }
        acc.sqrt()
    }

    pub(crate) fn view(&self) -> MatRef<'_, C64> {
        MatRef::from_row_major_slice(&self.data, self.rows, self.cols)
    }

    pub(crate) fn from_faer(m: MatRef<'_, C64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// A square matrix admitted as Hermitian.
///
/// Construction checks `||A - A^H||_F <= HERMITICITY_TOL * ||A||_F` and then
/// stores the exact Hermitian part `(A + A^H) / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator {
    matrix: ComplexMatrix,
}

impl HermitianOperator {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension(format!(
                "Hermitian operator must be square, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        if !matrix.is_finite() {
            return Err(Error::NonFinite);
        }
        let deviation = matrix.hermiticity_deviation();
        let tolerance = HERMITICITY_TOL * frobenius_norm_sq(&matrix).sqrt();
        if deviation > tolerance {
            return Err(Error::NotHermitian {
                deviation,
                tolerance,
            });
        }
        Ok(Self::hermitize(matrix))
    }

    /// Takes the Hermitian part without any admission check.
    pub(crate) fn hermitize(mut matrix: ComplexMatrix) -> Self {
        let n = matrix.rows();
        for i in 0..n {
            matrix[(i, i)].im = 0.0;
            for j in (i + 1)..n {
                let avg = (matrix[(i, j)] + matrix[(j, i)].conj()) * 0.5;
                matrix[(i, j)] = avg;
                matrix[(j, i)] = avg.conj();
            }
        }
        Self { matrix }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            matrix: ComplexMatrix::zeros(dim, dim),
        }
    }

    pub fn from_real_diagonal(diagonal: &[f64]) -> Self {
        Self {
            matrix: ComplexMatrix::from_real_diagonal(diagonal),
        }
    }

    /// `|psi><psi|`.
    pub fn projector(psi: &[C64]) -> Self {
        let n = psi.len();
        Self::hermitize(ComplexMatrix::from_fn(n, n, |i, j| psi[i] * psi[j].conj()))
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            matrix: self.matrix.add(&other.matrix)?,
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            matrix: self.matrix.scaled(C64::new(factor, 0.0)),
        }
    }
}

impl Index<(usize, usize)> for HermitianOperator {
    type Output = C64;

    fn index(&self, idx: (usize, usize)) -> &C64 {
        &self.matrix[idx]
    }
}

/// Eigenvalues in ascending order with orthonormal eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct Eigensystem {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: ComplexMatrix,
}

impl Eigensystem {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V diag(lambda) V^H`.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let v = &self.eigenvectors;
        let n = self.dim();
        let scaled = ComplexMatrix::from_fn(n, n, |i, k| v[(i, k)] * self.eigenvalues[k]);
        scaled
            .matmul(&v.adjoint())
            .expect("eigenvector matrix is square")
    }

    /// `||V^H V - I||_F`.
    pub fn orthonormality_error(&self) -> f64 {
        let v = &self.eigenvectors;
        let gram = v.adjoint().matmul(v).expect("eigenvector matrix is square");
        frobenius_norm_sq(&gram.sub(&ComplexMatrix::identity(self.dim())).unwrap()).sqrt()
    }
}

/// Hermitian eigendecomposition.
///
/// Eigenvalues are ascending. Each eigenvector is phase-fixed so that its
/// largest-modulus component (first one on exact ties) is real and positive,
/// which makes the output reproducible for identical input.
pub fn eigh(a: &HermitianOperator) -> Result<Eigensystem> {
    let n = a.dim();
    let input = to_col_major(a.matrix());
    let mut values = faer::diag::Diag::<C64>::zeros(n);
    let mut vectors = Mat::<C64>::zeros(n, n);
    let par = Par::Seq;
    let scratch = faer::linalg::evd::self_adjoint_evd_scratch::<C64>(
        n,
        faer::linalg::evd::ComputeEigenvectors::Yes,
        par,
        Default::default(),
    );
    faer::linalg::evd::self_adjoint_evd(
        input.as_ref(),
        values.as_mut(),
        Some(vectors.as_mut()),
        par,
        MemStack::new(&mut MemBuffer::new(scratch)),
        Default::default(),
    )
    .map_err(|_| Error::NoConvergence)?;

    let eigenvalues: Vec<f64> = values.column_vector().iter().map(|z| z.re).collect();
    if eigenvalues.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut eigenvectors = ComplexMatrix::from_faer(vectors.as_ref());
    fix_phases(&mut eigenvectors);
    Ok(Eigensystem {
        eigenvalues,
        eigenvectors,
    })
}

/// Eigenvalues only, ascending.
pub fn eigvalsh(a: &HermitianOperator) -> Result<Vec<f64>> {
    let n = a.dim();
    if n <= 2 {
        return Ok(small_eigenvalues(a));
    }
    let input = to_col_major(a.matrix());
    let mut values = faer::diag::Diag::<C64>::zeros(n);
    let par = Par::Seq;
    let scratch = faer::linalg::evd::self_adjoint_evd_scratch::<C64>(
        n,
        faer::linalg::evd::ComputeEigenvectors::No,
        par,
        Default::default(),
    );
    faer::linalg::evd::self_adjoint_evd(
        input.as_ref(),
        values.as_mut(),
        None,
        par,
        MemStack::new(&mut MemBuffer::new(scratch)),
        Default::default(),
    )
    .map_err(|_| Error::NoConvergence)?;
    Ok(values.column_vector().iter().map(|z| z.re).collect())
}

fn small_eigenvalues(a: &HermitianOperator) -> Vec<f64> {
    if a.dim() == 1 {
        return vec![a[(0, 0)].re];
    }
    let (p, q, r) = (a[(0, 0)].re, a[(1, 1)].re, a[(0, 1)]);
    let mean = 0.5 * (p + q);
    let radius = (0.25 * (p - q) * (p - q) + r.norm_sqr()).sqrt();
    vec![mean - radius, mean + radius]
}

fn fix_phases(v: &mut ComplexMatrix) {
    let n = v.rows();
    for k in 0..v.cols() {
        let mut best = 0;
        let mut best_mod = -1.0;
        for i in 0..n {
            let m = v[(i, k)].norm_sqr();
            if m > best_mod {
                best_mod = m;
                best = i;
            }
        }
        if best_mod <= 0.0 {
            continue;
        }
        let pivot = v[(best, k)];
        let phase = pivot.conj() / pivot.norm();
        for i in 0..n {
            v[(i, k)] *= phase;
        }
        v[(best, k)].im = 0.0;
    }
}

fn to_col_major(m: &ComplexMatrix) -> Mat<C64> {
    Mat::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

/// Thin Householder QR of a complex matrix, returning `Q` and the diagonal of `R`.
pub(crate) fn qr_complex(a: Mat<C64>) -> (Mat<C64>, Vec<C64>) {
    let (q, r_diag) = qr_generic(a);
    (q, r_diag)
}

/// Thin Householder QR of a real matrix, returning `Q` and the diagonal of `R`.
pub(crate) fn qr_real(a: Mat<f64>) -> (Mat<f64>, Vec<f64>) {
    qr_generic(a)
}

fn qr_generic<T: faer::traits::ComplexField + Copy>(mut a: Mat<T>) -> (Mat<T>, Vec<T>) {
    use faer::linalg::householder;
    use faer::linalg::qr::no_pivoting::factor;

    let (m, n) = a.shape();
    let size = m.min(n);
    let par = Par::Seq;
    let block_size = factor::recommended_block_size::<T>(m, n);
    let mut coeff = Mat::<T>::zeros(block_size, size);
    factor::qr_in_place(
        a.as_mut(),
        coeff.as_mut(),
        par,
        MemStack::new(&mut MemBuffer::new(factor::qr_in_place_scratch::<T>(
            m,
            n,
            block_size,
            par,
            Default::default(),
        ))),
        Default::default(),
    );
    let r_diag: Vec<T> = (0..size).map(|i| a[(i, i)]).collect();
    let mut q = Mat::<T>::identity(m, size);
    householder::apply_block_householder_sequence_on_the_left_in_place_with_conj(
        a.as_ref(),
        coeff.as_ref(),
        faer::Conj::No,
        q.as_mut(),
        par,
        MemStack::new(&mut MemBuffer::new(
            householder::apply_block_householder_sequence_on_the_left_in_place_scratch::<T>(
                m, block_size, size,
            ),
        )),
    );
    (q, r_diag)
}

/// Kronecker product; element `(a*rows_b + c, b*cols_b + d) = A[a,b] * B[c,d]`.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    let rows = a.rows().checked_mul(b.rows());
    let cols = a.cols().checked_mul(b.cols());
    match (rows, cols) {
        (Some(r), Some(c)) if r <= MAX_DIM && c <= MAX_DIM => {
            Ok(ComplexMatrix::from_fn(r, c, |i, j| {
                let (ia, ib) = (i / b.rows(), i % b.rows());
                let (ja, jb) = (j / b.cols(), j % b.cols());
                a[(ia, ja)] * b[(ib, jb)]
            }))
        }
        _ => Err(Error::TooLarge {
            dim: a.rows().saturating_mul(b.rows()).max(a.cols().saturating_mul(b.cols())),
            max: MAX_DIM,
        }),
    }
}

/// Trace over the environment factor of `H_s ⊗ H_e`.
pub fn partial_trace_env(
    rho: &HermitianOperator,
    dim_s: usize,
    dim_e: usize,
) -> Result<HermitianOperator> {
    if dim_s == 0 || dim_e == 0 || dim_s.checked_mul(dim_e) != Some(rho.dim()) {
        return Err(Error::Dimension(format!(
            "operator of dimension {} cannot be split as {dim_s} x {dim_e}",
            rho.dim()
        )));
    }
    let m = rho.matrix();
    let reduced = ComplexMatrix::from_fn(dim_s, dim_s, |s, t| {
        (0..dim_e)
            .map(|e| m[(basis_index(s, e, dim_e), basis_index(t, e, dim_e))])
            .sum()
    });
    Ok(HermitianOperator::hermitize(reduced))
}

/// `Tr(A A^H)`, the sum of squared moduli of the entries.
pub fn frobenius_norm_sq(a: &ComplexMatrix) -> f64 {
    a.as_slice().iter().map(|z| z.norm_sqr()).sum()
}
