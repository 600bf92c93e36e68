//! Dense symmetric linear algebra.
//!
//! Everything here is sized for the dimensions this crate works at
//! (d up to a few hundred): a row-major [`Matrix`], a symmetric wrapper
//! [`SpdMatrix`] that caches its eigendecomposition, a cyclic Jacobi
//! eigensolver, spectral matrix functions, norms, and the closed-form
//! 2-Wasserstein (Bures) distance between centered Gaussians.

use std::fmt;
use std::sync::OnceLock;

use crate::error::{check_dim, Error, Result};
use crate::tolerances;

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            check_dim(c, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    /// Outer product `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        let mut m = Self::zeros(u.len(), v.len());
        for (i, a) in u.iter().enumerate() {
            for (j, b) in v.iter().enumerate() {
                m.data[i * v.len() + j] = a * b;
            }
        }
        m
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
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(v, &mut out);
        out
    }

    #[inline]
    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    /// `selfᵀ v`
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, vi) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn add_assign_scaled(&mut self, other: &Matrix, s: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    /// Largest absolute deviation from symmetry.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn symmetrized(&self) -> Matrix {
        assert!(self.is_square());
        let n = self.rows;
        let mut m = self.clone();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self.get(i, j) + self.get(j, i));
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        m
    }
}

/// Frobenius (Hilbert–Schmidt) norm.
pub fn hs_norm(m: &Matrix) -> f64 {
    m.data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Operator norm: the largest singular value, from the spectrum of `mᵀm`.
pub fn op_norm(m: &Matrix) -> f64 {
    if m.data.is_empty() {
        return 0.0;
    }
    let gram = if m.rows >= m.cols { m.transpose().matmul(m) } else { m.matmul(&m.transpose()) };
    match jacobi_eigen(&gram.symmetrized()) {
        Ok(e) => e.values[0].max(0.0).sqrt(),
        // Jacobi on a Gram matrix does not fail in practice; fall back to the HS bound.
        Err(_) => hs_norm(m),
    }
}

/// Eigendecomposition `Q Λ Qᵀ` with eigenvalues in descending order and
/// eigenvectors stored as the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl Eigen {
    /// `Q diag(f(λ)) Qᵀ`
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let fl: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for (k, f) in fl.iter().enumerate() {
                    s += self.vectors.get(i, k) * f * self.vectors.get(j, k);
                }
                out.set(i, j, s);
                out.set(j, i, s);
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.map(|l| l)
    }

    pub fn lambda_max(&self) -> f64 {
        self.values[0]
    }

    pub fn lambda_min(&self) -> f64 {
        *self.values.last().expect("non-empty spectrum")
    }
}

/// Cyclic Jacobi rotations on a symmetric matrix.
pub fn jacobi_eigen(m: &Matrix) -> Result<Eigen> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch { expected: m.rows, got: m.cols });
    }
    let n = m.rows;
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    let norm = hs_norm(m);
    let off = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a.get(i, j) * a.get(i, j);
                }
            }
        }
        s.sqrt()
    };

    let mut converged = false;
    for _sweep in 0..tolerances::JACOBI_MAX_SWEEPS {
        let o = off(&a);
        if o <= f64::EPSILON * 1e-2 * norm || o == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let g = 100.0 * apq.abs();
                if app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a.set(p, q, 0.0);
                    a.set(q, p, 0.0);
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- Jᵀ A J on rows/cols p, q
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let residual = off(&a);
    if !converged && residual > tolerances::RECONSTRUCTION * norm {
        return Err(Error::Numerical(format!(
            "Jacobi eigensolver did not converge in {} sweeps (off-diagonal {residual:e})",
            tolerances::JACOBI_MAX_SWEEPS
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, col, v.get(k, src));
        }
    }
    Ok(Eigen { values, vectors })
}

/// Symmetric matrix with a lazily computed eigendecomposition.
#[derive(Clone)]
pub struct SpdMatrix {
    entries: Matrix,
    eigen: OnceLock<Eigen>,
}

impl fmt::Debug for SpdMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpdMatrix").field("entries", &self.entries).finish()
    }
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl SpdMatrix {
    /// Wraps a square matrix, symmetrizing it.
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch { expected: m.rows, got: m.cols });
        }
        Ok(Self { entries: m.symmetrized(), eigen: OnceLock::new() })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]));
        let mut vectors = Matrix::zeros(n, n);
        for (col, &src) in order.iter().enumerate() {
            vectors.set(src, col, 1.0);
        }
        let eigen = Eigen { values: order.iter().map(|&i| diag[i]).collect(), vectors };
        let cell = OnceLock::new();
        let _ = cell.set(eigen);
        Self { entries: Matrix::from_diag(diag), eigen: cell }
    }

    fn from_eigen_map(e: &Eigen, f: impl Fn(f64) -> f64) -> Self {
        let values: Vec<f64> = e.values.iter().map(|&l| f(l)).collect();
        let entries = e.map(f);
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
        let n = values.len();
        let mut vectors = Matrix::zeros(n, n);
        for (col, &src) in order.iter().enumerate() {
            for k in 0..n {
                vectors.set(k, col, e.vectors.get(k, src));
            }
        }
        let cell = OnceLock::new();
        let _ = cell.set(Eigen { values: order.iter().map(|&i| values[i]).collect(), vectors });
        Self { entries, eigen: cell }
    }

    pub fn dim(&self) -> usize {
        self.entries.rows
    }

    pub fn matrix(&self) -> &Matrix {
        &self.entries
    }

    pub fn into_matrix(self) -> Matrix {
        self.entries
    }

    pub fn eigen(&self) -> Result<&Eigen> {
        if let Some(e) = self.eigen.get() {
            return Ok(e);
        }
        let e = jacobi_eigen(&self.entries)?;
        Ok(self.eigen.get_or_init(|| e))
    }

    pub fn lambda_min(&self) -> Result<f64> {
        Ok(self.eigen()?.lambda_min())
    }

    pub fn lambda_max(&self) -> Result<f64> {
        Ok(self.eigen()?.lambda_max())
    }

    /// `f(self)` through the spectral decomposition.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Result<SpdMatrix> {
        Ok(Self::from_eigen_map(self.eigen()?, f))
    }

    fn require_pd(&self) -> Result<&Eigen> {
        let e = self.eigen()?;
        let scale = e.lambda_max().abs().max(1.0);
        if e.lambda_min() <= tolerances::SINGULAR * scale {
            return Err(Error::Singular { lambda_min: e.lambda_min() });
        }
        Ok(e)
    }

    pub fn inverse(&self) -> Result<SpdMatrix> {
        let e = self.require_pd()?;
        Ok(Self::from_eigen_map(e, |l| 1.0 / l))
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.entries.mul_vec(v)
    }

    /// `B S Bᵀ` for a square `B`, re-symmetrized.
    pub fn congruence(&self, b: &Matrix) -> Result<SpdMatrix> {
        SpdMatrix::new(b.matmul(&self.entries).matmul(&b.transpose()))
    }
}

/// Eigenvalues (descending) and eigenvectors of a symmetric matrix.
pub fn eig_sym(m: &SpdMatrix) -> Result<Eigen> {
    m.eigen().cloned()
}

/// Principal square root of a positive semidefinite matrix.
pub fn sqrt_spd(m: &SpdMatrix) -> Result<SpdMatrix> {
    let e = m.eigen()?;
    let scale = e.lambda_max().abs().max(1.0);
    if e.lambda_min() < -tolerances::SQRT_RESIDUAL * scale {
        return Err(Error::Singular { lambda_min: e.lambda_min() });
    }
    Ok(SpdMatrix::from_eigen_map(e, |l| l.max(0.0).sqrt()))
}

/// Inverse principal square root of a positive definite matrix.
pub fn inv_sqrt_spd(m: &SpdMatrix) -> Result<SpdMatrix> {
    let e = m.require_pd()?;
    Ok(SpdMatrix::from_eigen_map(e, |l| 1.0 / l.sqrt()))
}

/// 2-Wasserstein distance between `N(0, s1)` and `N(0, s2)`.
pub fn gaussian_w2(s1: &SpdMatrix, s2: &SpdMatrix) -> Result<f64> {
    check_dim(s1.dim(), s2.dim())?;
    let r = sqrt_spd(s2)?;
    let inner = s1.congruence(r.matrix())?;
    let e = inner.eigen()?;
    let cross: f64 = e.values.iter().map(|l| l.max(0.0).sqrt()).sum();
    let t1 = s1.matrix().trace();
    let t2 = s2.matrix().trace();
    let rad = t1 + t2 - 2.0 * cross;
    let scale = (t1.abs() + t2.abs()).max(1.0);
    if rad < -tolerances::W2_CLAMP * scale {
        return Err(Error::Numerical(format!("negative Bures radicand {rad:e}")));
    }
    Ok(rad.max(0.0).sqrt())
}
