//! Dense symmetric kernels: point-cloud moments and PSD square roots.
//!
//! Matrices here are tiny (the state dimension), so everything is stored as a
//! flat row-major `Vec<f64>` and decomposed through `nalgebra` when needed.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A real symmetric matrix whose stored entries are exactly symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "SymMatrix needs dim >= 1");
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = scale;
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = v;
        }
        m
    }

    /// Builds a matrix from the upper triangle of `f`, mirroring it below the
    /// diagonal.
    pub fn from_upper_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.data[i * dim + j] = v;
                m.data[j * dim + i] = v;
            }
        }
        m
    }

    /// Rejects any input that is not exactly symmetric.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::BadDimension { expected: 1, got: 0 });
        }
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::BadDimension {
                    expected: dim,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if data[i * dim + j] != data[j * dim + i] {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks_exact(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &SymMatrix, b: f64) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect(),
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.mul_vec_into(v, &mut out);
        out
    }

    #[inline]
    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.dim);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.dim)) {
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    /// Full (not necessarily symmetric) product, row-major.
    pub fn matmul(&self, other: &SymMatrix) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                for j in 0..n {
                    out[i * n + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    /// Symmetrizes an arbitrary square matrix as `(m + mᵀ)/2`.
    pub fn from_nalgebra_symmetrized(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        Self::from_upper_fn(m.nrows(), |i, j| {
            if i == j {
                m[(i, i)]
            } else {
                0.5 * (m[(i, j)] + m[(j, i)])
            }
        })
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        if self.dim == 1 {
            return Ok(vec![self.data[0]]);
        }
        let eig = SymmetricEigen::try_new(self.to_nalgebra(), f64::EPSILON, 0)
            .ok_or_else(|| Error::NumericalFailure("symmetric eigensolver did not converge".into()))?;
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        Ok(vals)
    }

    /// Checks strict positive definiteness through a Cholesky factorization.
    pub fn is_positive_definite(&self) -> bool {
        self.is_finite() && self.to_nalgebra().cholesky().is_some()
    }

    /// Inverse and log-determinant of a strictly positive definite matrix.
    pub fn inverse_and_logdet(&self) -> Result<(SymMatrix, f64)> {
        let chol = self
            .to_nalgebra()
            .cholesky()
            .ok_or_else(|| Error::NumericalFailure("matrix is not positive definite".into()))?;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let inv = chol.inverse();
        Ok((Self::from_nalgebra_symmetrized(&inv), logdet))
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.to_rows()
    }
}

fn check_points<P: AsRef<[f64]>>(points: &[P]) -> Result<usize> {
    let first = points.first().ok_or(Error::EmptyEnsemble)?;
    let d = first.as_ref().len();
    if d == 0 {
        return Err(Error::BadDimension { expected: 1, got: 0 });
    }
    for p in points {
        if p.as_ref().len() != d {
            return Err(Error::BadDimension {
                expected: d,
                got: p.as_ref().len(),
            });
        }
    }
    Ok(d)
}

/// Componentwise arithmetic mean of a point cloud.
pub fn sample_mean<P: AsRef<[f64]>>(points: &[P]) -> Result<Vec<f64>> {
    let d = check_points(points)?;
    Ok(mean_of(points.iter().map(AsRef::as_ref), d))
}

/// Empirical covariance with `1/J` normalization, computed from centered
/// residuals.
pub fn empirical_covariance<P: AsRef<[f64]>>(points: &[P]) -> Result<SymMatrix> {
    let d = check_points(points)?;
    let mean = mean_of(points.iter().map(AsRef::as_ref), d);
    Ok(centered_covariance(
        points.iter().map(AsRef::as_ref),
        &mean,
        points.len() as f64,
    ))
}

pub(crate) fn mean_of<'a>(points: impl Iterator<Item = &'a [f64]>, d: usize) -> Vec<f64> {
    let mut acc = vec![0.0; d];
    let mut n = 0usize;
    for p in points {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
        n += 1;
    }
    let inv = 1.0 / n as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

/// `(1/norm) Σ (p − mean)(p − mean)ᵀ`.
pub(crate) fn centered_covariance<'a>(points: impl Iterator<Item = &'a [f64]>, mean: &[f64], norm: f64) -> SymMatrix {
    let d = mean.len();
    let mut m = SymMatrix::zeros(d);
    let mut r = vec![0.0; d];
    for p in points {
        for ((ri, pi), mi) in r.iter_mut().zip(p).zip(mean) {
            *ri = pi - mi;
        }
        for i in 0..d {
            for j in i..d {
                m.data[i * d + j] += r[i] * r[j];
            }
        }
    }
    let inv = 1.0 / norm;
    for i in 0..d {
        for j in i..d {
            let v = m.data[i * d + j] * inv;
            m.data[i * d + j] = v;
            m.data[j * d + i] = v;
        }
    }
    m
}

/// Symmetric PSD square root by eigendecomposition.
///
/// Eigenvalues within `n·ε·max|λ|` of zero are round-off and are set to zero,
/// so a rank-deficient matrix keeps an exactly rank-deficient root. Eigenvalues
/// below `eigen_floor` are then raised to the floor before the root is taken.
pub fn psd_sqrt(m: &SymMatrix, eigen_floor: f64) -> Result<SymMatrix> {
    if !(eigen_floor >= 0.0) {
        return Err(Error::invalid("eigen_floor", "must be nonnegative"));
    }
    if !m.is_finite() {
        return Err(Error::NumericalFailure("non-finite matrix entries".into()));
    }
    if m.dim == 1 {
        return Ok(SymMatrix {
            dim: 1,
            data: vec![m.data[0].max(eigen_floor).sqrt()],
        });
    }
    let eig = SymmetricEigen::try_new(m.to_nalgebra(), f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("symmetric eigensolver did not converge".into()))?;
    let q = &eig.eigenvectors;
    let n = m.dim;
    let noise_level = n as f64 * f64::EPSILON * eig.eigenvalues.amax();
    let roots: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| if l.abs() <= noise_level { 0.0 } else { l }.max(eigen_floor).sqrt())
        .collect();
    Ok(SymMatrix::from_upper_fn(n, |i, j| {
        (0..n).map(|k| q[(i, k)] * roots[k] * q[(j, k)]).sum()
    }))
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
}
