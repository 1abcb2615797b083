//! Negative log-densities `Ψ_R` consumed through their gradients.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;

/// Closed-form mean and covariance of `π* ∝ exp(−Ψ_R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMoments {
    pub mean: Vec<f64>,
    pub covariance: SymMatrix,
}

pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `∇Ψ_R(u)` into `out`. Callers guarantee both slices have length
    /// [`Potential::dim`].
    fn grad_into(&self, u: &[f64], out: &mut [f64]);

    fn value(&self, _u: &[f64]) -> Option<f64> {
        None
    }

    fn target_moments(&self) -> Option<TargetMoments> {
        None
    }

    fn grad_psi(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.dim() {
            return Err(Error::BadDimension {
                expected: self.dim(),
                got: u.len(),
            });
        }
        let mut out = vec![0.0; u.len()];
        self.grad_into(u, &mut out);
        Ok(out)
    }
}

/// `Ψ_R(u) = ½(u−m)ᵀΣ⁻¹(u−m)`.
#[derive(Debug, Clone)]
pub struct GaussianPotential {
    mean: Vec<f64>,
    covariance: SymMatrix,
    precision: SymMatrix,
}

impl GaussianPotential {
    pub fn new(mean: Vec<f64>, covariance: SymMatrix) -> Result<Self> {
        if mean.len() != covariance.dim() {
            return Err(Error::BadDimension {
                expected: covariance.dim(),
                got: mean.len(),
            });
        }
        let (precision, _) = covariance
            .inverse_and_logdet()
            .map_err(|_| Error::invalid("covariance", "must be symmetric positive definite"))?;
        Ok(Self {
            mean,
            covariance,
            precision,
        })
    }

    /// One-dimensional centered target with standard deviation `b`.
    pub fn centered_1d(b: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::invalid("b", "must be positive"));
        }
        Self::new(vec![0.0], SymMatrix::diagonal(&[b * b]))
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &SymMatrix {
        &self.covariance
    }

    pub fn precision(&self) -> &SymMatrix {
        &self.precision
    }
}

impl Potential for GaussianPotential {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    fn grad_into(&self, u: &[f64], out: &mut [f64]) {
        let d = self.mean.len();
        if d == 1 {
            out[0] = self.precision.get(0, 0) * (u[0] - self.mean[0]);
            return;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..d).map(|k| self.precision.get(i, k) * (u[k] - self.mean[k])).sum();
        }
    }

    fn value(&self, u: &[f64]) -> Option<f64> {
        let r: Vec<f64> = u.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let pr = self.precision.mul_vec(&r);
        Some(0.5 * r.iter().zip(&pr).map(|(a, b)| a * b).sum::<f64>())
    }

    fn target_moments(&self) -> Option<TargetMoments> {
        Some(TargetMoments {
            mean: self.mean.clone(),
            covariance: self.covariance.clone(),
        })
    }
}

/// `Ψ_R(u) = (u² − 1)²` in one dimension. Non-convex, no closed-form moments.
#[derive(Debug, Clone, Copy, Default)]
pub struct DoubleWellPotential;

impl Potential for DoubleWellPotential {
    fn dim(&self) -> usize {
        1
    }

    fn grad_into(&self, u: &[f64], out: &mut [f64]) {
        out[0] = 4.0 * u[0] * (u[0] * u[0] - 1.0);
    }

    fn value(&self, u: &[f64]) -> Option<f64> {
        Some((u[0] * u[0] - 1.0).powi(2))
    }
}

/// Bayesian linear regression with isotropic Gaussian prior and noise:
/// `Ψ_R(u) = ‖y − Au‖²/(2γ²) + ‖u‖²/(2σ₀²)`.
#[derive(Debug, Clone)]
pub struct LinearRegressionPotential {
    design: DMatrix<f64>,
    observations: Vec<f64>,
    gamma: f64,
    sigma0: f64,
    // ∇Ψ(u) = precision·u − shift
    precision: SymMatrix,
    shift: Vec<f64>,
    moments: TargetMoments,
}

impl LinearRegressionPotential {
    /// `rows` holds the `n` rows of the design matrix.
    pub fn new(rows: &[Vec<f64>], observations: Vec<f64>, gamma: f64, sigma0: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid("gamma", "must be positive"));
        }
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(Error::invalid("sigma0", "must be positive"));
        }
        let n = rows.len();
        if n == 0 {
            return Err(Error::data(None, None, "no observations"));
        }
        if observations.len() != n {
            return Err(Error::BadDimension {
                expected: n,
                got: observations.len(),
            });
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::data(None, None, "design matrix has no columns"));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::data(Some(bad + 1), None, "ragged design matrix"));
        }
        let design = DMatrix::from_fn(n, d, |i, k| rows[i][k]);
        let g2 = gamma * gamma;
        let gram = design.transpose() * &design;
        let precision = SymMatrix::from_upper_fn(d, |i, k| {
            gram[(i, k)] / g2 + if i == k { 1.0 / (sigma0 * sigma0) } else { 0.0 }
        });
        let aty = design.transpose() * nalgebra::DVector::from_column_slice(&observations);
        let shift: Vec<f64> = aty.iter().map(|v| v / g2).collect();
        let (covariance, _) = precision.inverse_and_logdet()?;
        let mean = covariance.mul_vec(&shift);
        Ok(Self {
            design,
            observations,
            gamma,
            sigma0,
            precision,
            shift,
            moments: TargetMoments { mean, covariance },
        })
    }

    pub fn n_observations(&self) -> usize {
        self.observations.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn precision(&self) -> &SymMatrix {
        &self.precision
    }
}

impl Potential for LinearRegressionPotential {
    fn dim(&self) -> usize {
        self.shift.len()
    }

    fn grad_into(&self, u: &[f64], out: &mut [f64]) {
        self.precision.mul_vec_into(u, out);
        for (o, s) in out.iter_mut().zip(&self.shift) {
            *o -= s;
        }
    }

    fn value(&self, u: &[f64]) -> Option<f64> {
        let g2 = self.gamma * self.gamma;
        let mut misfit = 0.0;
        for (i, y) in self.observations.iter().enumerate() {
            let pred: f64 = (0..u.len()).map(|k| self.design[(i, k)] * u[k]).sum();
            misfit += (y - pred).powi(2);
        }
        let prior: f64 = u.iter().map(|v| v * v).sum();
        Some(misfit / (2.0 * g2) + prior / (2.0 * self.sigma0 * self.sigma0))
    }

    fn target_moments(&self) -> Option<TargetMoments> {
        Some(self.moments.clone())
    }
}

/// Reads a regression data set with header `x_0,...,x_{d-1},y`.
pub fn load_regression(path: impl AsRef<Path>, gamma: f64, sigma0: f64) -> Result<LinearRegressionPotential> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::data(None, None, format!("cannot open {}: {e}", path.display())))?;
    let (rows, y) = parse_regression(file)?;
    LinearRegressionPotential::new(&rows, y, gamma, sigma0)
}

/// Parses regression CSV content. Rows are reported 1-based, counting the
/// header as row 1.
pub fn parse_regression(reader: impl std::io::Read) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::data(Some(1), None, e.to_string()))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::data(Some(1), None, "missing header"));
    }
    let d = header.len() - 1;
    if d == 0 {
        return Err(Error::data(Some(1), None, "need at least one x column and y"));
    }
    for (k, name) in header.iter().enumerate() {
        let expected = if k == d { "y".to_string() } else { format!("x_{k}") };
        if name.trim() != expected {
            return Err(Error::data(
                Some(1),
                Some(name),
                format!("expected header field `{expected}`"),
            ));
        }
    }
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row_no = i + 2;
        let rec = rec.map_err(|e| Error::data(Some(row_no), None, e.to_string()))?;
        if rec.len() != d + 1 {
            return Err(Error::data(
                Some(row_no),
                None,
                format!("expected {} fields, found {}", d + 1, rec.len()),
            ));
        }
        let mut vals = Vec::with_capacity(d + 1);
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::data(
                    Some(row_no),
                    Some(&header[k]),
                    format!("cannot parse `{field}` as a number"),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::data(Some(row_no), Some(&header[k]), "non-finite value"));
            }
            vals.push(v);
        }
        y.push(vals.pop().expect("d + 1 fields"));
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Error::data(None, None, "no data rows"));
    }
    Ok((rows, y))
}
