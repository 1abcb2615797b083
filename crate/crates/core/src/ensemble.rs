//! Particle ensembles, covariance preconditioners and the divergence
//! correction of the block-diagonal diffusion matrix.
//!
//! The stacked state has dimension `D = d·J`. The diffusion matrix `S(U)` is
//! block diagonal with one `d×d` block per particle. Production code only ever
//! evaluates the blocks; [`divergence_fd_oracle`] is the one place that walks
//! through the columns of `S` to differentiate it numerically.

use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};

/// `J` particles in `d` dimensions, stored row-major, with a cached mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    dim: usize,
    data: Vec<f64>,
    mean: Vec<f64>,
}

impl Ensemble {
    pub fn new<P: AsRef<[f64]>>(particles: &[P]) -> Result<Self> {
        let first = particles.first().ok_or(Error::EmptyEnsemble)?;
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(dim * particles.len());
        for p in particles {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::BadDimension {
                    expected: dim,
                    got: p.len(),
                });
            }
            data.extend_from_slice(p);
        }
        Self::from_flat(dim, data)
    }

    /// Builds an ensemble from `J·d` row-major coordinates.
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::BadDimension { expected: 1, got: 0 });
        }
        if data.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::BadDimension {
                expected: dim,
                got: data.len() % dim,
            });
        }
        let j = data.len() / dim;
        if j < 2 {
            return Err(Error::TooFewParticles { required: 2, got: j });
        }
        let mean = linalg::mean_of(data.chunks_exact(dim), dim);
        Ok(Self { dim, data, mean })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_particles(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn particle(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn particles(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.particles().map(<[f64]>::to_vec).collect()
    }

    /// The stacked `D`-vector view.
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `C(U)`, normalized by `1/J`.
    pub fn covariance(&self) -> SymMatrix {
        linalg::centered_covariance(self.particles(), &self.mean, self.n_particles() as f64)
    }

    /// `ū_[j]` and `C_[j]` (normalized by `1/(J−1)`) with particle `j` removed.
    pub fn leave_one_out(&self, j: usize) -> Result<(Vec<f64>, SymMatrix)> {
        let n = self.n_particles();
        if j >= n {
            return Err(Error::BadIndex { index: j, len: n });
        }
        if n < 3 {
            return Err(Error::TooFewParticles { required: 3, got: n });
        }
        let others = || {
            self.particles()
                .enumerate()
                .filter(move |(k, _)| *k != j)
                .map(|(_, p)| p)
        };
        let mean = linalg::mean_of(others(), self.dim);
        let cov = linalg::centered_covariance(others(), &mean, (n - 1) as f64);
        Ok((mean, cov))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Returns a copy with the coordinates mapped through `f(particle, component, value)`.
    pub fn map(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Result<Self> {
        let d = self.dim;
        let data = self.data.iter().enumerate().map(|(i, &v)| f(i / d, i % d, v)).collect();
        Self::from_flat(d, data)
    }
}

/// Parameters of the regularized preconditioner `αC₀ + (1−α)C(U)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Regularization {
    alpha: f64,
    c0: SymMatrix,
}

impl Regularization {
    pub fn new(alpha: f64, c0: SymMatrix) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(
                "alpha",
                format!("must lie strictly inside (0, 1), got {alpha}"),
            ));
        }
        let min_eig = c0.eigenvalues()?.first().copied().unwrap_or(0.0);
        if !(min_eig > 0.0) {
            return Err(Error::invalid(
                "c0",
                format!("must be strictly positive definite, smallest eigenvalue {min_eig}"),
            ));
        }
        Ok(Self { alpha, c0 })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn c0(&self) -> &SymMatrix {
        &self.c0
    }
}

/// Which covariance preconditions (and diffuses) each particle.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceScheme {
    /// `C(U)`, shared by all particles.
    Full,
    /// `αC₀ + (1−α)C(U)`, shared by all particles.
    Regularized(Regularization),
    /// `C_[j](U)`, computed without particle `j`.
    LeaveOneOut,
}

impl CovarianceScheme {
    /// Default regularization: `α = 0.1`, `C₀ = I`.
    pub fn default_regularized(dim: usize) -> Self {
        CovarianceScheme::Regularized(
            Regularization::new(0.1, SymMatrix::identity(dim)).expect("identity is positive definite"),
        )
    }

    pub fn regularized(alpha: f64, c0: SymMatrix) -> Result<Self> {
        Regularization::new(alpha, c0).map(CovarianceScheme::Regularized)
    }

    pub fn name(&self) -> &'static str {
        match self {
            CovarianceScheme::Full => "full",
            CovarianceScheme::Regularized(_) => "regularized",
            CovarianceScheme::LeaveOneOut => "leave_one_out",
        }
    }

    pub(crate) fn validate_for(&self, e: &Ensemble) -> Result<()> {
        match self {
            CovarianceScheme::Regularized(r) if r.c0.dim() != e.dim() => Err(Error::BadDimension {
                expected: e.dim(),
                got: r.c0.dim(),
            }),
            CovarianceScheme::LeaveOneOut if e.n_particles() < 3 => Err(Error::TooFewParticles {
                required: 3,
                got: e.n_particles(),
            }),
            _ => Ok(()),
        }
    }

    /// Scalar multiplying `(u^(j) − ū)` in the divergence correction.
    pub fn correction_factor(&self, e: &Ensemble) -> f64 {
        let base = (e.dim() + 1) as f64 / e.n_particles() as f64;
        match self {
            CovarianceScheme::Full => base,
            CovarianceScheme::Regularized(r) => (1.0 - r.alpha) * base,
            CovarianceScheme::LeaveOneOut => 0.0,
        }
    }
}

/// Preconditioner matrices for one ensemble snapshot.
#[derive(Debug, Clone)]
pub enum Preconditioners {
    Shared(SymMatrix),
    PerParticle(Vec<SymMatrix>),
}

impl Preconditioners {
    pub fn compute(e: &Ensemble, scheme: &CovarianceScheme) -> Result<Self> {
        scheme.validate_for(e)?;
        Ok(match scheme {
            CovarianceScheme::Full => Preconditioners::Shared(e.covariance()),
            CovarianceScheme::Regularized(r) => {
                Preconditioners::Shared(r.c0.lin_comb(r.alpha, &e.covariance(), 1.0 - r.alpha))
            }
            CovarianceScheme::LeaveOneOut => Preconditioners::PerParticle(
                (0..e.n_particles())
                    .map(|j| e.leave_one_out(j).map(|(_, c)| c))
                    .collect::<Result<_>>()?,
            ),
        })
    }

    #[inline]
    pub fn get(&self, j: usize) -> &SymMatrix {
        match self {
            Preconditioners::Shared(m) => m,
            Preconditioners::PerParticle(v) => &v[j],
        }
    }
}

/// The `j`th diagonal block of `S(U)` under `scheme`.
pub fn preconditioner(e: &Ensemble, scheme: &CovarianceScheme, j: usize) -> Result<SymMatrix> {
    if j >= e.n_particles() {
        return Err(Error::BadIndex {
            index: j,
            len: e.n_particles(),
        });
    }
    scheme.validate_for(e)?;
    match scheme {
        CovarianceScheme::Full => Ok(e.covariance()),
        CovarianceScheme::Regularized(r) => Ok(r.c0.lin_comb(r.alpha, &e.covariance(), 1.0 - r.alpha)),
        CovarianceScheme::LeaveOneOut => e.leave_one_out(j).map(|(_, c)| c),
    }
}

/// Closed-form divergence of `S(U)`: `(d+1)/J·(u^(j) − ū)`, scaled by `(1−α)`
/// for the regularized scheme and identically zero for leave-one-out.
pub fn divergence_correction(e: &Ensemble, scheme: &CovarianceScheme) -> Vec<Vec<f64>> {
    let factor = scheme.correction_factor(e);
    let mean = e.mean();
    e.particles()
        .map(|p| p.iter().zip(mean).map(|(u, m)| factor * (u - m)).collect())
        .collect()
}

/// Default central-difference step, `1e-5·(1 + ‖U‖_∞)`.
pub fn default_fd_step(e: &Ensemble) -> f64 {
    1e-5 * (1.0 + linalg::inf_norm(e.as_flat()))
}

fn perturbed(e: &Ensemble, j: usize, b: usize, delta: f64) -> Ensemble {
    let mut data = e.as_flat().to_vec();
    data[j * e.dim() + b] += delta;
    Ensemble::from_flat(e.dim(), data).expect("perturbation keeps the shape")
}

/// Central finite-difference evaluation of `(∇·S)_i = Σ_k ∂_k S_ik`.
///
/// Column `k = (j, b)` of `S` is nonzero only inside block `j`, so each
/// perturbation of coordinate `b` of particle `j` contributes to the rows of
/// that block alone.
pub fn divergence_fd_oracle(e: &Ensemble, scheme: &CovarianceScheme, h: f64) -> Result<Vec<Vec<f64>>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("h", "finite-difference step must be positive"));
    }
    scheme.validate_for(e)?;
    let d = e.dim();
    let mut div = vec![vec![0.0; d]; e.n_particles()];
    for (j, row) in div.iter_mut().enumerate() {
        for b in 0..d {
            let plus = preconditioner(&perturbed(e, j, b, h), scheme, j)?;
            let minus = preconditioner(&perturbed(e, j, b, -h), scheme, j)?;
            for (a, r) in row.iter_mut().enumerate() {
                *r += (plus.get(a, b) - minus.get(a, b)) / (2.0 * h);
            }
        }
    }
    Ok(div)
}

/// Largest central-difference derivative of any entry of block `j` of `S(U)`
/// with respect to any coordinate of particle `j`.
pub fn block_self_derivative_max(e: &Ensemble, scheme: &CovarianceScheme, h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("h", "finite-difference step must be positive"));
    }
    scheme.validate_for(e)?;
    let mut worst: f64 = 0.0;
    for j in 0..e.n_particles() {
        for b in 0..e.dim() {
            let plus = preconditioner(&perturbed(e, j, b, h), scheme, j)?;
            let minus = preconditioner(&perturbed(e, j, b, -h), scheme, j)?;
            for (p, m) in plus.as_slice().iter().zip(minus.as_slice()) {
                worst = worst.max(((p - m) / (2.0 * h)).abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ens(points: &[f64]) -> Ensemble {
        Ensemble::from_flat(1, points.to_vec()).unwrap()
    }

    #[test]
    fn ensemble_needs_two_particles() {
        assert_eq!(
            Ensemble::new(&[vec![1.0, 2.0]]).unwrap_err(),
            Error::TooFewParticles { required: 2, got: 1 }
        );
        assert!(matches!(
            Ensemble::new(&[vec![1.0, 2.0], vec![1.0]]),
            Err(Error::BadDimension { .. })
        ));
        let empty: Vec<Vec<f64>> = vec![];
        assert_eq!(Ensemble::new(&empty).unwrap_err(), Error::EmptyEnsemble);
    }

    #[test]
    fn regularization_validates_parameters() {
        assert!(Regularization::new(0.0, SymMatrix::identity(2)).is_err());
        assert!(Regularization::new(1.0, SymMatrix::identity(2)).is_err());
        let err = Regularization::new(1.5, SymMatrix::identity(2)).unwrap_err();
        assert!(err.to_string().contains("alpha"));
        let singular = SymMatrix::diagonal(&[1.0, 0.0]);
        assert!(Regularization::new(0.5, singular)
            .unwrap_err()
            .to_string()
            .contains("c0"));
    }

    #[test]
    fn regularized_preconditioner_with_collapsed_ensemble() {
        let e = Ensemble::new(&vec![vec![0.3, 0.3]; 4]).unwrap();
        let scheme = CovarianceScheme::regularized(0.999, SymMatrix::identity(2)).unwrap();
        let c = preconditioner(&e, &scheme, 2).unwrap();
        assert_abs_diff_eq!(c.get(0, 0), 0.999, epsilon = 1e-15);
        assert_abs_diff_eq!(c.get(1, 1), 0.999, epsilon = 1e-15);
        assert_eq!(c.get(0, 1), 0.0);
    }

    #[test]
    fn leave_one_out_preconditioner_by_hand() {
        let e = ens(&[0.0, 1.0, 2.0]);
        let (mean, c) = e.leave_one_out(0).unwrap();
        assert_eq!(mean, vec![1.5]);
        assert_abs_diff_eq!(c.get(0, 0), 0.25, epsilon = 1e-15);
        let c = preconditioner(&e, &CovarianceScheme::LeaveOneOut, 0).unwrap();
        assert_abs_diff_eq!(c.get(0, 0), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn full_preconditioner_delegates_to_covariance() {
        let e = ens(&[0.0, 2.0]);
        assert_eq!(preconditioner(&e, &CovarianceScheme::Full, 1).unwrap().get(0, 0), 1.0);
    }

    #[test]
    fn preconditioner_errors() {
        let e = ens(&[0.0, 2.0]);
        assert_eq!(
            preconditioner(&e, &CovarianceScheme::Full, 2).unwrap_err(),
            Error::BadIndex { index: 2, len: 2 }
        );
        assert_eq!(
            preconditioner(&e, &CovarianceScheme::LeaveOneOut, 0).unwrap_err(),
            Error::TooFewParticles { required: 3, got: 2 }
        );
    }

    #[test]
    fn correction_for_two_points() {
        // C(U) = (u1² + u2²)/2 − ((u1+u2)/2)², so ∂C/∂u1 = u1 − ū.
        let e = ens(&[0.0, 2.0]);
        let corr = divergence_correction(&e, &CovarianceScheme::Full);
        assert_eq!(corr, vec![vec![-1.0], vec![1.0]]);
        let fd = divergence_fd_oracle(&e, &CovarianceScheme::Full, 1e-5).unwrap();
        assert_abs_diff_eq!(fd[0][0], -1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(fd[1][0], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn correction_vanishes_at_the_mean() {
        let e = Ensemble::new(&vec![vec![1.0, -1.0]; 3]).unwrap();
        for v in divergence_correction(&e, &CovarianceScheme::Full) {
            assert_eq!(v, vec![0.0, 0.0]);
        }
        for v in divergence_fd_oracle(&e, &CovarianceScheme::Full, 1e-5).unwrap() {
            assert!(v.iter().all(|x| x.abs() < 1e-8));
        }
    }

    #[test]
    fn leave_one_out_needs_no_correction() {
        let e = ens(&[0.1, -2.0, 3.5, 0.7]);
        for v in divergence_correction(&e, &CovarianceScheme::LeaveOneOut) {
            assert_eq!(v, vec![0.0]);
        }
        let worst = block_self_derivative_max(&e, &CovarianceScheme::LeaveOneOut, 1e-5).unwrap();
        assert!(worst <= 1e-8);
        let full = block_self_derivative_max(&e, &CovarianceScheme::Full, 1e-5).unwrap();
        assert!(full > 0.1);
    }

    #[test]
    fn regularized_correction_is_scaled() {
        let e = ens(&[0.0, 2.0]);
        let scheme = CovarianceScheme::regularized(0.5, SymMatrix::identity(1)).unwrap();
        assert_eq!(divergence_correction(&e, &scheme), vec![vec![-0.5], vec![0.5]]);
        let fd = divergence_fd_oracle(&e, &scheme, 1e-5).unwrap();
        assert_abs_diff_eq!(fd[0][0], -0.5, epsilon = 1e-8);
    }

    #[test]
    fn bad_step_is_rejected() {
        let e = ens(&[0.0, 2.0]);
        assert!(divergence_fd_oracle(&e, &CovarianceScheme::Full, 0.0).is_err());
    }
}
