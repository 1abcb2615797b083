//! Interacting Langevin particle samplers preconditioned by the empirical
//! covariance of the ensemble.
//!
//! The crate provides three dynamics for sampling `π* ∝ exp(−Ψ_R)` with `J`
//! interacting particles:
//!
//! * [`DynamicsVariant::Uncorrected`]: `du = −C(U)∇Ψ_R dt + √(2C(U)) dW`,
//!   whose finite-`J` stationary law is not the product target;
//! * [`DynamicsVariant::Corrected`]: adds the divergence of the diffusion
//!   matrix, `(d+1)/J·(u − ū)`, which restores invariance of the product
//!   target (optionally with the regularized covariance `αC₀ + (1−α)C(U)`);
//! * [`DynamicsVariant::LeaveOneOut`]: preconditions particle `j` with the
//!   covariance of the other particles, so no correction is needed.
//!
//! Alongside the samplers sit the diagnostics used to check them: a
//! finite-difference check of the divergence formula, the variance-bias study
//! for the uncorrected dynamics, pooled moments with effective sample sizes
//! and a Gaussian KL trace.
//!
//! ```
//! use ipsampler::{
//!     gaussian_initial_ensemble, pooled_moments, simulate, CovarianceScheme, Dynamics,
//!     GaussianPotential, StepConfig,
//! };
//!
//! let target = GaussianPotential::centered_1d(1.0).unwrap();
//! let e0 = gaussian_initial_ensemble(8, &[0.0], 1.0, 7).unwrap();
//! let dynamics = Dynamics::corrected(CovarianceScheme::Full).unwrap();
//! let cfg = StepConfig::new(0.01, 2_000, 7).unwrap();
//! let traj = simulate(&e0, &target, &dynamics, &cfg, 10).unwrap();
//! let est = pooled_moments(&traj, 0.25).unwrap();
//! assert_eq!(est.mean.len(), 1);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod linalg;
pub mod noise;
pub mod potentials;

pub use diagnostics::{
    bias_study, divergence_check, effective_sample_size, gaussian_kl, kl_trace, pooled_moments, BiasStudyConfig,
    BiasStudyReport, BiasStudyRow, DivergenceCheckConfig, DivergenceCheckReport, DivergenceCheckRow, KlPoint,
    MomentEstimate,
};
pub use dynamics::{
    drift, em_step, gaussian_initial_ensemble, simulate, Dynamics, DynamicsVariant, StepConfig, Trajectory,
};
pub use ensemble::{
    divergence_correction, divergence_fd_oracle, preconditioner, CovarianceScheme, Ensemble, Regularization,
};
pub use error::{Error, Result};
pub use linalg::{empirical_covariance, psd_sqrt, sample_mean, SymMatrix};
pub use noise::NoiseStream;
pub use potentials::{
    load_regression, DoubleWellPotential, GaussianPotential, LinearRegressionPotential, Potential, TargetMoments,
};
