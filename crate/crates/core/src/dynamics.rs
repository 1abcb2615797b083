//! Interacting Langevin dynamics and its Euler–Maruyama discretization.
//!
//! Each particle moves according to
//!
//! ```text
//! du_j = (−C_j ∇Ψ_R(u_j) + corr_j) dt + √(2 C_j) dW_j
//! ```
//!
//! where `C_j` is the preconditioner picked by the [`CovarianceScheme`] and
//! `corr_j` is the divergence correction for the corrected variant (zero
//! otherwise). Covariances, corrections and square roots are evaluated on the
//! pre-step ensemble.

use crate::ensemble::{CovarianceScheme, Ensemble, Preconditioners};
use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, SymMatrix};
use crate::noise::{NoiseStream, INIT_STREAM};
use crate::potentials::Potential;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DynamicsVariant {
    /// Preconditioned Langevin without the divergence term.
    Uncorrected,
    /// Adds the divergence of the diffusion matrix to the drift.
    Corrected,
    /// Leave-one-out covariances; no correction required.
    LeaveOneOut,
}

impl DynamicsVariant {
    pub fn name(self) -> &'static str {
        match self {
            DynamicsVariant::Uncorrected => "uncorrected",
            DynamicsVariant::Corrected => "corrected",
            DynamicsVariant::LeaveOneOut => "leave_one_out",
        }
    }
}

impl std::str::FromStr for DynamicsVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uncorrected" => Ok(DynamicsVariant::Uncorrected),
            "corrected" => Ok(DynamicsVariant::Corrected),
            "leave_one_out" | "leave-one-out" => Ok(DynamicsVariant::LeaveOneOut),
            other => Err(Error::invalid(
                "variant",
                format!("unknown variant `{other}` (uncorrected | corrected | leave_one_out)"),
            )),
        }
    }
}

/// A variant paired with a compatible covariance scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    variant: DynamicsVariant,
    scheme: CovarianceScheme,
}

impl Dynamics {
    pub fn new(variant: DynamicsVariant, scheme: CovarianceScheme) -> Result<Self> {
        let leave_one_out_scheme = matches!(scheme, CovarianceScheme::LeaveOneOut);
        match variant {
            DynamicsVariant::LeaveOneOut if !leave_one_out_scheme => Err(Error::invalid(
                "scheme",
                "the leave-one-out variant requires the leave-one-out scheme",
            )),
            DynamicsVariant::Uncorrected | DynamicsVariant::Corrected if leave_one_out_scheme => Err(Error::invalid(
                "scheme",
                "use the leave_one_out variant for leave-one-out covariances",
            )),
            _ => Ok(Self { variant, scheme }),
        }
    }

    pub fn uncorrected(scheme: CovarianceScheme) -> Result<Self> {
        Self::new(DynamicsVariant::Uncorrected, scheme)
    }

    pub fn corrected(scheme: CovarianceScheme) -> Result<Self> {
        Self::new(DynamicsVariant::Corrected, scheme)
    }

    pub fn leave_one_out() -> Self {
        Self {
            variant: DynamicsVariant::LeaveOneOut,
            scheme: CovarianceScheme::LeaveOneOut,
        }
    }

    pub fn variant(&self) -> DynamicsVariant {
        self.variant
    }

    pub fn scheme(&self) -> &CovarianceScheme {
        &self.scheme
    }

    fn correction_factor(&self, e: &Ensemble) -> f64 {
        match self.variant {
            DynamicsVariant::Corrected => self.scheme.correction_factor(e),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepConfig {
    pub dt: f64,
    pub n_steps: u64,
    pub seed: u64,
    pub eigen_floor: f64,
    /// Multiplies the diffusion term. `1.0` for sampling; `0.0` turns the
    /// scheme into explicit Euler on the drift (test hook).
    pub noise_scale: f64,
}

impl StepConfig {
    pub fn new(dt: f64, n_steps: u64, seed: u64) -> Result<Self> {
        let cfg = Self {
            dt,
            n_steps,
            seed,
            eigen_floor: 0.0,
            noise_scale: 1.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps", "must be at least 1"));
        }
        if !(self.eigen_floor >= 0.0 && self.eigen_floor.is_finite()) {
            return Err(Error::invalid("eigen_floor", "must be nonnegative"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::invalid("noise_scale", "must be nonnegative"));
        }
        Ok(())
    }
}

fn check_dims(e: &Ensemble, p: &dyn Potential) -> Result<()> {
    if e.dim() != p.dim() {
        return Err(Error::BadDimension {
            expected: p.dim(),
            got: e.dim(),
        });
    }
    Ok(())
}

/// Drift into a flat `J·d` buffer, given precomputed preconditioners.
fn drift_into(e: &Ensemble, p: &dyn Potential, precond: &Preconditioners, correction_factor: f64, out: &mut [f64]) {
    let d = e.dim();
    let mean = e.mean();
    let mut grad = vec![0.0; d];
    for (j, (u, o)) in e.particles().zip(out.chunks_exact_mut(d)).enumerate() {
        p.grad_into(u, &mut grad);
        precond.get(j).mul_vec_into(&grad, o);
        for ((oi, ui), mi) in o.iter_mut().zip(u).zip(mean) {
            *oi = correction_factor * (ui - mi) - *oi;
        }
    }
}

/// Deterministic part of the particle velocities.
pub fn drift(e: &Ensemble, p: &dyn Potential, dynamics: &Dynamics) -> Result<Vec<Vec<f64>>> {
    check_dims(e, p)?;
    let precond = Preconditioners::compute(e, &dynamics.scheme)?;
    let mut out = vec![0.0; e.as_flat().len()];
    drift_into(e, p, &precond, dynamics.correction_factor(e), &mut out);
    Ok(out.chunks_exact(e.dim()).map(<[f64]>::to_vec).collect())
}

/// One Euler–Maruyama step using the noise keyed by `step_index`.
pub fn em_step(
    e: &Ensemble,
    p: &dyn Potential,
    dynamics: &Dynamics,
    cfg: &StepConfig,
    step_index: u64,
) -> Result<Ensemble> {
    cfg.validate()?;
    check_dims(e, p)?;
    let noise = NoiseStream::new(cfg.seed);
    step_with(e, p, dynamics, cfg, &noise, step_index)
}

fn step_with(
    e: &Ensemble,
    p: &dyn Potential,
    dynamics: &Dynamics,
    cfg: &StepConfig,
    noise: &NoiseStream,
    step_index: u64,
) -> Result<Ensemble> {
    let d = e.dim();
    let precond = Preconditioners::compute(e, &dynamics.scheme)?;
    let finite = match &precond {
        Preconditioners::Shared(c) => c.is_finite(),
        Preconditioners::PerParticle(cs) => cs.iter().all(SymMatrix::is_finite),
    };
    if !finite {
        return Err(Error::NonFinite { step: step_index });
    }
    let mut next = vec![0.0; e.as_flat().len()];
    drift_into(e, p, &precond, dynamics.correction_factor(e), &mut next);

    let diffusion_scale = cfg.noise_scale * (2.0 * cfg.dt).sqrt();
    let roots: Vec<SymMatrix> = match &precond {
        Preconditioners::Shared(c) => vec![psd_sqrt(c, cfg.eigen_floor)?],
        Preconditioners::PerParticle(cs) => cs.iter().map(|c| psd_sqrt(c, cfg.eigen_floor)).collect::<Result<_>>()?,
    };
    let mut xi = vec![0.0; d];
    let mut kick = vec![0.0; d];
    for (j, (u, n)) in e.particles().zip(next.chunks_exact_mut(d)).enumerate() {
        noise.fill(step_index, j, &mut xi);
        roots[j.min(roots.len() - 1)].mul_vec_into(&xi, &mut kick);
        for ((ni, ui), ki) in n.iter_mut().zip(u).zip(&kick) {
            *ni = ui + *ni * cfg.dt + diffusion_scale * ki;
        }
    }
    if !next.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { step: step_index });
    }
    Ensemble::from_flat(d, next)
}

/// Recorded ensemble snapshots of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dt: f64,
    steps: Vec<u64>,
    snapshots: Vec<Ensemble>,
}

impl Trajectory {
    /// Assembles a trajectory from snapshots at the given step indices.
    pub fn new(dt: f64, steps: Vec<u64>, snapshots: Vec<Ensemble>) -> Result<Self> {
        if steps.len() != snapshots.len() {
            return Err(Error::BadDimension {
                expected: snapshots.len(),
                got: steps.len(),
            });
        }
        let first = snapshots.first().ok_or(Error::EmptyEnsemble)?;
        for s in &snapshots {
            if s.dim() != first.dim() {
                return Err(Error::BadDimension {
                    expected: first.dim(),
                    got: s.dim(),
                });
            }
            if s.n_particles() != first.n_particles() {
                return Err(Error::BadDimension {
                    expected: first.n_particles(),
                    got: s.n_particles(),
                });
            }
        }
        Ok(Self { dt, steps, snapshots })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.snapshots[0].dim()
    }

    pub fn n_particles(&self) -> usize {
        self.snapshots[0].n_particles()
    }

    pub fn snapshots(&self) -> &[Ensemble] {
        &self.snapshots
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    pub fn time(&self, i: usize) -> f64 {
        self.steps[i] as f64 * self.dt
    }

    pub fn last(&self) -> &Ensemble {
        self.snapshots.last().expect("trajectory is never empty")
    }
}

/// Runs `cfg.n_steps` steps, recording the initial state and every
/// `record_every`-th state thereafter.
pub fn simulate(
    e0: &Ensemble,
    p: &dyn Potential,
    dynamics: &Dynamics,
    cfg: &StepConfig,
    record_every: u64,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_dims(e0, p)?;
    dynamics.scheme.validate_for(e0)?;
    if record_every == 0 {
        return Err(Error::invalid("record_every", "must be at least 1"));
    }
    let noise = NoiseStream::new(cfg.seed);
    let capacity = (cfg.n_steps / record_every + 1) as usize;
    let mut steps = Vec::with_capacity(capacity);
    let mut snapshots = Vec::with_capacity(capacity);
    steps.push(0);
    snapshots.push(e0.clone());
    let mut current = e0.clone();
    for k in 0..cfg.n_steps {
        current = step_with(&current, p, dynamics, cfg, &noise, k)?;
        if (k + 1) % record_every == 0 {
            steps.push(k + 1);
            snapshots.push(current.clone());
        }
    }
    Trajectory::new(cfg.dt, steps, snapshots)
}

/// Draws `J` particles i.i.d. from `N(mean, scale²·I)` using the reserved
/// initialization stream of `seed`.
pub fn gaussian_initial_ensemble(n_particles: usize, mean: &[f64], scale: f64, seed: u64) -> Result<Ensemble> {
    if mean.is_empty() {
        return Err(Error::BadDimension { expected: 1, got: 0 });
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::invalid("scale", "must be nonnegative"));
    }
    let noise = NoiseStream::new(seed);
    let d = mean.len();
    let mut data = Vec::with_capacity(n_particles * d);
    for j in 0..n_particles {
        let xi = noise.normals(INIT_STREAM, j, d);
        data.extend(xi.iter().zip(mean).map(|(x, m)| m + scale * x));
    }
    Ensemble::from_flat(d, data)
}

/// Seeded standard normal draws for tests and synthetic data.
#[cfg(test)]
pub(crate) fn seeded_normals(seed: u64, n: usize) -> Vec<f64> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}
