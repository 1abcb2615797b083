//! Post-processing of trajectories: pooled moments with ESS-based errors,
//! Gaussian KL tracking, the variance-bias study and the divergence check.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dynamics::{gaussian_initial_ensemble, simulate, Dynamics, StepConfig, Trajectory};
use crate::ensemble::{
    block_self_derivative_max, default_fd_step, divergence_correction, divergence_fd_oracle, CovarianceScheme, Ensemble,
};
use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::noise::NoiseStream;
use crate::potentials::{GaussianPotential, TargetMoments};

/// Minimum number of snapshots kept after burn-in.
pub const MIN_RETAINED_SNAPSHOTS: usize = 10;

/// Leave-one-out blocks must not move by more than this per unit change of
/// their own particle.
pub const LEAVE_ONE_OUT_SELF_DERIVATIVE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: Vec<f64>,
    pub covariance: SymMatrix,
    pub n_samples_raw: usize,
    pub ess: f64,
    /// Standard error of each mean component, `sqrt(var/ESS)`.
    pub mean_stderr: Vec<f64>,
    /// Standard error of each marginal variance, `var·sqrt(2/ESS)`.
    pub var_stderr: Vec<f64>,
}

/// Biased autocovariance at all lags of `x` around `center`, via zero-padded FFT.
fn autocovariance(planner: &mut FftPlanner<f64>, x: &[f64], center: f64) -> Vec<f64> {
    let n = x.len();
    let len = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|v| Complex::new(v - center, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    planner.plan_fft_forward(len).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let norm = 1.0 / (len as f64 * n as f64);
    buf[..n].iter().map(|c| c.re * norm).collect()
}

/// Effective sample size of a scalar observed along several exchangeable
/// chains of equal length.
///
/// Autocovariances are centered on the pooled mean and averaged over chains;
/// the integrated autocorrelation time is summed over consecutive lag pairs
/// until the first nonpositive pair (initial positive sequence). The result
/// is clamped to `[1, total draws]`.
pub fn effective_sample_size<C: AsRef<[f64]>>(chains: &[C]) -> f64 {
    let total: usize = chains.iter().map(|c| c.as_ref().len()).sum();
    if total == 0 {
        return 0.0;
    }
    let n = chains.iter().map(|c| c.as_ref().len()).min().unwrap_or(0);
    if n < 2 {
        return total as f64;
    }
    let center = chains.iter().flat_map(|c| c.as_ref()[..n].iter()).sum::<f64>() / (n * chains.len()) as f64;
    let mut planner = FftPlanner::new();
    let mut acov = vec![0.0; n];
    for c in chains {
        for (a, v) in acov
            .iter_mut()
            .zip(autocovariance(&mut planner, &c.as_ref()[..n], center))
        {
            *a += v;
        }
    }
    let gamma0 = acov[0] / chains.len() as f64;
    // variance at round-off level of the data counts as constant
    let magnitude = chains
        .iter()
        .flat_map(|c| c.as_ref().iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if !(gamma0 > (64.0 * f64::EPSILON * magnitude).powi(2)) {
        return 1.0;
    }
    let gamma0 = acov[0];
    let rho = |t: usize| acov[t] / gamma0;
    let mut tau = -1.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 1;
    }
    let draws = (n * chains.len()) as f64;
    (draws / tau.max(1e-12)).clamp(1.0, draws)
}

/// Moments pooled over particles and the snapshots after burn-in.
pub fn pooled_moments(traj: &Trajectory, burn_in_fraction: f64) -> Result<MomentEstimate> {
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(Error::invalid("burn_in_fraction", "must lie in [0, 1)"));
    }
    let skip = (burn_in_fraction * traj.len() as f64).floor() as usize;
    let kept = &traj.snapshots()[skip..];
    if kept.len() < MIN_RETAINED_SNAPSHOTS {
        return Err(Error::InsufficientData(format!(
            "{} snapshots retained after burn-in, need at least {MIN_RETAINED_SNAPSHOTS}",
            kept.len()
        )));
    }
    let d = traj.dim();
    let j = traj.n_particles();
    let n = kept.len() * j;
    let points = || kept.iter().flat_map(Ensemble::particles);
    let mean = linalg::mean_of(points(), d);
    let covariance = linalg::centered_covariance(points(), &mean, (n - 1) as f64);

    let ess = (0..d)
        .map(|c| {
            let chains: Vec<Vec<f64>> = (0..j)
                .map(|p| kept.iter().map(|s| s.particle(p)[c]).collect())
                .collect();
            effective_sample_size(&chains)
        })
        .fold(f64::INFINITY, f64::min);
    let var = covariance.diag();
    Ok(MomentEstimate {
        mean_stderr: var.iter().map(|v| (v / ess).sqrt()).collect(),
        var_stderr: var.iter().map(|v| v * (2.0 / ess).sqrt()).collect(),
        mean,
        covariance,
        n_samples_raw: n,
        ess,
    })
}

/// `KL(N(m1, c1) ‖ N(m2, c2))`.
pub fn gaussian_kl(m1: &[f64], c1: &SymMatrix, m2: &[f64], c2: &SymMatrix) -> Result<f64> {
    let d = m1.len();
    if m2.len() != d || c1.dim() != d || c2.dim() != d {
        return Err(Error::BadDimension {
            expected: d,
            got: c2.dim(),
        });
    }
    let (c2_inv, logdet2) = c2.inverse_and_logdet()?;
    let (_, logdet1) = c1.inverse_and_logdet()?;
    let trace: f64 = (0..d)
        .map(|i| (0..d).map(|k| c2_inv.get(i, k) * c1.get(k, i)).sum::<f64>())
        .sum();
    let diff: Vec<f64> = m2.iter().zip(m1).map(|(a, b)| a - b).collect();
    let quad: f64 = diff.iter().zip(c2_inv.mul_vec(&diff)).map(|(a, b)| a * b).sum();
    Ok((0.5 * (trace + quad - d as f64 + logdet2 - logdet1)).max(0.0))
}

/// One window of a KL trace. Degenerate windows carry `kl = +∞`, which is
/// serialized as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlPoint {
    pub time: f64,
    #[serde(with = "infinite_as_null")]
    pub kl: f64,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Gaussian-fit KL divergence to the target over consecutive windows of
/// `window` snapshots, pooled over particles. A trailing partial window is
/// dropped; `time` is that of the window's last snapshot.
pub fn kl_trace(traj: &Trajectory, target: &TargetMoments, window: usize) -> Result<Vec<KlPoint>> {
    if window < MIN_RETAINED_SNAPSHOTS {
        return Err(Error::invalid(
            "window",
            format!("must be at least {MIN_RETAINED_SNAPSHOTS} snapshots"),
        ));
    }
    if target.mean.len() != traj.dim() {
        return Err(Error::BadDimension {
            expected: traj.dim(),
            got: target.mean.len(),
        });
    }
    let d = traj.dim();
    let mut out = Vec::new();
    for (w, chunk) in traj.snapshots().chunks_exact(window).enumerate() {
        let points = || chunk.iter().flat_map(Ensemble::particles);
        let n = chunk.len() * traj.n_particles();
        let mean = linalg::mean_of(points(), d);
        let cov = linalg::centered_covariance(points(), &mean, (n - 1) as f64);
        let magnitude = points().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = (64.0 * f64::EPSILON * magnitude).powi(2);
        let kl = if cov.diag().iter().any(|&v| !(v > floor)) {
            f64::INFINITY
        } else {
            gaussian_kl(&mean, &cov, &target.mean, &target.covariance).unwrap_or(f64::INFINITY)
        };
        out.push(KlPoint {
            time: traj.time((w + 1) * window - 1),
            kl,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasStudyConfig {
    pub j_list: Vec<usize>,
    pub b: f64,
    pub dt: f64,
    pub n_steps: u64,
    pub seed: u64,
    pub record_every: u64,
    pub burn_in_fraction: f64,
}

impl BiasStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.j_list.is_empty() {
            return Err(Error::invalid("J-list", "must not be empty"));
        }
        if let Some(j) = self.j_list.iter().find(|&&j| j < 3) {
            return Err(Error::invalid("J-list", format!("every J must be at least 3, got {j}")));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::invalid("b", "must be positive"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::invalid("burn_in_fraction", "must lie in [0, 1)"));
        }
        StepConfig::new(self.dt, self.n_steps, self.seed).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasStudyRow {
    #[serde(rename = "J")]
    pub j: usize,
    pub sigma2_hat: f64,
    pub sigma2_pred: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BiasStudyReport {
    pub rows: Vec<BiasStudyRow>,
}

/// Predicted stationary variance of the uncorrected dynamics for a 1D
/// Gaussian target of variance `b²`.
pub fn predicted_uncorrected_variance(j: usize, b: f64) -> f64 {
    (j as f64 - 2.0) / j as f64 * b * b
}

/// Runs the uncorrected dynamics on `N(0, b²)` for each ensemble size and
/// compares the pooled variance with `(J−2)/J·b²`.
pub fn bias_study(cfg: &BiasStudyConfig) -> Result<BiasStudyReport> {
    cfg.validate()?;
    let target = GaussianPotential::centered_1d(cfg.b)?;
    let dynamics = Dynamics::uncorrected(CovarianceScheme::Full)?;
    let step = StepConfig::new(cfg.dt, cfg.n_steps, cfg.seed)?;
    let rows = cfg
        .j_list
        .par_iter()
        .map(|&j| {
            let e0 = gaussian_initial_ensemble(j, &[0.0], cfg.b, cfg.seed)?;
            let traj = simulate(&e0, &target, &dynamics, &step, cfg.record_every)?;
            let est = pooled_moments(&traj, cfg.burn_in_fraction)?;
            Ok(BiasStudyRow {
                j,
                sigma2_hat: est.covariance.get(0, 0),
                sigma2_pred: predicted_uncorrected_variance(j, cfg.b),
                stderr: est.var_stderr[0],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BiasStudyReport { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceCheckConfig {
    /// `(d, J)` pairs.
    pub cases: Vec<(usize, usize)>,
    pub trials: usize,
    /// Central-difference step; `None` uses [`default_fd_step`] per ensemble.
    pub h: Option<f64>,
    pub tol: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl DivergenceCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cases.is_empty() {
            return Err(Error::invalid("cases", "must not be empty"));
        }
        for &(d, j) in &self.cases {
            if d == 0 || j < 2 {
                return Err(Error::invalid("cases", format!("need d >= 1 and J >= 2, got {d}:{j}")));
            }
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be at least 1"));
        }
        if let Some(h) = self.h {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::invalid("h", "must be positive"));
            }
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("tol", "must be nonnegative"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha", "must lie strictly inside (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceCheckRow {
    pub d: usize,
    #[serde(rename = "J")]
    pub j: usize,
    pub scheme: String,
    /// Relative sup-norm error for `full`/`regularized`; largest absolute
    /// self-derivative for `leave_one_out`.
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DivergenceCheckReport {
    pub rows: Vec<DivergenceCheckRow>,
}

impl DivergenceCheckReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Ensemble used by the divergence check. Trial 0 is the lattice
/// `u^(j)_a = 2j + a` (so `{0, 2}` for `d = 1, J = 2`); later trials are
/// standard normal draws keyed by `(seed, d, J, trial)`.
pub fn divergence_trial_ensemble(d: usize, j: usize, trial: usize, seed: u64) -> Result<Ensemble> {
    if trial == 0 {
        return Ensemble::from_flat(d, (0..j * d).map(|i| (2 * (i / d) + i % d) as f64).collect());
    }
    let stream = ((d as u64) << 32) | j as u64;
    Ensemble::from_flat(d, NoiseStream::new(seed).normals(stream, trial, j * d))
}

fn rel_sup_error(approx: &[Vec<f64>], exact: &[Vec<f64>]) -> f64 {
    let mut err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (a, e) in approx.iter().zip(exact) {
        for (x, y) in a.iter().zip(e) {
            err = err.max((x - y).abs());
            scale = scale.max(y.abs());
        }
    }
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

struct TrialErrors {
    full: f64,
    regularized: f64,
    leave_one_out: Option<f64>,
}

fn divergence_trial(d: usize, j: usize, trial: usize, cfg: &DivergenceCheckConfig) -> Result<TrialErrors> {
    let e = divergence_trial_ensemble(d, j, trial, cfg.seed)?;
    let h = cfg.h.unwrap_or_else(|| default_fd_step(&e));
    let exact = divergence_correction(&e, &CovarianceScheme::Full);
    let full = rel_sup_error(&divergence_fd_oracle(&e, &CovarianceScheme::Full, h)?, &exact);

    let reg = CovarianceScheme::regularized(cfg.alpha, SymMatrix::identity(d))?;
    let scaled: Vec<Vec<f64>> = exact
        .iter()
        .map(|v| v.iter().map(|x| (1.0 - cfg.alpha) * x).collect())
        .collect();
    let regularized = rel_sup_error(&divergence_fd_oracle(&e, &reg, h)?, &scaled);

    let leave_one_out = if j >= 3 {
        Some(block_self_derivative_max(&e, &CovarianceScheme::LeaveOneOut, h)?)
    } else {
        None
    };
    Ok(TrialErrors {
        full,
        regularized,
        leave_one_out,
    })
}

/// Compares the finite-difference divergence of the diffusion matrix with the
/// closed form for every case and trial. Failures are reported as rows, not
/// errors.
pub fn divergence_check(cfg: &DivergenceCheckConfig) -> Result<DivergenceCheckReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &(d, j) in &cfg.cases {
        let trials = (0..cfg.trials)
            .into_par_iter()
            .map(|t| divergence_trial(d, j, t, cfg))
            .collect::<Result<Vec<_>>>()?;
        let worst = |f: fn(&TrialErrors) -> f64| trials.iter().map(f).fold(0.0, f64::max);
        let full = worst(|t| t.full);
        let regularized = worst(|t| t.regularized);
        let row = |scheme: &str, err: f64, pass: bool| DivergenceCheckRow {
            d,
            j,
            scheme: scheme.to_string(),
            max_rel_err: err,
            pass,
        };
        rows.push(row("full", full, full <= cfg.tol));
        rows.push(row("regularized", regularized, regularized <= cfg.tol));
        if j >= 3 {
            let loo = worst(|t| t.leave_one_out.unwrap_or(0.0));
            rows.push(row("leave_one_out", loo, loo <= LEAVE_ONE_OUT_SELF_DERIVATIVE_TOL));
        }
    }
    Ok(DivergenceCheckReport { rows })
}
