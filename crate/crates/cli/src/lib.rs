//! Command implementations behind the `ipsampler` binary.
//!
//! Each command writes its artifacts to disk and its human-readable report to
//! the supplied writer, and returns a [`CliError`] whose [`CliError::exit_code`]
//! is the process exit status.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use ipsampler::diagnostics::{divergence_trial_ensemble, MIN_RETAINED_SNAPSHOTS};
use ipsampler::{
    bias_study, divergence_check, divergence_correction, gaussian_initial_ensemble, io, kl_trace, load_regression,
    pooled_moments, simulate, BiasStudyConfig, BiasStudyReport, CovarianceScheme, DivergenceCheckConfig,
    DivergenceCheckReport, Dynamics, DynamicsVariant, Ensemble, Error, KlPoint, Potential, StepConfig, SymMatrix,
    Trajectory,
};

pub use config::RunConfig;
use config::{build_dynamics, SchemeName};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// Bad flags, configuration or input data.
    Usage(String),
    /// A verification command ran but its check failed.
    Verification(String),
    /// The simulation produced non-finite values or a factorization failed.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Verification(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } | Error::NumericalFailure(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("i/o error: {e}"))
    }
}

fn usage(field: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("invalid {field}: {message}"))
}

/// Summary written by `sample` and `regression-demo`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub variant: String,
    pub scheme: String,
    #[serde(rename = "J")]
    pub j: usize,
    pub d: usize,
    pub dt: f64,
    pub n_steps: u64,
    pub burn_in_fraction: f64,
    pub seed: u64,
    pub pooled_mean: Vec<f64>,
    pub pooled_cov: SymMatrix,
    pub ess: f64,
    pub mean_stderr: Vec<f64>,
    pub var_stderr: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_cov: Option<SymMatrix>,
    pub kl_trace: Vec<KlPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_var: Option<Vec<f64>>,
    pub wall_time_s: f64,
}

impl RunSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| usage("summary", e))
    }
}

/// Window used for the KL trace when none is configured: twenty windows over
/// the recorded trajectory, never fewer than the minimum window size.
pub fn default_kl_window(n_snapshots: usize) -> usize {
    (n_snapshots / 20).max(MIN_RETAINED_SNAPSHOTS)
}

struct SampleRun<'a> {
    potential: &'a dyn Potential,
    dynamics: &'a Dynamics,
    initial: &'a Ensemble,
    step: &'a StepConfig,
    record_every: u64,
    burn_in_fraction: f64,
    kl_window: Option<usize>,
}

impl SampleRun<'_> {
    fn run(&self) -> Result<(Trajectory, RunSummary), CliError> {
        let started = Instant::now();
        let traj = simulate(
            self.initial,
            self.potential,
            self.dynamics,
            self.step,
            self.record_every,
        )?;
        let est = pooled_moments(&traj, self.burn_in_fraction)?;
        let target = self.potential.target_moments();
        let kl = match &target {
            Some(t) => {
                let window = self.kl_window.unwrap_or_else(|| default_kl_window(traj.len()));
                if traj.len() >= window {
                    kl_trace(&traj, t, window)?
                } else {
                    Vec::new()
                }
            }
            None => Vec::new(),
        };
        let summary = RunSummary {
            variant: self.dynamics.variant().name().to_string(),
            scheme: self.dynamics.scheme().name().to_string(),
            j: self.initial.n_particles(),
            d: self.initial.dim(),
            dt: self.step.dt,
            n_steps: self.step.n_steps,
            burn_in_fraction: self.burn_in_fraction,
            seed: self.step.seed,
            pooled_mean: est.mean.clone(),
            pooled_cov: est.covariance.clone(),
            ess: est.ess,
            mean_stderr: est.mean_stderr.clone(),
            var_stderr: est.var_stderr.clone(),
            target_mean: target.as_ref().map(|t| t.mean.clone()),
            target_cov: target.as_ref().map(|t| t.covariance.clone()),
            kl_trace: kl,
            z_mean: None,
            z_var: None,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        Ok((traj, summary))
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, CliError> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file =
        std::fs::File::create(path).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", path.display())))?;
    Ok(std::io::BufWriter::new(file))
}

fn write_json(path: &Path, text: &str) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let mut w = create(path)?;
    io::write_trajectory_csv(traj, &mut w)?;
    w.flush()?;
    Ok(())
}

/// `ipsampler sample --config FILE`.
pub fn cmd_sample(config_path: &Path, out: &mut dyn Write) -> Result<RunSummary, CliError> {
    let cfg = RunConfig::load(config_path)?;
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    let run = cfg.resolve(base)?;
    let (traj, summary) = SampleRun {
        potential: run.potential.as_ref(),
        dynamics: &run.dynamics,
        initial: &run.initial,
        step: &run.step,
        record_every: run.record_every,
        burn_in_fraction: run.burn_in_fraction,
        kl_window: run.kl_window,
    }
    .run()?;
    write_trajectory(&run.trajectory_path, &traj)?;
    write_json(&run.summary_path, &summary.to_json())?;
    writeln!(
        out,
        "{} / {}: J = {}, d = {}, ESS = {:.1}",
        summary.variant, summary.scheme, summary.j, summary.d, summary.ess
    )?;
    for (c, m) in summary.pooled_mean.iter().enumerate() {
        writeln!(
            out,
            "  comp_{c}: mean {m:.6} ± {:.6}, var {:.6} ± {:.6}",
            summary.mean_stderr[c],
            summary.pooled_cov.get(c, c),
            summary.var_stderr[c]
        )?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasStudyArgs {
    pub j_list: Vec<usize>,
    pub b: f64,
    pub dt: f64,
    pub n_steps: u64,
    pub seed: u64,
    pub record_every: u64,
    pub burn_in_fraction: f64,
    pub out: Option<PathBuf>,
}

/// `ipsampler bias-study`.
pub fn cmd_bias_study(args: &BiasStudyArgs, out: &mut dyn Write) -> Result<BiasStudyReport, CliError> {
    let report = bias_study(&BiasStudyConfig {
        j_list: args.j_list.clone(),
        b: args.b,
        dt: args.dt,
        n_steps: args.n_steps,
        seed: args.seed,
        record_every: args.record_every,
        burn_in_fraction: args.burn_in_fraction,
    })?;
    if let Some(path) = &args.out {
        write_json(path, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    writeln!(
        out,
        "{:>6}  {:>12}  {:>12}  {:>10}",
        "J", "sigma2_hat", "sigma2_pred", "stderr"
    )?;
    for r in &report.rows {
        writeln!(
            out,
            "{:>6}  {:>12.6}  {:>12.6}  {:>10.6}",
            r.j, r.sigma2_hat, r.sigma2_pred, r.stderr
        )?;
    }
    Ok(report)
}

/// Parses `d:J,d:J,...`.
pub fn parse_cases(text: &str) -> Result<Vec<(usize, usize)>, CliError> {
    text.split(',')
        .map(|item| {
            let item = item.trim();
            let (d, j) = item
                .split_once(':')
                .ok_or_else(|| usage("cases", format!("`{item}` is not of the form d:J")))?;
            let d = d
                .trim()
                .parse()
                .map_err(|_| usage("cases", format!("bad d in `{item}`")))?;
            let j = j
                .trim()
                .parse()
                .map_err(|_| usage("cases", format!("bad J in `{item}`")))?;
            Ok((d, j))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyDivergenceArgs {
    pub cases: Vec<(usize, usize)>,
    pub trials: usize,
    pub h: Option<f64>,
    pub tol: f64,
    pub alpha: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

/// `ipsampler verify-divergence`. Returns the report on success and a
/// [`CliError::Verification`] when any row fails; the report file is written
/// either way.
pub fn cmd_verify_divergence(
    args: &VerifyDivergenceArgs,
    out: &mut dyn Write,
) -> Result<DivergenceCheckReport, CliError> {
    let report = divergence_check(&DivergenceCheckConfig {
        cases: args.cases.clone(),
        trials: args.trials,
        h: args.h,
        tol: args.tol,
        alpha: args.alpha,
        seed: args.seed,
    })?;
    for &(d, j) in &args.cases {
        let e = divergence_trial_ensemble(d, j, 0, args.seed)?;
        writeln!(out, "case {d}:{j} trial 0 ensemble {:?}", e.to_vecs())?;
        writeln!(
            out,
            "case {d}:{j} trial 0 correction {:?}",
            divergence_correction(&e, &CovarianceScheme::Full)
        )?;
    }
    for r in &report.rows {
        writeln!(
            out,
            "d = {} J = {} {:<13} max error {:.3e} {}",
            r.d,
            r.j,
            r.scheme,
            r.max_rel_err,
            if r.pass { "PASS" } else { "FAIL" }
        )?;
    }
    if let Some(path) = &args.out {
        write_json(path, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    if report.all_pass() {
        Ok(report)
    } else {
        let failed = report.rows.iter().filter(|r| !r.pass).count();
        Err(CliError::Verification(format!("{failed} divergence check(s) failed")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDemoArgs {
    pub data: PathBuf,
    pub gamma: f64,
    pub sigma0: f64,
    pub variant: DynamicsVariant,
    pub scheme: Option<SchemeName>,
    pub alpha: f64,
    pub j: usize,
    pub dt: f64,
    pub n_steps: u64,
    pub seed: u64,
    pub record_every: u64,
    pub burn_in_fraction: f64,
    pub out: PathBuf,
    pub trajectory: Option<PathBuf>,
}

/// `ipsampler regression-demo`.
pub fn cmd_regression_demo(args: &RegressionDemoArgs, out: &mut dyn Write) -> Result<RunSummary, CliError> {
    if !(args.gamma > 0.0 && args.gamma.is_finite()) {
        return Err(usage("gamma", "must be positive"));
    }
    if !(args.sigma0 > 0.0 && args.sigma0.is_finite()) {
        return Err(usage("sigma0", "must be positive"));
    }
    if !(0.0..1.0).contains(&args.burn_in_fraction) {
        return Err(usage("burn-in", "must lie in [0, 1)"));
    }
    if args.record_every == 0 {
        return Err(usage("record-every", "must be at least 1"));
    }
    let potential = load_regression(&args.data, args.gamma, args.sigma0)?;
    let d = potential.dim();
    let dynamics = build_dynamics(args.variant, args.scheme, args.alpha, 1.0, d)?;
    if args.variant == DynamicsVariant::LeaveOneOut && args.j < 3 {
        return Err(usage("J", "leave_one_out needs J >= 3"));
    }
    let step = StepConfig::new(args.dt, args.n_steps, args.seed)?;
    let initial = gaussian_initial_ensemble(args.j, &vec![0.0; d], 1.0, args.seed)?;
    let (traj, mut summary) = SampleRun {
        potential: &potential,
        dynamics: &dynamics,
        initial: &initial,
        step: &step,
        record_every: args.record_every,
        burn_in_fraction: args.burn_in_fraction,
        kl_window: None,
    }
    .run()?;
    let target = potential.target_moments().expect("regression posterior is Gaussian");
    let z_mean: Vec<f64> = (0..d)
        .map(|c| (summary.pooled_mean[c] - target.mean[c]) / summary.mean_stderr[c])
        .collect();
    let z_var: Vec<f64> = (0..d)
        .map(|c| (summary.pooled_cov.get(c, c) - target.covariance.get(c, c)) / summary.var_stderr[c])
        .collect();
    summary.z_mean = Some(z_mean);
    summary.z_var = Some(z_var);
    if let Some(path) = &args.trajectory {
        write_trajectory(path, &traj)?;
    }
    write_json(&args.out, &summary.to_json())?;
    writeln!(
        out,
        "{:>6}  {:>12}  {:>12}  {:>8}  {:>12}  {:>12}  {:>8}",
        "comp", "mean", "target", "z", "var", "target", "z"
    )?;
    for c in 0..d {
        writeln!(
            out,
            "{:>6}  {:>12.6}  {:>12.6}  {:>8.2}  {:>12.6e}  {:>12.6e}  {:>8.2}",
            c,
            summary.pooled_mean[c],
            target.mean[c],
            summary.z_mean.as_ref().unwrap()[c],
            summary.pooled_cov.get(c, c),
            target.covariance.get(c, c),
            summary.z_var.as_ref().unwrap()[c]
        )?;
    }
    Ok(summary)
}
