//! Run configuration for `ipsampler sample`.
//!
//! The file is TOML. Unknown keys are rejected. Relative paths are resolved
//! against the directory containing the configuration file.
//!
//! ```toml
//! [target]
//! kind = "gaussian"          # gaussian | double_well | regression
//! b = 1.0                    # or: mean = [...], covariance = [[...]]
//!
//! [dynamics]
//! variant = "corrected"      # uncorrected | corrected | leave_one_out
//! scheme = "full"            # full | regularized
//! alpha = 0.1
//! c0_scale = 1.0
//!
//! [ensemble]
//! J = 4
//! d = 1
//! init = { kind = "gaussian", mean = 0.0, scale = 1.0 }   # or { kind = "file", path = "init.csv" }
//!
//! [step]
//! dt = 0.01
//! n_steps = 1000
//! seed = 7
//! record_every = 1
//! burn_in_fraction = 0.25
//! eigen_floor = 0.0
//!
//! [output]
//! trajectory = "trajectory.csv"
//! summary = "summary.json"
//! kl_window = 20
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use ipsampler::{
    gaussian_initial_ensemble, io, load_regression, CovarianceScheme, DoubleWellPotential, Dynamics, DynamicsVariant,
    Ensemble, Error, GaussianPotential, Potential, StepConfig, SymMatrix,
};

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub target: TargetSpec,
    #[serde(default)]
    pub dynamics: DynamicsSpec,
    pub ensemble: EnsembleSpec,
    pub step: StepSpec,
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Gaussian {
        b: Option<f64>,
        mean: Option<Vec<f64>>,
        covariance: Option<Vec<Vec<f64>>>,
    },
    DoubleWell,
    Regression {
        csv_path: PathBuf,
        gamma: f64,
        sigma0: f64,
    },
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Uncorrected,
    Corrected,
    LeaveOneOut,
}

impl From<VariantName> for DynamicsVariant {
    fn from(v: VariantName) -> Self {
        match v {
            VariantName::Uncorrected => DynamicsVariant::Uncorrected,
            VariantName::Corrected => DynamicsVariant::Corrected,
            VariantName::LeaveOneOut => DynamicsVariant::LeaveOneOut,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Full,
    Regularized,
    LeaveOneOut,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    pub variant: VariantName,
    pub scheme: Option<SchemeName>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub c0_scale: f64,
}

impl Default for DynamicsSpec {
    fn default() -> Self {
        Self {
            variant: VariantName::Corrected,
            scheme: None,
            alpha: default_alpha(),
            c0_scale: 1.0,
        }
    }
}

fn default_alpha() -> f64 {
    0.1
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    #[serde(rename = "J")]
    pub j: usize,
    pub d: usize,
    #[serde(default)]
    pub init: InitSpec,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Gaussian {
        #[serde(default)]
        mean: MeanSpec,
        #[serde(default = "one")]
        scale: f64,
    },
    File {
        path: PathBuf,
    },
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Gaussian {
            mean: MeanSpec::default(),
            scale: 1.0,
        }
    }
}

/// A scalar broadcast to every component, or an explicit vector.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum MeanSpec {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Default for MeanSpec {
    fn default() -> Self {
        MeanSpec::Scalar(0.0)
    }
}

impl MeanSpec {
    fn resolve(&self, d: usize) -> Result<Vec<f64>, Error> {
        match self {
            MeanSpec::Scalar(v) => Ok(vec![*v; d]),
            MeanSpec::Vector(v) if v.len() == d => Ok(v.clone()),
            MeanSpec::Vector(v) => Err(invalid(
                "ensemble.init.mean",
                format!("has {} entries, expected d = {d}", v.len()),
            )),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    pub dt: f64,
    pub n_steps: u64,
    pub seed: u64,
    #[serde(default = "one_u64")]
    pub record_every: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in_fraction: f64,
    #[serde(default)]
    pub eigen_floor: f64,
}

fn one_u64() -> u64 {
    1
}

pub fn default_burn_in() -> f64 {
    0.25
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub trajectory: PathBuf,
    pub summary: PathBuf,
    pub kl_window: Option<usize>,
}

fn invalid(field: &str, message: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Everything `sample` needs, validated and resolved.
pub struct ResolvedRun {
    pub potential: Box<dyn Potential>,
    pub dynamics: Dynamics,
    pub initial: Ensemble,
    pub step: StepConfig,
    pub record_every: u64,
    pub burn_in_fraction: f64,
    pub kl_window: Option<usize>,
    pub trajectory_path: PathBuf,
    pub summary_path: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| invalid("config", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Validates every cross-field constraint and builds the run. `base` is
    /// the directory relative paths are resolved against.
    pub fn resolve(&self, base: &Path) -> Result<ResolvedRun, Error> {
        let d = self.ensemble.d;
        let j = self.ensemble.j;
        if d == 0 {
            return Err(invalid("ensemble.d", "must be at least 1"));
        }
        if j < 2 {
            return Err(invalid("ensemble.J", "must be at least 2"));
        }
        let variant: DynamicsVariant = self.dynamics.variant.into();
        if variant == DynamicsVariant::LeaveOneOut && j < 3 {
            return Err(invalid("ensemble.J", "leave_one_out needs J >= 3"));
        }
        let s = &self.step;
        if !(0.0..1.0).contains(&s.burn_in_fraction) {
            return Err(invalid("step.burn_in_fraction", "must lie in [0, 1)"));
        }
        if s.record_every == 0 {
            return Err(invalid("step.record_every", "must be at least 1"));
        }
        let step = StepConfig {
            dt: s.dt,
            n_steps: s.n_steps,
            seed: s.seed,
            eigen_floor: s.eigen_floor,
            noise_scale: 1.0,
        };
        step.validate().map_err(|e| prefix_field(e, "step."))?;

        let potential = self.potential(base)?;
        if potential.dim() != d {
            return Err(invalid(
                "ensemble.d",
                format!("target has dimension {}, ensemble has d = {d}", potential.dim()),
            ));
        }
        let dynamics = self.dynamics(d)?;
        let initial = match &self.ensemble.init {
            InitSpec::Gaussian { mean, scale } => {
                if !(*scale >= 0.0 && scale.is_finite()) {
                    return Err(invalid("ensemble.init.scale", "must be nonnegative"));
                }
                gaussian_initial_ensemble(j, &mean.resolve(d)?, *scale, s.seed)?
            }
            InitSpec::File { path } => {
                let path = base.join(path);
                let file = std::fs::File::open(&path).map_err(|e| Error::DataError {
                    row: None,
                    column: None,
                    message: format!("cannot open {}: {e}", path.display()),
                })?;
                let e = io::read_ensemble_csv(file)?;
                if e.dim() != d || e.n_particles() != j {
                    return Err(invalid(
                        "ensemble.init.path",
                        format!(
                            "file holds J = {}, d = {}; config says J = {j}, d = {d}",
                            e.n_particles(),
                            e.dim()
                        ),
                    ));
                }
                e
            }
        };
        if let Some(w) = self.output.kl_window {
            if w < 10 {
                return Err(invalid("output.kl_window", "must be at least 10 snapshots"));
            }
        }
        Ok(ResolvedRun {
            potential,
            dynamics,
            initial,
            step,
            record_every: s.record_every,
            burn_in_fraction: s.burn_in_fraction,
            kl_window: self.output.kl_window,
            trajectory_path: base.join(&self.output.trajectory),
            summary_path: base.join(&self.output.summary),
        })
    }

    fn potential(&self, base: &Path) -> Result<Box<dyn Potential>, Error> {
        match &self.target {
            TargetSpec::Gaussian { b, mean, covariance } => match (b, mean, covariance) {
                (Some(b), None, None) => GaussianPotential::centered_1d(*b)
                    .map(|p| Box::new(p) as Box<dyn Potential>)
                    .map_err(|e| prefix_field(e, "target.")),
                (None, Some(mean), Some(cov)) => {
                    let cov = SymMatrix::from_rows(cov).map_err(|e| invalid("target.covariance", e.to_string()))?;
                    GaussianPotential::new(mean.clone(), cov)
                        .map(|p| Box::new(p) as Box<dyn Potential>)
                        .map_err(|e| invalid("target.covariance", e.to_string()))
                }
                _ => Err(invalid(
                    "target",
                    "gaussian target takes either `b` or both `mean` and `covariance`",
                )),
            },
            TargetSpec::DoubleWell => Ok(Box::new(DoubleWellPotential)),
            TargetSpec::Regression {
                csv_path,
                gamma,
                sigma0,
            } => {
                if !(*gamma > 0.0) {
                    return Err(invalid("target.gamma", "must be positive"));
                }
                if !(*sigma0 > 0.0) {
                    return Err(invalid("target.sigma0", "must be positive"));
                }
                Ok(Box::new(load_regression(base.join(csv_path), *gamma, *sigma0)?))
            }
        }
    }

    fn dynamics(&self, d: usize) -> Result<Dynamics, Error> {
        let spec = &self.dynamics;
        build_dynamics(spec.variant.into(), spec.scheme, spec.alpha, spec.c0_scale, d)
    }
}

/// Pairs a variant with its scheme. The leave-one-out variant implies the
/// leave-one-out scheme; the others default to `full`.
pub fn build_dynamics(
    variant: DynamicsVariant,
    scheme: Option<SchemeName>,
    alpha: f64,
    c0_scale: f64,
    d: usize,
) -> Result<Dynamics, Error> {
    let scheme = match (variant, scheme) {
        (DynamicsVariant::LeaveOneOut, None | Some(SchemeName::LeaveOneOut)) => CovarianceScheme::LeaveOneOut,
        (DynamicsVariant::LeaveOneOut, Some(_)) => {
            return Err(invalid("dynamics.scheme", "leave_one_out variant uses its own scheme"))
        }
        (_, None | Some(SchemeName::Full)) => CovarianceScheme::Full,
        (_, Some(SchemeName::Regularized)) => {
            if !(c0_scale > 0.0 && c0_scale.is_finite()) {
                return Err(invalid("dynamics.c0_scale", "must be positive"));
            }
            CovarianceScheme::regularized(alpha, SymMatrix::scaled_identity(d, c0_scale))
                .map_err(|e| prefix_field(e, "dynamics."))?
        }
        (_, Some(SchemeName::LeaveOneOut)) => {
            return Err(invalid(
                "dynamics.scheme",
                "leave_one_out scheme requires the leave_one_out variant",
            ))
        }
    };
    Dynamics::new(variant, scheme).map_err(|e| prefix_field(e, "dynamics."))
}

fn prefix_field(e: Error, prefix: &str) -> Error {
    match e {
        Error::InvalidParameter { field, message } => Error::InvalidParameter {
            field: format!("{prefix}{field}"),
            message,
        },
        other => other,
    }
}
