//! Python bindings: ensembles, targets, dynamics, simulation and the
//! diagnostics, with plain lists of floats on the Python side.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ipsampler::{
    diagnostics, io, CovarianceScheme, DoubleWellPotential, DynamicsVariant, Error, GaussianPotential, Potential,
    StepConfig, SymMatrix,
};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NonFinite { .. } | Error::NumericalFailure(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn sym(rows: &[Vec<f64>]) -> PyResult<SymMatrix> {
    SymMatrix::from_rows(rows).map_err(to_py)
}

fn scheme_from(name: Option<&str>, alpha: f64, c0_scale: f64, d: usize) -> PyResult<CovarianceScheme> {
    match name.unwrap_or("full") {
        "full" => Ok(CovarianceScheme::Full),
        "regularized" => CovarianceScheme::regularized(alpha, SymMatrix::scaled_identity(d, c0_scale)).map_err(to_py),
        "leave_one_out" => Ok(CovarianceScheme::LeaveOneOut),
        other => Err(PyValueError::new_err(format!(
            "unknown scheme `{other}` (full | regularized | leave_one_out)"
        ))),
    }
}

/// A particle ensemble of `J` points in `d` dimensions.
#[pyclass(frozen)]
struct Ensemble {
    inner: ipsampler::Ensemble,
}

#[pymethods]
impl Ensemble {
    #[new]
    fn new(particles: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: ipsampler::Ensemble::new(&particles).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (n_particles, mean, scale = 1.0, seed = 0))]
    fn gaussian(n_particles: usize, mean: Vec<f64>, scale: f64, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: ipsampler::gaussian_initial_ensemble(n_particles, &mean, scale, seed).map_err(to_py)?,
        })
    }

    #[getter]
    fn n_particles(&self) -> usize {
        self.inner.n_particles()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn particles(&self) -> Vec<Vec<f64>> {
        self.inner.to_vecs()
    }

    fn mean(&self) -> Vec<f64> {
        self.inner.mean().to_vec()
    }

    fn covariance(&self) -> Vec<Vec<f64>> {
        self.inner.covariance().to_rows()
    }

    /// Mean and covariance of the ensemble with particle `j` removed.
    fn leave_one_out(&self, j: usize) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let (m, c) = self.inner.leave_one_out(j).map_err(to_py)?;
        Ok((m, c.to_rows()))
    }

    #[pyo3(signature = (scheme = None, alpha = 0.1, c0_scale = 1.0))]
    fn divergence_correction(&self, scheme: Option<&str>, alpha: f64, c0_scale: f64) -> PyResult<Vec<Vec<f64>>> {
        let s = scheme_from(scheme, alpha, c0_scale, self.inner.dim())?;
        Ok(ipsampler::divergence_correction(&self.inner, &s))
    }

    #[pyo3(signature = (scheme = None, alpha = 0.1, c0_scale = 1.0, h = None))]
    fn divergence_fd_oracle(
        &self,
        scheme: Option<&str>,
        alpha: f64,
        c0_scale: f64,
        h: Option<f64>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let s = scheme_from(scheme, alpha, c0_scale, self.inner.dim())?;
        let h = h.unwrap_or_else(|| ipsampler::ensemble::default_fd_step(&self.inner));
        ipsampler::divergence_fd_oracle(&self.inner, &s, h).map_err(to_py)
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        io::write_ensemble_csv(&self.inner, &mut buf).map_err(to_py)?;
        Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
    }

    fn __repr__(&self) -> String {
        format!("Ensemble(J={}, d={})", self.inner.n_particles(), self.inner.dim())
    }
}

/// A target density `π ∝ exp(−Ψ)`.
#[pyclass(frozen)]
struct Target {
    inner: Box<dyn Potential>,
}

#[pymethods]
impl Target {
    #[staticmethod]
    fn gaussian(mean: Vec<f64>, covariance: Vec<Vec<f64>>) -> PyResult<Self> {
        let p = GaussianPotential::new(mean, sym(&covariance)?).map_err(to_py)?;
        Ok(Self { inner: Box::new(p) })
    }

    #[staticmethod]
    fn gaussian_1d(b: f64) -> PyResult<Self> {
        let p = GaussianPotential::centered_1d(b).map_err(to_py)?;
        Ok(Self { inner: Box::new(p) })
    }

    #[staticmethod]
    fn double_well() -> Self {
        Self {
            inner: Box::new(DoubleWellPotential),
        }
    }

    /// Bayesian linear-regression posterior from a CSV file with header
    /// `x_0,...,x_{d-1},y`.
    #[staticmethod]
    fn regression(path: std::path::PathBuf, gamma: f64, sigma0: f64) -> PyResult<Self> {
        let p = ipsampler::load_regression(path, gamma, sigma0).map_err(to_py)?;
        Ok(Self { inner: Box::new(p) })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn grad(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.grad_psi(&u).map_err(to_py)
    }

    fn value(&self, u: Vec<f64>) -> Option<f64> {
        self.inner.value(&u)
    }

    /// `(mean, covariance)` when known in closed form.
    fn moments(&self) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
        self.inner.target_moments().map(|t| (t.mean, t.covariance.to_rows()))
    }
}

#[pyclass(frozen)]
struct Dynamics {
    inner: ipsampler::Dynamics,
}

#[pymethods]
impl Dynamics {
    /// `variant` is `uncorrected`, `corrected` or `leave_one_out`; `scheme`
    /// defaults to `full` (or `leave_one_out` for that variant).
    #[new]
    #[pyo3(signature = (variant = "corrected", scheme = None, alpha = 0.1, c0_scale = 1.0, d = 1))]
    fn new(variant: &str, scheme: Option<&str>, alpha: f64, c0_scale: f64, d: usize) -> PyResult<Self> {
        let variant: DynamicsVariant = variant.parse().map_err(to_py)?;
        let scheme = match (variant, scheme) {
            (DynamicsVariant::LeaveOneOut, None) => CovarianceScheme::LeaveOneOut,
            _ => scheme_from(scheme, alpha, c0_scale, d)?,
        };
        Ok(Self {
            inner: ipsampler::Dynamics::new(variant, scheme).map_err(to_py)?,
        })
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.variant().name()
    }

    #[getter]
    fn scheme(&self) -> &'static str {
        self.inner.scheme().name()
    }

    fn drift(&self, ensemble: &Ensemble, target: &Target) -> PyResult<Vec<Vec<f64>>> {
        ipsampler::drift(&ensemble.inner, target.inner.as_ref(), &self.inner).map_err(to_py)
    }
}

#[pyclass(frozen)]
struct Trajectory {
    inner: ipsampler::Trajectory,
}

#[pymethods]
impl Trajectory {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn steps(&self) -> Vec<u64> {
        self.inner.steps().to_vec()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        (0..self.inner.len()).map(|i| self.inner.time(i)).collect()
    }

    fn snapshot(&self, i: usize) -> PyResult<Ensemble> {
        self.inner
            .snapshots()
            .get(i)
            .map(|e| Ensemble { inner: e.clone() })
            .ok_or_else(|| PyValueError::new_err(format!("snapshot {i} out of range")))
    }

    fn last(&self) -> Ensemble {
        Ensemble {
            inner: self.inner.last().clone(),
        }
    }

    #[pyo3(signature = (burn_in_fraction = 0.25))]
    fn pooled_moments<'py>(&self, py: Python<'py>, burn_in_fraction: f64) -> PyResult<Bound<'py, PyDict>> {
        let est = ipsampler::pooled_moments(&self.inner, burn_in_fraction).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("mean", est.mean)?;
        out.set_item("covariance", est.covariance.to_rows())?;
        out.set_item("n_samples_raw", est.n_samples_raw)?;
        out.set_item("ess", est.ess)?;
        out.set_item("mean_stderr", est.mean_stderr)?;
        out.set_item("var_stderr", est.var_stderr)?;
        Ok(out)
    }

    /// `(time, kl)` pairs; degenerate windows have `kl = inf`.
    fn kl_trace(&self, target: &Target, window: usize) -> PyResult<Vec<(f64, f64)>> {
        let moments = target
            .inner
            .target_moments()
            .ok_or_else(|| PyValueError::new_err("target has no closed-form moments"))?;
        let trace = ipsampler::kl_trace(&self.inner, &moments, window).map_err(to_py)?;
        Ok(trace.into_iter().map(|p| (p.time, p.kl)).collect())
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        io::write_trajectory_csv(&self.inner, &mut buf).map_err(to_py)?;
        Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
    }
}

#[pyfunction]
fn empirical_covariance(points: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(ipsampler::empirical_covariance(&points).map_err(to_py)?.to_rows())
}

#[pyfunction]
fn sample_mean(points: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    ipsampler::sample_mean(&points).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (matrix, eigen_floor = 0.0))]
fn psd_sqrt(matrix: Vec<Vec<f64>>, eigen_floor: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(ipsampler::psd_sqrt(&sym(&matrix)?, eigen_floor)
        .map_err(to_py)?
        .to_rows())
}

#[pyfunction]
#[pyo3(signature = (initial, target, dynamics, dt, n_steps, seed = 0, record_every = 1, eigen_floor = 0.0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    initial: &Ensemble,
    target: &Target,
    dynamics: &Dynamics,
    dt: f64,
    n_steps: u64,
    seed: u64,
    record_every: u64,
    eigen_floor: f64,
) -> PyResult<Trajectory> {
    let mut cfg = StepConfig::new(dt, n_steps, seed).map_err(to_py)?;
    cfg.eigen_floor = eigen_floor;
    let traj = ipsampler::simulate(
        &initial.inner,
        target.inner.as_ref(),
        &dynamics.inner,
        &cfg,
        record_every,
    )
    .map_err(to_py)?;
    Ok(Trajectory { inner: traj })
}

#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (j_list, b = 1.0, dt = 0.005, n_steps = 400_000, seed = 7, record_every = 10, burn_in_fraction = 0.25))]
fn bias_study<'py>(
    py: Python<'py>,
    j_list: Vec<usize>,
    b: f64,
    dt: f64,
    n_steps: u64,
    seed: u64,
    record_every: u64,
    burn_in_fraction: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let report = ipsampler::bias_study(&ipsampler::BiasStudyConfig {
        j_list,
        b,
        dt,
        n_steps,
        seed,
        record_every,
        burn_in_fraction,
    })
    .map_err(to_py)?;
    report
        .rows
        .into_iter()
        .map(|r| {
            let row = PyDict::new(py);
            row.set_item("J", r.j)?;
            row.set_item("sigma2_hat", r.sigma2_hat)?;
            row.set_item("sigma2_pred", r.sigma2_pred)?;
            row.set_item("stderr", r.stderr)?;
            Ok(row)
        })
        .collect()
}

#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (cases, trials = 50, h = None, tol = 1e-6, alpha = 0.1, seed = 0))]
fn divergence_check<'py>(
    py: Python<'py>,
    cases: Vec<(usize, usize)>,
    trials: usize,
    h: Option<f64>,
    tol: f64,
    alpha: f64,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let report = ipsampler::divergence_check(&ipsampler::DivergenceCheckConfig {
        cases,
        trials,
        h,
        tol,
        alpha,
        seed,
    })
    .map_err(to_py)?;
    report
        .rows
        .into_iter()
        .map(|r| {
            let row = PyDict::new(py);
            row.set_item("d", r.d)?;
            row.set_item("J", r.j)?;
            row.set_item("scheme", r.scheme)?;
            row.set_item("max_rel_err", r.max_rel_err)?;
            row.set_item("pass", r.pass)?;
            Ok(row)
        })
        .collect()
}

#[pyfunction]
fn predicted_uncorrected_variance(j: usize, b: f64) -> f64 {
    diagnostics::predicted_uncorrected_variance(j, b)
}

#[pymodule]
fn ipsampler_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Ensemble>()?;
    m.add_class::<Target>()?;
    m.add_class::<Dynamics>()?;
    m.add_class::<Trajectory>()?;
    m.add_function(wrap_pyfunction!(empirical_covariance, m)?)?;
    m.add_function(wrap_pyfunction!(sample_mean, m)?)?;
    m.add_function(wrap_pyfunction!(psd_sqrt, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(bias_study, m)?)?;
    m.add_function(wrap_pyfunction!(divergence_check, m)?)?;
    m.add_function(wrap_pyfunction!(predicted_uncorrected_variance, m)?)?;
    Ok(())
}
