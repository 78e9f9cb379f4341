//! Python bindings: objectives, particle runs, the density solver, metrics,
//! verification reports and config-driven runs.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use cbo_lab_core as core;
use core::config::parse_config;
use core::particles::{init_ensemble, run, RunOptions, Sampler};
use core::{ConsensusParams, GridDensity as CoreGrid, Measure1d};

fn err(e: core::CboError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Objective", module = "cbo_lab", skip_from_py_object, frozen)]
#[derive(Clone)]
struct Objective {
    inner: core::ObjectiveSpec,
}

#[pymethods]
impl Objective {
    #[staticmethod]
    #[pyo3(signature = (shift = 1.0, dim = 1))]
    fn rastrigin(shift: f64, dim: usize) -> PyResult<Self> {
        Ok(Self {
            inner: core::rastrigin(shift, dim).map_err(err)?,
        })
    }

    #[staticmethod]
    fn quadratic(center: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: core::quadratic(&center).map_err(err)?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_owned()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn known_minimizer(&self) -> Option<Vec<f64>> {
        self.inner.known_minimizer.clone()
    }

    fn __call__(&self, x: Vec<f64>) -> PyResult<f64> {
        if x.len() != self.inner.dim {
            return Err(PyValueError::new_err(format!(
                "expected {} coordinates",
                self.inner.dim
            )));
        }
        Ok(self.inner.eval(&x))
    }

    fn __repr__(&self) -> String {
        format!("Objective({}, dim={})", self.inner.name(), self.inner.dim)
    }
}

#[pyclass(name = "CBOParams", module = "cbo_lab", skip_from_py_object, get_all, set_all)]
#[derive(Clone)]
struct PyCboParams {
    lambda_: f64,
    sigma: f64,
    alpha: f64,
    dt: f64,
    t_final: f64,
    n_particles: usize,
    seed: u64,
}

impl PyCboParams {
    fn core(&self) -> PyResult<core::CBOParams> {
        let p = core::CBOParams {
            lambda: self.lambda_,
            sigma: self.sigma,
            alpha: self.alpha,
            dt: self.dt,
            t_final: self.t_final,
            n_particles: self.n_particles,
            seed: self.seed,
        };
        p.validate().map_err(err)?;
        Ok(p)
    }
}

#[pymethods]
impl PyCboParams {
    #[new]
    #[pyo3(signature = (lambda_ = 1.0, sigma = 1.0, alpha = 1e15, dt = 0.01, t_final = 100.0, n_particles = 100, seed = 0))]
    fn new(
        lambda_: f64,
        sigma: f64,
        alpha: f64,
        dt: f64,
        t_final: f64,
        n_particles: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let p = Self {
            lambda_,
            sigma,
            alpha,
            dt,
            t_final,
            n_particles,
            seed,
        };
        p.core()?;
        Ok(p)
    }

    fn __repr__(&self) -> String {
        format!(
            "CBOParams(lambda_={}, sigma={}, alpha={:e}, dt={}, t_final={}, n_particles={}, seed={})",
            self.lambda_, self.sigma, self.alpha, self.dt, self.t_final, self.n_particles, self.seed
        )
    }
}

#[pyclass(name = "RegularizationParams", module = "cbo_lab", from_py_object, frozen)]
#[derive(Clone, Copy)]
struct PyReg {
    inner: core::RegularizationParams,
}

#[pymethods]
impl PyReg {
    #[new]
    fn new(epsilon: f64, radius: f64) -> PyResult<Self> {
        Ok(Self {
            inner: core::RegularizationParams::new(epsilon, radius).map_err(err)?,
        })
    }

    /// `R = 1 / epsilon`.
    #[staticmethod]
    fn linked(epsilon: f64) -> PyResult<Self> {
        Ok(Self {
            inner: core::RegularizationParams::linked(epsilon).map_err(err)?,
        })
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }

    #[getter]
    fn radius(&self) -> f64 {
        self.inner.radius
    }
}

#[pyclass(name = "GridDensity", module = "cbo_lab", skip_from_py_object, frozen)]
#[derive(Clone)]
struct PyGrid {
    inner: CoreGrid,
}

#[pymethods]
impl PyGrid {
    #[staticmethod]
    fn gaussian(dim: usize, cells: usize, half_width: f64, mean: Vec<f64>, sd: f64) -> PyResult<Self> {
        Ok(Self {
            inner: CoreGrid::gaussian(dim, cells, half_width, &mean, sd).map_err(err)?,
        })
    }

    #[staticmethod]
    fn uniform(dim: usize, cells: usize, half_width: f64, low: f64, high: f64) -> PyResult<Self> {
        Ok(Self {
            inner: CoreGrid::uniform(dim, cells, half_width, low, high).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_values(dim: usize, cells: usize, half_width: f64, values: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: CoreGrid::new(dim, cells, half_width, values).map_err(err)?,
        })
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn cells(&self) -> usize {
        self.inner.cells_per_axis()
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.inner.dx()
    }

    fn centers(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len()).map(|k| self.inner.center(k)).collect()
    }

    fn mass(&self) -> f64 {
        self.inner.mass()
    }

    fn lp_norm(&self, p: f64) -> PyResult<f64> {
        core::lp_norm(&self.inner, p).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "SolverConfig", module = "cbo_lab", skip_from_py_object, frozen)]
#[derive(Clone)]
struct PySolverConfig {
    inner: core::SolverConfig,
}

#[pymethods]
impl PySolverConfig {
    #[new]
    #[pyo3(signature = (params, reg, half_width, cells, t_final, dim = 1, cfl_safety = 0.4, snapshot_interval = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        params: &PyCboParams,
        reg: &PyReg,
        half_width: f64,
        cells: usize,
        t_final: f64,
        dim: usize,
        cfl_safety: f64,
        snapshot_interval: Option<f64>,
    ) -> PyResult<Self> {
        let inner = core::SolverConfig {
            cbo: params.core()?,
            reg: reg.inner,
            dim,
            half_width,
            cells,
            cfl_safety,
            t_final,
            snapshot_interval,
        };
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }
}

#[pyclass(name = "ParticleRun", module = "cbo_lab", frozen, get_all)]
struct ParticleRun {
    /// `(t, consensus, variance, best_f)` per recorded step.
    records: Vec<(f64, Vec<f64>, f64, f64)>,
    final_consensus: Vec<f64>,
    positions: Vec<f64>,
}

#[pyfunction]
fn consensus(points: Vec<Vec<f64>>, objective: &Objective, alpha: f64) -> PyResult<Vec<f64>> {
    let dim = objective.inner.dim;
    if points.iter().any(|p| p.len() != dim) {
        return Err(PyValueError::new_err(format!("points must have {dim} coordinates")));
    }
    let flat: Vec<f64> = points.concat();
    let params = ConsensusParams::new(alpha).map_err(err)?;
    core::consensus_of_particles(&flat, dim, &objective.inner, params).map_err(err)
}

/// Runs the particle optimizer from `U(low, high)^d` coordinates, or from
/// the regularized dynamics when `reg` is given.
#[pyfunction]
#[pyo3(signature = (objective, params, low, high, stride = 1, reg = None))]
fn run_particles(
    py: Python<'_>,
    objective: &Objective,
    params: &PyCboParams,
    low: f64,
    high: f64,
    stride: usize,
    reg: Option<PyReg>,
) -> PyResult<ParticleRun> {
    let p = params.core()?;
    let f = objective.inner.clone();
    let out = py
        .detach(|| {
            let ens = init_ensemble(&Sampler::Uniform { low, high }, &p, f.dim)?;
            run(
                ens,
                &f,
                &p,
                RunOptions {
                    stride,
                    regularization: reg.as_ref().map(|r| &r.inner),
                },
                &mut [],
            )
        })
        .map_err(err)?;
    Ok(ParticleRun {
        records: out
            .records
            .into_iter()
            .map(|r| (r.t, r.consensus, r.variance, r.best_f))
            .collect(),
        final_consensus: out.final_consensus,
        positions: out.ensemble.positions().to_vec(),
    })
}

/// Snapshots of the regularized density, starting with the mollified datum.
#[pyfunction]
fn solve(py: Python<'_>, rho0: &PyGrid, objective: &Objective, config: &PySolverConfig) -> PyResult<Vec<PyGrid>> {
    let sol = py
        .detach(|| core::solve(&rho0.inner, &objective.inner, &config.inner, &mut []))
        .map_err(err)?;
    Ok(sol.snapshots.into_iter().map(|inner| PyGrid { inner }).collect())
}

#[pyfunction]
fn wasserstein2_samples(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    core::wasserstein2_1d(Measure1d::Samples(&a), Measure1d::Samples(&b)).map_err(err)
}

#[pyfunction]
fn wasserstein2_samples_grid(samples: Vec<f64>, rho: &PyGrid) -> PyResult<f64> {
    core::wasserstein2_1d(Measure1d::Samples(&samples), Measure1d::Grid(&rho.inner)).map_err(err)
}

/// Invariant report of a solver run, as JSON.
#[pyfunction]
fn verify_pde_run(py: Python<'_>, config: &PySolverConfig, objective: &Objective, rho0: &PyGrid) -> PyResult<String> {
    let report = py
        .detach(|| core::verify::verify_pde_run(&config.inner, &objective.inner, &rho0.inner))
        .map_err(err)?;
    Ok(report.to_json())
}

/// Validates a JSON run configuration and returns it normalized.
#[pyfunction]
fn validate_config(text: &str) -> PyResult<String> {
    Ok(parse_config(text).map_err(err)?.to_json())
}

/// Executes a JSON run configuration, writing into `output_dir`. Returns
/// whether every hard check passed.
#[pyfunction]
fn run_config(py: Python<'_>, text: &str, output_dir: PathBuf) -> PyResult<bool> {
    let cfg = parse_config(text).map_err(err)?;
    let (outcome, _) = py.detach(|| core::runner::run_to_dir(&cfg, &output_dir)).map_err(err)?;
    Ok(outcome.passed)
}

#[pymodule]
#[pyo3(name = "cbo_lab")]
fn cbo_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Objective>()?;
    m.add_class::<PyCboParams>()?;
    m.add_class::<PyReg>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PySolverConfig>()?;
    m.add_class::<ParticleRun>()?;
    m.add_function(wrap_pyfunction!(consensus, m)?)?;
    m.add_function(wrap_pyfunction!(run_particles, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein2_samples, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein2_samples_grid, m)?)?;
    m.add_function(wrap_pyfunction!(verify_pde_run, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
