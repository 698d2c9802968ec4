//! Python bindings: markets, Brownian ensembles, generators, the backward
//! solver, dual objectives and config-driven experiments.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use engine::bsde::{self, BsdeSolution, SolverConfig};
use engine::duality::{close_gap_with_subgradient, dual_objective, ModelPair};
use engine::generators::{self, ConjugateSearch, SampleGrid};
use engine::market::{simulate_wealth, MarketParams, Strategy, WealthPath};
use engine::stochastic::{check_muckenhoupt, gen_brownian, PathBatch, ProcessPath, TimeGrid};
use maxsub_cli::{Command, CliError, Experiment, ExperimentConfig};

fn err(e: engine::Error) -> PyErr {
    match e {
        engine::Error::InvalidArgument(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn cli_err(e: CliError) -> PyErr {
    match e {
        CliError::Config(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn to_json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Drift `mu`, volatility matrix `sigma` (rows per stock) and initial wealth.
#[pyclass(name = "Market", module = "maxsub", from_py_object)]
#[derive(Clone)]
struct PyMarket(MarketParams);

#[pymethods]
impl PyMarket {
    #[new]
    #[pyo3(signature = (mu, sigma, x0 = 1.0))]
    fn new(mu: Vec<f64>, sigma: Vec<Vec<f64>>, x0: f64) -> PyResult<Self> {
        MarketParams::new(mu, sigma, x0).map(PyMarket).map_err(err)
    }

    /// One stock driven by one Brownian motion.
    #[staticmethod]
    #[pyo3(signature = (mu, sigma, x0 = 1.0))]
    fn single(mu: f64, sigma: f64, x0: f64) -> PyResult<Self> {
        MarketParams::single(mu, sigma, x0).map(PyMarket).map_err(err)
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.0.theta().to_vec()
    }

    #[getter]
    fn x0(&self) -> f64 {
        self.0.x0()
    }

    #[getter]
    fn stocks(&self) -> usize {
        self.0.stocks()
    }

    fn __repr__(&self) -> String {
        format!("Market(mu={:?}, theta={:?}, x0={})", self.0.mu(), self.0.theta(), self.0.x0())
    }
}

/// Brownian increments on a uniform grid, reproducible from the seed.
#[pyclass(name = "Paths", module = "maxsub")]
struct PyPaths(PathBatch);

#[pymethods]
impl PyPaths {
    #[new]
    #[pyo3(signature = (horizon, steps, paths, dim = 1, seed = 0))]
    fn new(horizon: f64, steps: usize, paths: usize, dim: usize, seed: u64) -> PyResult<Self> {
        let grid = TimeGrid::new(horizon, steps).map_err(err)?;
        gen_brownian(grid, paths, dim, seed).map(PyPaths).map_err(err)
    }

    #[getter]
    fn paths(&self) -> usize {
        self.0.paths()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.grid().steps()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.0.grid().dt()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed()
    }

    /// `W_T` of coordinate `j` on every path.
    #[pyo3(signature = (j = 0))]
    fn terminal(&self, j: usize) -> PyResult<Vec<f64>> {
        if j >= self.0.dim() {
            return Err(PyValueError::new_err(format!("coordinate {j} out of range")));
        }
        Ok(self.0.terminal(j))
    }
}

#[pyclass(name = "Utility", module = "maxsub", from_py_object)]
#[derive(Clone)]
struct PyUtility(engine::Utility);

#[pymethods]
impl PyUtility {
    #[staticmethod]
    fn log() -> Self {
        PyUtility(engine::Utility::Log)
    }

    #[staticmethod]
    fn power(r: f64) -> PyResult<Self> {
        engine::Utility::power(r).map(PyUtility).map_err(err)
    }

    #[staticmethod]
    fn exponential(r: f64) -> PyResult<Self> {
        engine::Utility::exponential(r).map(PyUtility).map_err(err)
    }

    fn __call__(&self, x: f64) -> f64 {
        self.0.u(x)
    }

    fn inverse(&self, v: f64) -> f64 {
        self.0.inverse(v)
    }

    /// Certainty equivalent `u^{-1}(mean u(h))` and its delta-method error.
    fn certainty_equivalent(&self, h: Vec<f64>) -> PyResult<(f64, f64)> {
        bsde::certainty_equivalent_value(&self.0, &h).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Utility({:?})", self.0)
    }
}

#[pyclass(name = "Generator", module = "maxsub", from_py_object)]
#[derive(Clone)]
struct PyGenerator(engine::Generator);

#[pymethods]
impl PyGenerator {
    #[staticmethod]
    fn zero() -> Self {
        PyGenerator(engine::Generator::zero())
    }

    #[staticmethod]
    fn quadratic(coef: f64) -> PyResult<Self> {
        engine::Generator::quadratic(coef).map(PyGenerator).map_err(err)
    }

    #[staticmethod]
    fn norm(coef: f64) -> PyResult<Self> {
        engine::Generator::norm(coef).map(PyGenerator).map_err(err)
    }

    #[staticmethod]
    fn relative_quadratic(coef: f64) -> PyResult<Self> {
        engine::Generator::relative_quadratic(coef).map(PyGenerator).map_err(err)
    }

    #[staticmethod]
    fn certainty_equivalent(utility: &PyUtility) -> PyResult<Self> {
        generators::make_ce_generator(utility.0).map(PyGenerator).map_err(err)
    }

    /// Certainty-equivalent form of the g-expectation with generator `base`.
    #[staticmethod]
    fn g_expectation(base: &PyGenerator, utility: &PyUtility) -> PyResult<Self> {
        generators::transform_g_expectation(base.0.clone(), utility.0)
            .map(PyGenerator)
            .map_err(err)
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name()
    }

    fn __call__(&self, y: f64, z: Vec<f64>) -> f64 {
        self.0.eval(y, &z)
    }

    /// `g*(beta, q)`; `inf` outside the effective domain.
    fn conjugate(&self, beta: f64, q: Vec<f64>) -> f64 {
        generators::conjugate(&self.0, beta, &q, &ConjugateSearch::default()).value()
    }

    /// `(beta, q)` in the subdifferential at `(y, z)`.
    fn subgradient(&self, y: f64, z: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        generators::subgradient(&self.0, y, &z).map_err(err)
    }

    /// Sampled structural condition checks as a dict.
    #[pyo3(signature = (dim = 1))]
    fn check_conditions<'py>(&self, py: Python<'py>, dim: usize) -> PyResult<Bound<'py, PyAny>> {
        let grid = SampleGrid {
            dim,
            ..SampleGrid::default()
        };
        let report = generators::verify_conditions(&self.0, &grid);
        json_to_py(py, &to_json(&report)?)
    }

    fn __repr__(&self) -> String {
        format!("Generator({})", self.0.name())
    }
}

#[pyclass(name = "Wealth", module = "maxsub")]
struct PyWealth(WealthPath);

#[pymethods]
impl PyWealth {
    fn terminal(&self) -> Vec<f64> {
        self.0.terminal()
    }

    #[getter]
    fn min(&self) -> f64 {
        self.0.min()
    }

    #[getter]
    fn absorbed_paths(&self) -> usize {
        self.0.absorbed_paths
    }
}

#[pyclass(name = "Solution", module = "maxsub")]
struct PySolution(BsdeSolution);

#[pymethods]
impl PySolution {
    #[getter]
    fn y0(&self) -> f64 {
        self.0.y0
    }

    #[getter]
    fn y0_std_error(&self) -> f64 {
        self.0.y0_std_error
    }

    /// `Y` at grid node `i` on every path.
    fn y(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.0.y.nodes() {
            return Err(PyValueError::new_err(format!("node {i} out of range")));
        }
        Ok(self.0.y.cross_section(i, 0))
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &to_json(&self.0.summary())?)
    }
}

/// Wealth of a constant-fraction strategy.
#[pyfunction]
fn simulate(fraction: Vec<f64>, market: &PyMarket, paths: &PyPaths) -> PyResult<PyWealth> {
    simulate_wealth(&Strategy::ConstantFraction(fraction), &market.0, &paths.0)
        .map(PyWealth)
        .map_err(err)
}

/// Solves `dY = g dt - Z dW`, `Y_T = h` by least-squares regression.
#[pyfunction]
#[pyo3(signature = (generator, h, wealth, paths, degree = None))]
fn solve(
    generator: &PyGenerator,
    h: Vec<f64>,
    wealth: &PyWealth,
    paths: &PyPaths,
    degree: Option<usize>,
) -> PyResult<PySolution> {
    let mut config = SolverConfig::default();
    if let Some(d) = degree {
        config.basis = engine::RegressionBasis::polynomial(d).with_state(config.basis.state);
    }
    bsde::solve_backward(&generator.0, &h, &wealth.0, &paths.0, &config)
        .map(PySolution)
        .map_err(err)
}

/// Dual objective of the constant model `(beta, q)`; `inf` when infeasible.
#[pyfunction]
fn dual_value(generator: &PyGenerator, beta: f64, q: Vec<f64>, h: Vec<f64>, paths: &PyPaths) -> PyResult<(f64, f64)> {
    let model = ModelPair::constant(&paths.0, beta, q).map_err(err)?;
    let v = dual_objective(&model, &generator.0, &h, &paths.0).map_err(err)?;
    Ok((v.value(), v.std_error()))
}

/// `(dual, primal, relative_gap)` at the subgradient model of a solution.
#[pyfunction]
fn subgradient_gap(solution: &PySolution, generator: &PyGenerator, paths: &PyPaths) -> PyResult<(f64, f64, f64)> {
    let entry = close_gap_with_subgradient(&solution.0, &generator.0, &paths.0).map_err(err)?;
    Ok((entry.dual.value(), entry.primal, entry.relative_gap))
}

/// `A_p` estimate for constant market price of risk `theta` at node `tau`.
#[pyfunction]
#[pyo3(signature = (theta, p, paths, tau = 0))]
fn muckenhoupt<'py>(
    py: Python<'py>,
    theta: Vec<f64>,
    p: f64,
    paths: &PyPaths,
    tau: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let theta = ProcessPath::constant(paths.0.paths(), paths.0.nodes(), theta).with_predictable(true);
    let est = check_muckenhoupt(&theta, p, tau, &paths.0).map_err(err)?;
    json_to_py(py, &to_json(&est)?)
}

/// Runs a command of the experiment runner on a TOML or JSON configuration
/// (a path or the text itself) and returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (config, command = "run"))]
fn run_experiment<'py>(py: Python<'py>, config: &str, command: &str) -> PyResult<Bound<'py, PyAny>> {
    let commands = [
        Command::Simulate,
        Command::Primal,
        Command::Dual,
        Command::Gap,
        Command::Characterize,
        Command::CheckConditions,
        Command::Muckenhoupt,
        Command::Run,
    ];
    let cmd = commands
        .into_iter()
        .find(|c| c.name() == command)
        .ok_or_else(|| PyValueError::new_err(format!("unknown command {command:?}")))?;
    let path = std::path::Path::new(config);
    let cfg = if path.is_file() {
        ExperimentConfig::load(path)
    } else if config.trim_start().starts_with('{') {
        ExperimentConfig::from_json(config)
    } else {
        ExperimentConfig::from_toml(config)
    }
    .map_err(cli_err)?;
    cfg.validate().map_err(cli_err)?;
    let text = py
        .detach(|| Experiment::new(cfg)?.run(cmd)?.to_json())
        .map_err(cli_err)?;
    json_to_py(py, &text)
}

#[pymodule]
fn maxsub(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMarket>()?;
    m.add_class::<PyPaths>()?;
    m.add_class::<PyUtility>()?;
    m.add_class::<PyGenerator>()?;
    m.add_class::<PyWealth>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(dual_value, m)?)?;
    m.add_function(wrap_pyfunction!(subgradient_gap, m)?)?;
    m.add_function(wrap_pyfunction!(muckenhoupt, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
