//! Time grids, Brownian path ensembles, stochastic exponentials and
//! Girsanov densities.
//!
//! All randomness enters through [`gen_brownian`]. Each path owns a ChaCha
//! stream selected by `(seed, path index)`, so a batch is bit-identical no
//! matter how many worker threads generate it. Every other process in the
//! crate is a deterministic function of the increments stored here.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::{fit_mean, BasisKind};
use crate::stats;

/// Uniform grid `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_i`; the last node is exactly `T`.
    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.steps as f64
        }
    }
}

/// Brownian values `W[m][i][j]` on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    grid: TimeGrid,
    paths: usize,
    dim: usize,
    seed: u64,
    values: Vec<f64>,
}

/// Simulates `paths` independent `dim`-dimensional Brownian motions.
pub fn gen_brownian(grid: TimeGrid, paths: usize, dim: usize, seed: u64) -> Result<PathBatch> {
    if paths == 0 {
        return Err(Error::invalid("path count must be at least 1"));
    }
    if dim == 0 {
        return Err(Error::invalid("Brownian dimension must be at least 1"));
    }
    let nodes = grid.nodes();
    let sqrt_dt = grid.dt().sqrt();
    let mut values = vec![0.0; paths * nodes * dim];
    values
        .par_chunks_mut(nodes * dim)
        .enumerate()
        .for_each(|(m, path)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(m as u64);
            for i in 1..nodes {
                for j in 0..dim {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    path[i * dim + j] = path[(i - 1) * dim + j] + sqrt_dt * z;
                }
            }
        });
    Ok(PathBatch {
        grid,
        paths,
        dim,
        seed,
        values,
    })
}

impl PathBatch {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn nodes(&self) -> usize {
        self.grid.nodes()
    }

    /// `W_{t_i}` on path `m`.
    pub fn w(&self, m: usize, i: usize) -> &[f64] {
        let nd = self.nodes() * self.dim;
        &self.values[m * nd + i * self.dim..m * nd + (i + 1) * self.dim]
    }

    /// Component `j` of `W_{t_{i+1}} - W_{t_i}` on path `m`.
    #[inline]
    pub fn dw(&self, m: usize, i: usize, j: usize) -> f64 {
        let base = m * self.nodes() * self.dim;
        self.values[base + (i + 1) * self.dim + j] - self.values[base + i * self.dim + j]
    }

    /// Row-major `paths x dim` increments over step `i`.
    pub fn increments(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.paths * self.dim];
        out.par_chunks_mut(self.dim).enumerate().for_each(|(m, row)| {
            for (j, r) in row.iter_mut().enumerate() {
                *r = self.dw(m, i, j);
            }
        });
        out
    }

    /// Component `j` of `W` at node `i` across all paths.
    pub fn cross_section(&self, i: usize, j: usize) -> Vec<f64> {
        (0..self.paths).map(|m| self.w(m, i)[j]).collect()
    }

    pub fn terminal(&self, j: usize) -> Vec<f64> {
        self.cross_section(self.grid.steps(), j)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    /// Same vector on every path and node.
    Constant(Vec<f64>),
    /// Row-major `[m][i][k]`.
    Dense(Vec<f64>),
}

/// A (possibly vector-valued) process sampled on every path and grid node.
///
/// When `predictable` is set the value at node `i` is the one used over the
/// step `[t_i, t_{i+1})`; the value at the last node is then irrelevant.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessPath {
    paths: usize,
    nodes: usize,
    width: usize,
    predictable: bool,
    storage: Storage,
}

impl ProcessPath {
    pub fn constant(paths: usize, nodes: usize, value: Vec<f64>) -> Self {
        ProcessPath {
            paths,
            nodes,
            width: value.len(),
            predictable: true,
            storage: Storage::Constant(value),
        }
    }

    pub fn dense(paths: usize, nodes: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != paths * nodes * width {
            return Err(Error::invalid(format!(
                "process buffer has {} entries, expected {}",
                values.len(),
                paths * nodes * width
            )));
        }
        Ok(ProcessPath {
            paths,
            nodes,
            width,
            predictable: true,
            storage: Storage::Dense(values),
        })
    }

    /// Builds a dense process path by path; `fill(m, path_buffer)` receives the
    /// `nodes * width` slice of path `m`.
    pub fn from_paths<F>(paths: usize, nodes: usize, width: usize, fill: F) -> Self
    where
        F: Fn(usize, &mut [f64]) + Sync,
    {
        let mut values = vec![0.0; paths * nodes * width];
        values
            .par_chunks_mut(nodes * width)
            .enumerate()
            .for_each(|(m, chunk)| fill(m, chunk));
        ProcessPath {
            paths,
            nodes,
            width,
            predictable: true,
            storage: Storage::Dense(values),
        }
    }

    pub fn with_predictable(mut self, predictable: bool) -> Self {
        self.predictable = predictable;
        self
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_predictable(&self) -> bool {
        self.predictable
    }

    pub fn constant_value(&self) -> Option<&[f64]> {
        match &self.storage {
            Storage::Constant(v) => Some(v),
            Storage::Dense(_) => None,
        }
    }

    #[inline]
    pub fn at(&self, m: usize, i: usize) -> &[f64] {
        match &self.storage {
            Storage::Constant(v) => v,
            Storage::Dense(v) => {
                let base = (m * self.nodes + i) * self.width;
                &v[base..base + self.width]
            }
        }
    }

    #[inline]
    pub fn scalar(&self, m: usize, i: usize) -> f64 {
        self.at(m, i)[0]
    }

    /// Component `k` at node `i` on every path.
    pub fn cross_section(&self, i: usize, k: usize) -> Vec<f64> {
        (0..self.paths).map(|m| self.at(m, i)[k]).collect()
    }

    pub fn terminal(&self) -> Vec<f64> {
        self.cross_section(self.nodes - 1, 0)
    }

    /// Largest absolute componentwise difference.
    pub fn max_abs_diff(&self, other: &ProcessPath) -> f64 {
        let mut worst = 0.0_f64;
        for m in 0..self.paths {
            for i in 0..self.nodes {
                for (a, b) in self.at(m, i).iter().zip(other.at(m, i)) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        worst
    }

    pub(crate) fn check_shape(&self, paths: &PathBatch, width: usize, what: &str) -> Result<()> {
        let paths_ok = self.constant_value().is_some() || self.paths == paths.paths();
        if !paths_ok || self.nodes != paths.nodes() || self.width != width {
            return Err(Error::invalid(format!(
                "{what}: shape ({} paths, {} nodes, width {}) does not match ({} paths, {} nodes, width {})",
                self.paths,
                self.nodes,
                self.width,
                paths.paths(),
                paths.nodes(),
                width
            )));
        }
        Ok(())
    }
}

/// `log E(int q dW)_t` with left-point increments:
/// `sum_{k<i} q_k . dW_k - 0.5 |q_k|^2 dt`.
pub fn log_stochastic_exponential(q: &ProcessPath, paths: &PathBatch) -> Result<ProcessPath> {
    q.check_shape(paths, paths.dim(), "stochastic exponential integrand")?;
    let dt = paths.grid().dt();
    let nodes = paths.nodes();
    let d = paths.dim();
    if let Some(c) = q.constant_value() {
        if c.iter().all(|v| *v == 0.0) {
            return Ok(ProcessPath::constant(paths.paths(), nodes, vec![0.0]));
        }
    }
    Ok(ProcessPath::from_paths(paths.paths(), nodes, 1, |m, out| {
        let mut acc = 0.0;
        out[0] = 0.0;
        for i in 0..nodes - 1 {
            let qi = q.at(m, i);
            let mut step = 0.0;
            let mut sq = 0.0;
            for j in 0..d {
                step += qi[j] * paths.dw(m, i, j);
                sq += qi[j] * qi[j];
            }
            acc += step - 0.5 * sq * dt;
            out[i + 1] = acc;
        }
    }))
}

/// `E(int q dW)_t = exp(int q dW - 0.5 int |q|^2 du)` on every node.
pub fn stochastic_exponential(q: &ProcessPath, paths: &PathBatch) -> Result<ProcessPath> {
    let log = log_stochastic_exponential(q, paths)?;
    exponentiate(&log, "stochastic exponential")
}

/// Running density `dQ^q/dP` restricted to `F_{t_i}`.
pub fn girsanov_weight(q: &ProcessPath, paths: &PathBatch) -> Result<ProcessPath> {
    let log = log_stochastic_exponential(q, paths)?;
    exponentiate(&log, "Girsanov weight")
}

fn exponentiate(log: &ProcessPath, what: &str) -> Result<ProcessPath> {
    if let Some(c) = log.constant_value() {
        return Ok(ProcessPath::constant(log.paths(), log.nodes(), vec![c[0].exp()]));
    }
    let nodes = log.nodes();
    let out = ProcessPath::from_paths(log.paths(), nodes, 1, |m, buf| {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = log.scalar(m, i).exp();
        }
    });
    for m in 0..log.paths() {
        let v = out.scalar(m, nodes - 1);
        if !v.is_finite() || v == 0.0 {
            return Err(Error::NumericOverflow(format!(
                "{what} is not representable on path {m} (log value {})",
                log.scalar(m, nodes - 1)
            )));
        }
    }
    Ok(out)
}

/// Result of a Muckenhoupt `A_p` estimate at a deterministic time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuckenhouptEstimate {
    /// Worst conditional expectation over the regression cells.
    pub estimate: f64,
    pub std_error: f64,
    /// Lognormal closed form, available for constant market price of risk.
    pub analytic: Option<f64>,
    /// Only deterministic grid times are checked, not all stopping times.
    pub deterministic_times_only: bool,
}

/// Estimates `E[(E_tau / E_T)^{1/(p-1)} | F_tau]` for `E = E(int theta dW)`.
///
/// With constant `theta` the ratio is independent of `F_tau` and the plain
/// sample mean is returned next to the closed form
/// `exp(|theta|^2 (T - tau) a (a + 1) / 2)`, `a = 1/(p-1)`. Otherwise the
/// ratio is regressed on `log E_tau` and the largest fitted value is reported.
pub fn check_muckenhoupt(
    theta: &ProcessPath,
    p: f64,
    tau_index: usize,
    paths: &PathBatch,
) -> Result<MuckenhouptEstimate> {
    if !(p > 1.0) {
        return Err(Error::invalid(format!("Muckenhoupt exponent must exceed 1, got {p}")));
    }
    let steps = paths.grid().steps();
    if tau_index > steps {
        return Err(Error::invalid(format!("tau index {tau_index} beyond grid end {steps}")));
    }
    let log_e = log_stochastic_exponential(theta, paths)?;
    let a = 1.0 / (p - 1.0);
    let ratio: Vec<f64> = (0..paths.paths())
        .into_par_iter()
        .map(|m| (a * (log_e.scalar(m, tau_index) - log_e.scalar(m, steps))).exp())
        .collect();
    let (mean, se) = stats::mean_and_se(&ratio);
    let grid = paths.grid();
    match theta.constant_value() {
        Some(th) => {
            let sq: f64 = th.iter().map(|v| v * v).sum();
            let remaining = grid.horizon() - grid.time(tau_index);
            let analytic = (sq * remaining * a * (a + 1.0) / 2.0).exp();
            // theta = 0 or tau = T: the ratio is identically one
            let trivial = sq == 0.0 || tau_index == steps;
            Ok(MuckenhouptEstimate {
                estimate: if trivial { 1.0 } else { mean },
                std_error: if trivial { 0.0 } else { se },
                analytic: Some(analytic),
                deterministic_times_only: true,
            })
        }
        None => {
            let state = log_e.cross_section(tau_index, 0);
            let fit = fit_mean(BasisKind::Polynomial { degree: 2 }, &state, &ratio);
            let worst = fit.fitted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Ok(MuckenhouptEstimate {
                estimate: worst.max(mean),
                std_error: se,
                analytic: None,
                deterministic_times_only: true,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(n: usize, m: usize, d: usize, seed: u64) -> PathBatch {
        gen_brownian(TimeGrid::new(1.0, n).unwrap(), m, d, seed).unwrap()
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        let g = TimeGrid::new(2.0, 3).unwrap();
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(3), 2.0);
        assert!((g.dt() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn brownian_rejects_empty() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert!(matches!(gen_brownian(g, 0, 1, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(gen_brownian(g, 1, 0, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn single_step_single_path() {
        let b = batch(1, 1, 1, 42);
        assert_eq!(b.w(0, 0)[0], 0.0);
        assert!(b.w(0, 1)[0] != 0.0);
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = batch(20, 300, 2, 7);
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| batch(20, 300, 2, 7));
        assert_eq!(a, b);
        let c = batch(20, 300, 2, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn increments_are_centered() {
        let b = batch(10, 20_000, 1, 3);
        let dt = b.grid().dt();
        for i in 0..10 {
            let inc = b.increments(i);
            let (mean, _) = stats::mean_and_se(&inc);
            assert!(mean.abs() < 4.0 * (dt / 20_000.0).sqrt());
        }
    }

    #[test]
    fn zero_integrand_gives_unit_exponential() {
        let b = batch(5, 50, 1, 1);
        let q = ProcessPath::constant(50, 6, vec![0.0]);
        let e = stochastic_exponential(&q, &b).unwrap();
        for m in 0..50 {
            for i in 0..6 {
                assert_eq!(e.scalar(m, i), 1.0);
            }
        }
        let w = girsanov_weight(&q, &b).unwrap();
        assert_eq!(w.scalar(3, 5), 1.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let b = batch(5, 50, 1, 1);
        let q = ProcessPath::constant(50, 6, vec![0.1, 0.2]);
        assert!(stochastic_exponential(&q, &b).is_err());
        let q = ProcessPath::constant(50, 7, vec![0.1]);
        assert!(stochastic_exponential(&q, &b).is_err());
    }

    #[test]
    fn huge_integrand_overflows() {
        let b = batch(4, 10, 1, 1);
        let q = ProcessPath::constant(10, 5, vec![1e4]);
        assert!(matches!(girsanov_weight(&q, &b), Err(Error::NumericOverflow(_))));
    }

    #[test]
    fn exponential_is_positive_and_starts_at_one() {
        let b = batch(8, 100, 2, 9);
        let q = ProcessPath::from_paths(100, 9, 2, |m, buf| {
            for (k, v) in buf.iter_mut().enumerate() {
                *v = 0.1 * ((m + k) as f64).sin();
            }
        });
        let e = stochastic_exponential(&q, &b).unwrap();
        for m in 0..100 {
            assert_eq!(e.scalar(m, 0), 1.0);
            for i in 0..9 {
                assert!(e.scalar(m, i) > 0.0);
            }
        }
    }

    #[test]
    fn muckenhoupt_trivial_cases() {
        let b = batch(10, 1000, 1, 5);
        let zero = ProcessPath::constant(1000, 11, vec![0.0]);
        let est = check_muckenhoupt(&zero, 2.0, 0, &b).unwrap();
        assert_eq!(est.estimate, 1.0);
        let th = ProcessPath::constant(1000, 11, vec![0.2]);
        let at_end = check_muckenhoupt(&th, 2.0, 10, &b).unwrap();
        assert_eq!(at_end.estimate, 1.0);
        assert!(matches!(check_muckenhoupt(&th, 1.0, 0, &b), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn muckenhoupt_analytic_branch_is_nonincreasing_in_tau() {
        let b = batch(10, 10, 1, 5);
        let th = ProcessPath::constant(10, 11, vec![0.3]);
        let mut prev = f64::INFINITY;
        for tau in 0..=10 {
            let a = check_muckenhoupt(&th, 1.5, tau, &b).unwrap().analytic.unwrap();
            assert!(a <= prev);
            prev = a;
        }
        assert!((prev - 1.0).abs() < 1e-15);
    }
}
