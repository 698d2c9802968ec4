//! Asset dynamics, trading strategies and wealth processes.
//!
//! Stocks follow `dS^i = S^i (mu_i dt + sigma_i dW)` with constant
//! coefficients. A strategy `pi` holds currency amounts per stock and the
//! wealth is `X_t = x + int pi sigma (theta du + dW)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::{PathBatch, ProcessPath, TimeGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams {
    mu: Vec<f64>,
    /// `n x d`, row `i` is the volatility vector of stock `i`.
    sigma: DMatrix<f64>,
    theta: Vec<f64>,
    x0: f64,
    condition_number: f64,
}

impl MarketParams {
    /// `sigma` is given row by row (`n` rows of length `d`).
    pub fn new(mu: Vec<f64>, sigma: Vec<Vec<f64>>, x0: f64) -> Result<Self> {
        let n = mu.len();
        if n == 0 || sigma.len() != n {
            return Err(Error::invalid(format!(
                "need one volatility row per stock ({} drifts, {} rows)",
                n,
                sigma.len()
            )));
        }
        let d = sigma[0].len();
        if d < n || sigma.iter().any(|r| r.len() != d) {
            return Err(Error::invalid(format!(
                "volatility must be n x d with n <= d (n = {n}, d = {d})"
            )));
        }
        if !(x0.is_finite() && x0 > 0.0) {
            return Err(Error::invalid(format!("initial capital must be positive, got {x0}")));
        }
        if mu.iter().chain(sigma.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("market coefficients must be finite"));
        }
        let sigma = DMatrix::from_fn(n, d, |i, j| sigma[i][j]);
        let sst = &sigma * sigma.transpose();
        let sv = sst.clone().svd(false, false).singular_values;
        let smax = sv.max();
        let smin = sv.min();
        if !(smin > 1e-14 * smax.max(1e-300)) {
            return Err(Error::invalid("sigma sigma' is singular"));
        }
        let inv = sst
            .try_inverse()
            .ok_or_else(|| Error::invalid("sigma sigma' is singular"))?;
        let theta = sigma.transpose() * inv * DVector::from_vec(mu.clone());
        Ok(MarketParams {
            mu,
            sigma,
            theta: theta.iter().cloned().collect(),
            x0,
            condition_number: smax / smin,
        })
    }

    /// One stock driven by one Brownian motion.
    pub fn single(mu: f64, sigma: f64, x0: f64) -> Result<Self> {
        Self::new(vec![mu], vec![vec![sigma]], x0)
    }

    pub fn stocks(&self) -> usize {
        self.mu.len()
    }

    pub fn dim(&self) -> usize {
        self.sigma.ncols()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Market price of risk `sigma'(sigma sigma')^{-1} mu`.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    /// Condition number of `sigma sigma'`.
    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }

    /// `v' sigma` for an `n`-vector `v`.
    pub fn times_sigma(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|j| (0..self.stocks()).map(|i| v[i] * self.sigma[(i, j)]).sum())
            .collect()
    }

    /// Process `theta` on every node of a path batch.
    pub fn theta_process(&self, paths: &PathBatch) -> ProcessPath {
        ProcessPath::constant(paths.paths(), paths.nodes(), self.theta.clone())
    }
}

/// How the wealth is stepped over one grid interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepScheme {
    /// `X_{i+1} = X_i exp((nu.theta - |nu|^2/2) dt + nu.dW)` with `nu = pi~ sigma`.
    ExactLognormal,
    /// `X_{i+1} = X_i + pi sigma (theta dt + dW)`, absorbed at zero.
    Euler,
}

/// Amounts `pi(t, X)` on a lattice: piecewise constant in time, linear in wealth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackTable {
    pub times: Vec<f64>,
    pub wealth: Vec<f64>,
    /// `amounts[k * wealth.len() + l]` is the amount vector at `(times[k], wealth[l])`.
    pub amounts: Vec<Vec<f64>>,
}

impl FeedbackTable {
    fn validate(&self, n: usize) -> Result<()> {
        if self.times.is_empty() || self.wealth.is_empty() {
            return Err(Error::invalid("feedback table needs at least one time and wealth level"));
        }
        if self.amounts.len() != self.times.len() * self.wealth.len() {
            return Err(Error::invalid("feedback table size mismatch"));
        }
        if self.amounts.iter().any(|a| a.len() != n) {
            return Err(Error::invalid("feedback amounts must have one entry per stock"));
        }
        if self.wealth.windows(2).any(|w| w[0] >= w[1]) || self.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("feedback lattice must be strictly increasing"));
        }
        Ok(())
    }

    pub fn amount(&self, t: f64, x: f64, out: &mut [f64]) {
        let k = self.times.partition_point(|s| *s <= t).saturating_sub(1);
        let nw = self.wealth.len();
        let row = &self.amounts[k * nw..(k + 1) * nw];
        if x <= self.wealth[0] || nw == 1 {
            out.copy_from_slice(&row[0]);
            return;
        }
        if x >= self.wealth[nw - 1] {
            out.copy_from_slice(&row[nw - 1]);
            return;
        }
        let l = self.wealth.partition_point(|w| *w <= x) - 1;
        let s = (x - self.wealth[l]) / (self.wealth[l + 1] - self.wealth[l]);
        for (o, (a, b)) in out.iter_mut().zip(row[l].iter().zip(&row[l + 1])) {
            *o = (1.0 - s) * a + s * b;
        }
    }
}

/// Fractions of wealth `pi~ = pi / X` per stock on every path and node.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionProcess {
    pub fractions: ProcessPath,
    pub scheme: StepScheme,
    /// Nodes where the wealth was zero; the fraction is set to zero there.
    pub absorbed_nodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    ConstantAmount(Vec<f64>),
    ConstantFraction(Vec<f64>),
    Feedback(FeedbackTable),
    FractionProcess(FractionProcess),
}

impl Strategy {
    pub fn zero(n: usize) -> Self {
        Strategy::ConstantAmount(vec![0.0; n])
    }

    pub fn stocks(&self) -> usize {
        match self {
            Strategy::ConstantAmount(a) | Strategy::ConstantFraction(a) => a.len(),
            Strategy::Feedback(t) => t.amounts.first().map_or(0, |a| a.len()),
            Strategy::FractionProcess(f) => f.fractions.width(),
        }
    }

    /// Parameters of a constant strategy, empty otherwise.
    pub fn params(&self) -> Vec<f64> {
        match self {
            Strategy::ConstantAmount(a) | Strategy::ConstantFraction(a) => a.clone(),
            _ => Vec::new(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Strategy::ConstantAmount(_) => "constant-amount",
            Strategy::ConstantFraction(_) => "constant-fraction",
            Strategy::Feedback(_) => "feedback",
            Strategy::FractionProcess(_) => "fraction-process",
        }
    }
}

/// Simulated wealth together with the integrand `nu = pi sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthPath {
    pub wealth: ProcessPath,
    /// `d`-vector `pi_i sigma` used over step `i`.
    pub integrand: ProcessPath,
    pub absorbed_paths: usize,
    pub grid: TimeGrid,
}

impl WealthPath {
    pub fn terminal(&self) -> Vec<f64> {
        self.wealth.terminal()
    }

    pub fn at(&self, m: usize, i: usize) -> f64 {
        self.wealth.scalar(m, i)
    }

    pub fn min(&self) -> f64 {
        let mut lo = f64::INFINITY;
        for m in 0..self.wealth.paths() {
            for i in 0..self.wealth.nodes() {
                lo = lo.min(self.wealth.scalar(m, i));
            }
        }
        lo
    }
}

/// Simulates the wealth of `strategy` on every path of the batch.
pub fn simulate_wealth(strategy: &Strategy, market: &MarketParams, paths: &PathBatch) -> Result<WealthPath> {
    let n = market.stocks();
    let d = market.dim();
    if paths.dim() != d {
        return Err(Error::invalid(format!(
            "path batch has dimension {}, market needs {d}",
            paths.dim()
        )));
    }
    if strategy.stocks() != n {
        return Err(Error::invalid(format!(
            "strategy has {} components, market has {n} stocks",
            strategy.stocks()
        )));
    }
    if let Strategy::Feedback(t) = strategy {
        t.validate(n)?;
    }
    if let Strategy::FractionProcess(f) = strategy {
        if f.fractions.constant_value().is_none() && f.fractions.paths() != paths.paths() {
            return Err(Error::invalid("fraction process does not match the path batch"));
        }
        if f.fractions.nodes() != paths.nodes() {
            return Err(Error::invalid("fraction process does not match the time grid"));
        }
    }
    let grid = paths.grid();
    let dt = grid.dt();
    let nodes = grid.nodes();
    let theta = market.theta();
    let x0 = market.x0();

    // buffer per path: nodes wealth values followed by nodes * d integrand values
    let stride = nodes * (1 + d);
    let combined = ProcessPath::from_paths(paths.paths(), 1, stride, |m, buf| {
        let (xs, nus) = buf.split_at_mut(nodes);
        xs[0] = x0;
        let mut amount = vec![0.0; n];
        for i in 0..nodes - 1 {
            let x = xs[i];
            let nu = &mut nus[i * d..(i + 1) * d];
            let exact_unit: Option<Vec<f64>> = match strategy {
                Strategy::ConstantFraction(f) => Some(market.times_sigma(f)),
                Strategy::FractionProcess(fp) if fp.scheme == StepScheme::ExactLognormal => {
                    Some(market.times_sigma(fp.fractions.at(m, i)))
                }
                _ => None,
            };
            if let Some(unit) = exact_unit {
                let mut drift = 0.0;
                let mut var = 0.0;
                let mut noise = 0.0;
                for j in 0..d {
                    drift += unit[j] * theta[j];
                    var += unit[j] * unit[j];
                    noise += unit[j] * paths.dw(m, i, j);
                    nu[j] = x * unit[j];
                }
                xs[i + 1] = x * ((drift - 0.5 * var) * dt + noise).exp();
                continue;
            }
            if x <= 0.0 {
                nu.iter_mut().for_each(|v| *v = 0.0);
                xs[i + 1] = 0.0;
                continue;
            }
            match strategy {
                Strategy::ConstantAmount(a) => amount.copy_from_slice(a),
                Strategy::Feedback(t) => t.amount(grid.time(i), x, &mut amount),
                Strategy::FractionProcess(fp) => {
                    for (a, f) in amount.iter_mut().zip(fp.fractions.at(m, i)) {
                        *a = f * x;
                    }
                }
                Strategy::ConstantFraction(_) => unreachable!(),
            }
            let unit = market.times_sigma(&amount);
            let mut step = 0.0;
            for j in 0..d {
                nu[j] = unit[j];
                step += unit[j] * (theta[j] * dt + paths.dw(m, i, j));
            }
            xs[i + 1] = (x + step).max(0.0);
        }
    });
    let mut wealth = Vec::with_capacity(paths.paths() * nodes);
    let mut integrand = Vec::with_capacity(paths.paths() * nodes * d);
    let mut absorbed = 0;
    for m in 0..paths.paths() {
        let buf = combined.at(m, 0);
        wealth.extend_from_slice(&buf[..nodes]);
        integrand.extend_from_slice(&buf[nodes..]);
        if buf[..nodes].iter().any(|x| *x <= 0.0) {
            absorbed += 1;
        }
    }
    Ok(WealthPath {
        wealth: ProcessPath::dense(paths.paths(), nodes, 1, wealth)?.with_predictable(false),
        integrand: ProcessPath::dense(paths.paths(), nodes, d, integrand)?,
        absorbed_paths: absorbed,
        grid: *grid,
    })
}

/// Rewrites a strategy as fractions of current wealth, `pi~ = pi / X`.
pub fn to_fraction_process(strategy: &Strategy, wealth: &WealthPath) -> Result<FractionProcess> {
    let paths = wealth.wealth.paths();
    let nodes = wealth.wealth.nodes();
    let n = strategy.stocks();
    match strategy {
        Strategy::ConstantFraction(f) => Ok(FractionProcess {
            fractions: ProcessPath::constant(paths, nodes, f.clone()),
            scheme: StepScheme::ExactLognormal,
            absorbed_nodes: 0,
        }),
        Strategy::FractionProcess(fp) => Ok(fp.clone()),
        Strategy::ConstantAmount(_) | Strategy::Feedback(_) => {
            if let Strategy::Feedback(t) = strategy {
                t.validate(n)?;
            }
            let fractions = ProcessPath::from_paths(paths, nodes, n, |m, buf| {
                let mut amount = vec![0.0; n];
                for i in 0..nodes {
                    let x = wealth.at(m, i);
                    let out = &mut buf[i * n..(i + 1) * n];
                    if x <= 0.0 {
                        out.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    match strategy {
                        Strategy::ConstantAmount(a) => amount.copy_from_slice(a),
                        Strategy::Feedback(t) => t.amount(wealth.grid.time(i), x, &mut amount),
                        _ => unreachable!(),
                    }
                    for (o, a) in out.iter_mut().zip(&amount) {
                        *o = a / x;
                    }
                }
            });
            let mut absorbed = 0;
            for m in 0..paths {
                absorbed += (0..nodes).filter(|&i| wealth.at(m, i) <= 0.0).count();
            }
            Ok(FractionProcess {
                fractions,
                scheme: StepScheme::Euler,
                absorbed_nodes: absorbed,
            })
        }
    }
}
