//! First-order optimality diagnostics: the adjoint equation, the identity
//! `p theta + p q* + k = 0` and Fenchel-Young equalities along a solution.
//!
//! The adjoint `(p, k)` solves, under `P`,
//! `dp = [-(theta p + p q + k).nu - k.q] dt + k dW`, `p_T = D^beta_{0,T}`,
//! with `nu = pi~ sigma` the fraction strategy times the volatility. This is
//! the `Q^q` form `dp = -(theta p + p q + k).nu dt + k dW^Q` rewritten with
//! `dW^Q = dW - q dt`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsde::{state_section, BsdeSolution};
use crate::duality::ModelPair;
use crate::error::{Error, Result};
use crate::generators::{conjugate, ConjugateSearch, ConjugateValue, Generator};
use crate::market::{FractionProcess, MarketParams, WealthPath};
use crate::regression::{fit_joint, RegressionBasis};
use crate::stochastic::{PathBatch, ProcessPath, TimeGrid};

#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub p: ProcessPath,
    pub k: ProcessPath,
    pub terminal: Vec<f64>,
    /// Nodes with `p <= 0`.
    pub nonpositive_nodes: usize,
    pub regularized_steps: usize,
    pub grid: TimeGrid,
}

impl AdjointSolution {
    /// Fraction of nodes with `p > 0`.
    pub fn positive_fraction(&self) -> f64 {
        let total = self.p.paths() * self.grid.nodes();
        1.0 - self.nonpositive_nodes as f64 / total as f64
    }
}

/// Solves the adjoint equation with terminal value `D^beta_{0,T}` of the model.
pub fn solve_adjoint(
    model: &ModelPair,
    pi_tilde: &FractionProcess,
    market: &MarketParams,
    wealth: &WealthPath,
    paths: &PathBatch,
    basis: &RegressionBasis,
) -> Result<AdjointSolution> {
    let discount = model.discount(paths)?;
    let terminal = discount.terminal();
    solve_adjoint_with_terminal(model, pi_tilde, market, wealth, paths, basis, &terminal)
}

/// Adjoint equation with an arbitrary terminal value.
pub fn solve_adjoint_with_terminal(
    model: &ModelPair,
    pi_tilde: &FractionProcess,
    market: &MarketParams,
    wealth: &WealthPath,
    paths: &PathBatch,
    basis: &RegressionBasis,
    terminal: &[f64],
) -> Result<AdjointSolution> {
    let d = paths.dim();
    let count = paths.paths();
    if terminal.len() != count {
        return Err(Error::invalid("adjoint terminal value does not match the path batch"));
    }
    model.q.check_shape(paths, d, "model drift")?;
    pi_tilde.fractions.check_shape(paths, market.stocks(), "fraction strategy")?;
    if wealth.wealth.paths() != count || wealth.wealth.nodes() != paths.nodes() {
        return Err(Error::invalid("wealth path does not match the path batch"));
    }
    let grid = *paths.grid();
    let steps = grid.steps();
    let nodes = grid.nodes();
    let dt = grid.dt();
    let theta = market.theta();

    let mut p = vec![0.0; count * nodes];
    let mut k = vec![0.0; count * nodes * d];
    for m in 0..count {
        p[m * nodes + steps] = terminal[m];
    }
    let mut next = terminal.to_vec();
    let mut regularized_steps = 0;
    for i in (0..steps).rev() {
        let state = state_section(basis.state, wealth, paths, i)?;
        let increments = paths.increments(i);
        let fit = fit_joint(basis.kind, &state, &next, &increments, d, dt);
        if fit.regularized {
            regularized_steps += 1;
        }
        let levels: Vec<f64> = (0..count)
            .into_par_iter()
            .map(|m| {
                let nu = market.times_sigma(pi_tilde.fractions.at(m, i));
                let q = model.q.at(m, i);
                let km = &fit.slope[m * d..(m + 1) * d];
                let mut lin = 0.0;
                let mut cross = 0.0;
                for j in 0..d {
                    lin += (theta[j] + q[j]) * nu[j];
                    cross += km[j] * (nu[j] + q[j]);
                }
                (fit.mean[m] + dt * cross) / (1.0 - dt * lin)
            })
            .collect();
        for m in 0..count {
            p[m * nodes + i] = levels[m];
            next[m] = levels[m];
            k[(m * nodes + i) * d..(m * nodes + i + 1) * d].copy_from_slice(&fit.slope[m * d..(m + 1) * d]);
        }
    }
    for m in 0..count {
        for j in 0..d {
            k[(m * nodes + steps) * d + j] = k[(m * nodes + steps - 1) * d + j];
        }
    }
    let nonpositive_nodes = p.iter().filter(|v| **v <= 0.0).count();
    Ok(AdjointSolution {
        p: ProcessPath::dense(count, nodes, 1, p)?.with_predictable(false),
        k: ProcessPath::dense(count, nodes, d, k)?,
        terminal: terminal.to_vec(),
        nonpositive_nodes,
        regularized_steps,
        grid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    /// Root mean square over paths and nodes `i < N`.
    pub l2: f64,
    pub max: f64,
    pub nodes: usize,
}

/// Norms of `p theta + p q* + k` over paths and nodes `i < N`.
pub fn max_principle_residual(adjoint: &AdjointSolution, theta: &[f64], model: &ModelPair) -> Result<ResidualStats> {
    let d = adjoint.k.width();
    if theta.len() != d || model.q.width() != d {
        return Err(Error::invalid("market price of risk, model and adjoint dimensions differ"));
    }
    let steps = adjoint.grid.steps();
    let count = adjoint.p.paths();
    let rows: Vec<(f64, f64)> = (0..count)
        .into_par_iter()
        .map(|m| {
            let mut sq = 0.0;
            let mut worst: f64 = 0.0;
            for i in 0..steps {
                let p = adjoint.p.scalar(m, i);
                let k = adjoint.k.at(m, i);
                let q = model.q.at(m, i);
                let norm_sq: f64 = (0..d).map(|j| (p * theta[j] + p * q[j] + k[j]).powi(2)).sum();
                sq += norm_sq;
                worst = worst.max(norm_sq.sqrt());
            }
            (sq, worst)
        })
        .collect();
    let nodes = count * steps;
    let total: f64 = rows.iter().map(|r| r.0).sum();
    Ok(ResidualStats {
        l2: (total / nodes as f64).sqrt(),
        max: rows.iter().map(|r| r.1).fold(0.0, f64::max),
        nodes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocStats {
    pub max_abs: f64,
    pub mean: f64,
    /// Fraction of nodes with a gap below `-1e-9` (relative).
    pub negative_fraction: f64,
    pub nodes: usize,
}

/// Fenchel-Young gaps `beta Y + q.Z - g(Y, Z) - g*(beta, q)` along a
/// solution; zero exactly where `(Y, Z)` is a subgradient of `g*` at the model.
pub fn foc_residual(g: &Generator, model: &ModelPair, solution: &BsdeSolution) -> Result<FocStats> {
    let steps = solution.grid.steps();
    let count = solution.y.paths();
    if model.beta.nodes() != solution.grid.nodes() {
        return Err(Error::invalid("model and solution grids differ"));
    }
    let positive = g.requires_positive_level();
    let floor = solution.config.y_floor;
    let search = ConjugateSearch::default();
    let rows: Vec<std::result::Result<(f64, f64, usize), (usize, usize)>> = (0..count)
        .into_par_iter()
        .map(|m| {
            let (mut worst, mut sum, mut negative) = (0.0_f64, 0.0, 0usize);
            for i in 0..steps {
                let y = solution.y.scalar(m, i);
                let y = if positive { y.max(floor) } else { y };
                let z = solution.z.at(m, i);
                let beta = model.beta.scalar(m, i);
                let q = model.q.at(m, i);
                let gstar = match conjugate(g, beta, q, &search) {
                    ConjugateValue::Finite { value, .. } => value,
                    ConjugateValue::Infinite => return Err((m, i)),
                };
                let inner: f64 = q.iter().zip(z).map(|(a, b)| a * b).sum();
                let gv = g.eval(y, z);
                let gap = beta * y + inner - gv - gstar;
                let scale = (beta * y).abs() + inner.abs() + gv.abs() + gstar.abs();
                worst = worst.max(gap.abs());
                sum += gap;
                if gap < -1e-9 * (1.0 + scale) {
                    negative += 1;
                }
            }
            Ok((worst, sum, negative))
        })
        .collect();
    let mut stats = FocStats {
        max_abs: 0.0,
        mean: 0.0,
        negative_fraction: 0.0,
        nodes: count * steps,
    };
    let mut negative = 0;
    for r in rows {
        let (w, s, n) = r.map_err(|(m, i)| {
            Error::InfeasibleModel(format!("g* is infinite on path {m} at node {i}"))
        })?;
        stats.max_abs = stats.max_abs.max(w);
        stats.mean += s;
        negative += n;
    }
    stats.mean /= stats.nodes as f64;
    stats.negative_fraction = negative as f64 / stats.nodes as f64;
    Ok(stats)
}
