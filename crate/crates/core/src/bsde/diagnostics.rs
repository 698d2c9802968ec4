use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::BsdeSolution;
use crate::duality::ModelPair;
use crate::error::{Error, Result};
use crate::generators::{Generator, Utility};
use crate::stats;
use crate::stochastic::{PathBatch, ProcessPath};

/// Evaluates `E_Q[D_{0,T} H + int_0^T D_{0,u} g*(beta_u, q_u) du]` for the
/// model `(beta, q)` as a Girsanov-weighted average under `P`.
///
/// `beta` and the penalty `g*` are held constant over each step, so the time
/// integral of the discount over `[t_i, t_{i+1})` is `D_i (1 - e^{-beta_i dt}) / beta_i`.
/// Returns the value and its standard error; `(+inf, NaN)` if a path term overflows upward.
pub fn solve_linear_dual_rep(
    model: &ModelPair,
    gstar: &ProcessPath,
    h: &[f64],
    paths: &PathBatch,
) -> Result<(f64, f64)> {
    if h.len() != paths.paths() {
        return Err(Error::invalid(format!(
            "{} terminal values for {} paths",
            h.len(),
            paths.paths()
        )));
    }
    model.beta.check_shape(paths, 1, "discount rate")?;
    gstar.check_shape(paths, 1, "penalty")?;
    model.q.check_shape(paths, paths.dim(), "model drift")?;
    let steps = paths.grid().steps();
    let dt = paths.grid().dt();
    let d = paths.dim();
    let per_path: Vec<std::result::Result<f64, (usize, usize)>> = (0..paths.paths())
        .into_par_iter()
        .map(|m| {
            let mut discount = 1.0;
            let mut log_discount = 0.0;
            let mut running = 0.0;
            let mut log_weight = 0.0;
            for i in 0..steps {
                let b = model.beta.scalar(m, i);
                let c = gstar.scalar(m, i);
                if !c.is_finite() {
                    return Err((m, i));
                }
                let decay = (-b * dt).exp();
                let integral = if b.abs() * dt < 1e-12 { dt } else { (1.0 - decay) / b };
                if c != 0.0 {
                    running += discount * c * integral;
                }
                discount *= decay;
                log_discount -= b * dt;
                let q = model.q.at(m, i);
                for j in 0..d {
                    log_weight += q[j] * paths.dw(m, i, j) - 0.5 * q[j] * q[j] * dt;
                }
            }
            let direct = log_weight.exp() * (discount * h[m] + running);
            if direct.is_finite() {
                return Ok(direct);
            }
            // weight and discount may overflow in opposite directions
            let scaled = |x: f64, log_scale: f64| if x == 0.0 { 0.0 } else { x.signum() * (log_scale + x.abs().ln()).exp() };
            Ok(scaled(h[m], log_weight + log_discount) + scaled(running, log_weight))
        })
        .collect();
    let mut values = Vec::with_capacity(per_path.len());
    for v in per_path {
        match v {
            Ok(x) => values.push(x),
            Err((m, i)) => {
                return Err(Error::InfeasibleModel(format!(
                    "penalty is infinite on path {m} at node {i}"
                )))
            }
        }
    }
    if values.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
        return Err(Error::NumericOverflow("dual representation is not finite".into()));
    }
    if values.iter().any(|v| v.is_infinite()) {
        return Ok((f64::INFINITY, f64::NAN));
    }
    Ok(stats::mean_and_se(&values))
}

/// Worst violations of the subsolution inequalities on sampled grid pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsolutionResidual {
    /// `max [Y_s + sum g dt - sum Z dW - Y_t]^+` over sampled `s < t` and paths.
    pub dynamics: f64,
    /// `max [Y_T - H]^+` over paths.
    pub terminal: f64,
}

impl SubsolutionResidual {
    pub fn worst(&self) -> f64 {
        self.dynamics.max(self.terminal)
    }
}

/// Checks `Y_s + int_s^t g(Y, Z) du - int_s^t Z dW <= Y_t` for grid pairs
/// `s < t` that are multiples of `pair_stride`, and `Y_T <= H`.
pub fn subsolution_residual(
    y: &ProcessPath,
    z: &ProcessPath,
    g: &Generator,
    h: &[f64],
    paths: &PathBatch,
    pair_stride: usize,
) -> Result<SubsolutionResidual> {
    y.check_shape(paths, 1, "level process")?;
    z.check_shape(paths, paths.dim(), "control process")?;
    if h.len() != paths.paths() {
        return Err(Error::invalid("terminal values do not match the path batch"));
    }
    let stride = pair_stride.max(1);
    let steps = paths.grid().steps();
    let dt = paths.grid().dt();
    let d = paths.dim();
    let worst: Vec<(f64, f64)> = (0..paths.paths())
        .into_par_iter()
        .map(|m| {
            // B_i = Y_i - A_i with A_i = sum_{k<i} g dt - Z dW; a violation for (s, t) is B_s - B_t
            let mut drift = 0.0;
            let mut running_max = f64::NEG_INFINITY;
            let mut dynamics: f64 = 0.0;
            for i in 0..=steps {
                if i % stride == 0 || i == steps {
                    let b = y.scalar(m, i) - drift;
                    if running_max > f64::NEG_INFINITY {
                        dynamics = dynamics.max(running_max - b);
                    }
                    running_max = running_max.max(b);
                }
                if i < steps {
                    let zi = z.at(m, i);
                    let mut step = g.eval(y.scalar(m, i), zi) * dt;
                    for j in 0..d {
                        step -= zi[j] * paths.dw(m, i, j);
                    }
                    drift += step;
                }
            }
            let terminal = (y.scalar(m, steps) - h[m]).max(0.0);
            (dynamics.max(0.0), terminal)
        })
        .collect();
    let mut out = SubsolutionResidual {
        dynamics: 0.0,
        terminal: 0.0,
    };
    for (a, b) in worst {
        out.dynamics = if a.is_nan() { f64::INFINITY } else { out.dynamics.max(a) };
        out.terminal = out.terminal.max(b);
    }
    Ok(out)
}

/// Statistics of `u'(Y) g(Y, Z) + u''(Y) |Z|^2 / 2` over visited nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftStats {
    pub min: f64,
    pub max_abs: f64,
    pub mean: f64,
    /// Fraction of nodes with a drift below `-tolerance`.
    pub violation_fraction: f64,
    pub tolerance: f64,
    pub nodes: usize,
    /// Nodes skipped because `Y` is outside the utility domain.
    pub outside_domain: usize,
}

/// Itô drift of `u(Y)` at every node `(Y_i, Z_i)`, `i < N`, of a solution.
pub fn admissibility_drift(utility: &Utility, g: &Generator, solution: &BsdeSolution) -> DriftStats {
    let tolerance = 1e-12;
    let steps = solution.grid.steps();
    let count = solution.y.paths();
    let rows: Vec<(f64, f64, f64, usize, usize, usize)> = (0..count)
        .into_par_iter()
        .map(|m| {
            let (mut lo, mut hi, mut sum) = (f64::INFINITY, 0.0_f64, 0.0);
            let (mut n, mut bad, mut outside) = (0usize, 0usize, 0usize);
            for i in 0..steps {
                let y = solution.y.scalar(m, i);
                if utility.requires_positive() && y <= 0.0 {
                    outside += 1;
                    continue;
                }
                let z = solution.z.at(m, i);
                let zsq: f64 = z.iter().map(|v| v * v).sum();
                let r = utility.du(y) * g.eval(y, z) + 0.5 * utility.d2u(y) * zsq;
                lo = lo.min(r);
                hi = hi.max(r.abs());
                sum += r;
                n += 1;
                if r < -tolerance || r.is_nan() {
                    bad += 1;
                }
            }
            (lo, hi, sum, n, bad, outside)
        })
        .collect();
    let mut stats = DriftStats {
        min: f64::INFINITY,
        max_abs: 0.0,
        mean: 0.0,
        violation_fraction: 0.0,
        tolerance,
        nodes: 0,
        outside_domain: 0,
    };
    let mut sum = 0.0;
    let mut bad = 0;
    for (lo, hi, s, n, b, o) in rows {
        stats.min = stats.min.min(lo);
        stats.max_abs = stats.max_abs.max(hi);
        sum += s;
        stats.nodes += n;
        bad += b;
        stats.outside_domain += o;
    }
    if stats.nodes > 0 {
        stats.mean = sum / stats.nodes as f64;
        stats.violation_fraction = bad as f64 / stats.nodes as f64;
    }
    stats
}
