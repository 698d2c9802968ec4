//! Backward solvers for `dY = g(Y, Z) dt - Z dW`, `Y_T = H`.
//!
//! The regression scheme projects `Y_{i+1}` jointly on basis functions of the
//! state and on the same functions multiplied by `dW_i`: the first part gives
//! `E[Y_{i+1} | F_i]`, the second the control `Z_i`. The level is then found
//! from `Y_i = E[Y_{i+1} | F_i] - g(Y_i, Z_i) dt` by Picard iteration.

mod diagnostics;

pub use diagnostics::{
    admissibility_drift, solve_linear_dual_rep, subsolution_residual, DriftStats, SubsolutionResidual,
};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{Generator, Utility};
use crate::market::WealthPath;
use crate::regression::{fit_joint, fit_mean, RegressionBasis, StateSelector};
use crate::stats;
use crate::stochastic::{PathBatch, ProcessPath, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub basis: RegressionBasis,
    /// Fixed-point passes for the implicit level equation.
    pub picard: usize,
    /// Levels below this are raised to it before evaluating `1/y` type generators.
    pub y_floor: f64,
    /// Bootstrap resamples for the standard error of `Y_0`.
    pub bootstrap: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            basis: RegressionBasis::default(),
            picard: 2,
            y_floor: 1e-6,
            bootstrap: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BsdeSolution {
    /// `Y[m][i]`.
    pub y: ProcessPath,
    /// `Z[m][i][j]`, used over `[t_i, t_{i+1})`.
    pub z: ProcessPath,
    pub terminal: Vec<f64>,
    pub y0: f64,
    pub y0_std_error: f64,
    /// Nodes where the explicit step fell below the floor and was redone
    /// within the range of the following step.
    pub floor_hits: usize,
    /// Steps whose regression needed regularization.
    pub regularized_steps: usize,
    pub config: SolverConfig,
    pub generator: String,
    pub grid: TimeGrid,
}

/// Summary written by [`BsdeSolution::write_json`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub generator: String,
    pub y0: f64,
    pub y0_std_error: f64,
    pub floor_hits: usize,
    pub regularized_steps: usize,
    pub steps: usize,
    pub paths: usize,
    pub config: SolverConfig,
}

impl BsdeSolution {
    pub fn summary(&self) -> SolutionSummary {
        SolutionSummary {
            generator: self.generator.clone(),
            y0: self.y0,
            y0_std_error: self.y0_std_error,
            floor_hits: self.floor_hits,
            regularized_steps: self.regularized_steps,
            steps: self.grid.steps(),
            paths: self.y.paths(),
            config: self.config,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.summary()).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Per-node cross-path means and standard deviations of `Y` and `Z`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.z.width();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["node".to_string(), "t".into(), "y_mean".into(), "y_std".into()];
        for j in 0..d {
            header.push(format!("z{j}_mean"));
            header.push(format!("z{j}_std"));
        }
        w.write_record(&header)?;
        for i in 0..self.grid.nodes() {
            let mut row = vec![i.to_string(), self.grid.time(i).to_string()];
            let ys = self.y.cross_section(i, 0);
            let (mean, se) = stats::mean_and_se(&ys);
            row.push(mean.to_string());
            row.push((se * (ys.len() as f64).sqrt()).to_string());
            for j in 0..d {
                let zs = self.z.cross_section(i, j);
                let (mean, se) = stats::mean_and_se(&zs);
                row.push(mean.to_string());
                row.push((se * (zs.len() as f64).sqrt()).to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Regression state at node `i` on every path.
pub(crate) fn state_section(
    selector: StateSelector,
    wealth: &WealthPath,
    paths: &PathBatch,
    i: usize,
) -> Result<Vec<f64>> {
    match selector {
        StateSelector::Wealth => Ok(wealth.wealth.cross_section(i, 0)),
        StateSelector::LogWealth => Ok(wealth
            .wealth
            .cross_section(i, 0)
            .into_iter()
            .map(|x| x.max(1e-300).ln())
            .collect()),
        StateSelector::Brownian(j) => {
            if j >= paths.dim() {
                return Err(Error::invalid(format!(
                    "state selects Brownian component {j} of a {}-dimensional batch",
                    paths.dim()
                )));
            }
            Ok(paths.cross_section(i, j))
        }
    }
}

fn check_inputs(h: &[f64], wealth: &WealthPath, paths: &PathBatch) -> Result<()> {
    if h.len() != paths.paths() {
        return Err(Error::invalid(format!(
            "{} terminal values for {} paths",
            h.len(),
            paths.paths()
        )));
    }
    if let Some(m) = h.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("terminal value on path {m} is not finite")));
    }
    if wealth.wealth.paths() != paths.paths() || wealth.wealth.nodes() != paths.nodes() {
        return Err(Error::invalid("wealth path does not match the path batch"));
    }
    Ok(())
}

/// Solves `dY = g(Y, Z) dt - Z dW`, `Y_T = H` backward on the grid of `paths`.
pub fn solve_backward(
    g: &Generator,
    h: &[f64],
    wealth: &WealthPath,
    paths: &PathBatch,
    config: &SolverConfig,
) -> Result<BsdeSolution> {
    check_inputs(h, wealth, paths)?;
    let grid = *paths.grid();
    let steps = grid.steps();
    let nodes = grid.nodes();
    let dt = grid.dt();
    let d = paths.dim();
    let count = paths.paths();
    let positive = g.requires_positive_level();
    let floor = config.y_floor;

    let mut y = vec![0.0; count * nodes];
    let mut z = vec![0.0; count * nodes * d];
    for (m, v) in h.iter().enumerate() {
        y[m * nodes + steps] = *v;
    }
    let mut next = h.to_vec();
    let mut floor_hits = 0usize;
    let mut regularized_steps = 0usize;

    for i in (0..steps).rev() {
        let state = state_section(config.basis.state, wealth, paths, i)?;
        let increments = paths.increments(i);
        let fit = fit_joint(config.basis.kind, &state, &next, &increments, d, dt);
        if fit.regularized {
            regularized_steps += 1;
        }
        // Safeguard for generators needing y > 0: where the explicit step
        // leaves the domain, the node is redone with the bounds of the exact
        // conditional expectations, lo <= E[Y | F] <= hi and
        // |E[(Y - c) dW]| <= (hi - lo) / 2 * E|dW|.
        let lo = next.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z_cap = 0.5 * (hi - lo) * (2.0 / (std::f64::consts::PI * dt)).sqrt();
        let step = |a: f64, zm: &[f64], bottom: f64| -> (f64, bool, bool) {
            let mut level = a;
            let mut hit = false;
            for _ in 0..config.picard {
                hit = level < bottom;
                let arg = level.max(bottom);
                let gv = g.eval(arg, zm);
                if !gv.is_finite() {
                    return (arg, hit, false);
                }
                level = a - gv * dt;
            }
            (level, hit, true)
        };
        let results: Vec<(f64, Vec<f64>, bool, bool)> = (0..count)
            .into_par_iter()
            .map(|m| {
                let zm: Vec<f64> = fit.slope[m * d..(m + 1) * d].iter().map(|b| -b).collect();
                let (level, hit, ok) = step(fit.mean[m], &zm, floor);
                if !positive || (ok && level >= floor) {
                    return (level, zm, hit, ok);
                }
                let zc: Vec<f64> = zm.iter().map(|v| v.clamp(-z_cap, z_cap)).collect();
                let bottom = lo.max(floor);
                let (level, _, ok) = step(fit.mean[m].clamp(lo, hi), &zc, bottom);
                (level.max(bottom), zc, true, ok)
            })
            .collect();
        for (m, (level, zm, hit, ok)) in results.into_iter().enumerate() {
            if !ok {
                return Err(Error::DomainViolation {
                    y: level,
                    z_norm: zm.iter().map(|v| v * v).sum::<f64>().sqrt(),
                });
            }
            if hit {
                floor_hits += 1;
            }
            y[m * nodes + i] = level;
            next[m] = level;
            z[(m * nodes + i) * d..(m * nodes + i + 1) * d].copy_from_slice(&zm);
        }
    }
    // the control at the last node is never used; repeat the previous one
    for m in 0..count {
        for j in 0..d {
            z[(m * nodes + steps) * d + j] = z[(m * nodes + steps - 1) * d + j];
        }
    }

    let y = ProcessPath::dense(count, nodes, 1, y)?.with_predictable(false);
    let z = ProcessPath::dense(count, nodes, d, z)?;
    let y0 = stats::mean_and_se(&y.cross_section(0, 0)).0;
    let pathwise = pathwise_initial_values(g, h, &y, &z, paths, positive, floor);
    let y0_std_error = block_bootstrap_se(&pathwise, config.bootstrap, paths.seed());

    Ok(BsdeSolution {
        y,
        z,
        terminal: h.to_vec(),
        y0,
        y0_std_error,
        floor_hits,
        regularized_steps,
        config: *config,
        generator: g.name(),
        grid,
    })
}

/// `H - sum g(Y_i, Z_i) dt + sum Z_i dW_i` on every path; its mean is an estimator of `Y_0`.
fn pathwise_initial_values(
    g: &Generator,
    h: &[f64],
    y: &ProcessPath,
    z: &ProcessPath,
    paths: &PathBatch,
    positive: bool,
    floor: f64,
) -> Vec<f64> {
    let steps = paths.grid().steps();
    let dt = paths.grid().dt();
    let d = paths.dim();
    (0..paths.paths())
        .into_par_iter()
        .map(|m| {
            let mut v = h[m];
            for i in 0..steps {
                let yi = y.scalar(m, i);
                let zi = z.at(m, i);
                let arg = if positive { yi.max(floor) } else { yi };
                v -= g.eval(arg, zi) * dt;
                for j in 0..d {
                    v += zi[j] * paths.dw(m, i, j);
                }
            }
            v
        })
        .collect()
}

const BOOTSTRAP_BLOCK: usize = 64;

/// Standard error of the mean of `values` by resampling contiguous blocks of paths.
pub(crate) fn block_bootstrap_se(values: &[f64], resamples: usize, seed: u64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    if resamples < 2 {
        return stats::mean_and_se(values).1;
    }
    let blocks: Vec<f64> = values
        .chunks(BOOTSTRAP_BLOCK)
        .map(|c| c.iter().sum::<f64>())
        .collect();
    let sizes: Vec<usize> = values.chunks(BOOTSTRAP_BLOCK).map(|c| c.len()).collect();
    let b = blocks.len();
    let means: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x626f6f74);
            rng.set_stream(r as u64);
            let mut total = 0.0;
            let mut size = 0usize;
            for _ in 0..b {
                let k = rng.random_range(0..b);
                total += blocks[k];
                size += sizes[k];
            }
            total / size as f64
        })
        .collect();
    stats::variance(&means).sqrt()
}

/// Output of [`certainty_equivalent_oracle`].
#[derive(Debug, Clone)]
pub struct CertaintyEquivalent {
    /// `u^{-1}(E[u(H) | F_i])` with the conditional expectation regressed on the state.
    pub y: ProcessPath,
    pub y0: f64,
    /// Delta-method standard error of `Y_0`.
    pub y0_std_error: f64,
    pub regularized_steps: usize,
}

fn check_utility_domain(utility: &Utility, h: &[f64]) -> Result<()> {
    for (m, v) in h.iter().enumerate() {
        let bad = match utility {
            Utility::Log => *v <= 0.0,
            Utility::Power { .. } => *v < 0.0,
            Utility::Exponential { .. } => !v.is_finite(),
        };
        if bad || !v.is_finite() {
            return Err(Error::invalid(format!(
                "terminal value {v} on path {m} is outside the {} utility domain",
                utility.name()
            )));
        }
    }
    Ok(())
}

/// `u^{-1}(mean u(H))` and its delta-method standard error.
pub fn certainty_equivalent_value(utility: &Utility, h: &[f64]) -> Result<(f64, f64)> {
    check_utility_domain(utility, h)?;
    let uh: Vec<f64> = h.par_iter().map(|v| utility.u(*v)).collect();
    let (mean, se) = stats::mean_and_se(&uh);
    let y0 = utility.inverse(utility.clamp_to_range(mean));
    let du = utility.du(y0);
    let se = if du > 0.0 && du.is_finite() { se / du } else { f64::INFINITY };
    Ok((y0, if h.len() > 1 { se } else { 0.0 }))
}

/// Certainty equivalent `u^{-1}(E[u(H) | F_t])` computed without any BSDE stepping.
pub fn certainty_equivalent_oracle(
    utility: &Utility,
    h: &[f64],
    wealth: &WealthPath,
    paths: &PathBatch,
    basis: &RegressionBasis,
) -> Result<CertaintyEquivalent> {
    check_inputs(h, wealth, paths)?;
    let (y0, y0_std_error) = certainty_equivalent_value(utility, h)?;
    let uh: Vec<f64> = h.iter().map(|v| utility.u(*v)).collect();
    let steps = paths.grid().steps();
    let nodes = paths.nodes();
    let count = paths.paths();
    let mut y = vec![0.0; count * nodes];
    for m in 0..count {
        y[m * nodes + steps] = h[m];
    }
    let mut regularized_steps = 0;
    for i in 0..steps {
        let state = state_section(basis.state, wealth, paths, i)?;
        let fit = fit_mean(basis.kind, &state, &uh);
        if fit.regularized {
            regularized_steps += 1;
        }
        for m in 0..count {
            y[m * nodes + i] = utility.inverse(utility.clamp_to_range(fit.fitted[m]));
        }
    }
    Ok(CertaintyEquivalent {
        y: ProcessPath::dense(count, nodes, 1, y)?.with_predictable(false),
        y0,
        y0_std_error,
        regularized_steps,
    })
}
