//! Least-squares conditional expectations on a one-dimensional state.
//!
//! `E[V | F_t]` is approximated by projecting `V` onto basis functions of a
//! scalar state observed at time `t`. The joint variant additionally projects
//! onto `basis(state) * dW / sqrt(dt)`, which yields the martingale
//! coefficient of `V` over the step with a variance that shrinks with `dt`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::stats::CHUNK;

/// Family of basis functions used for regressions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BasisKind {
    /// Monomials of the standardized state up to `degree`.
    Polynomial { degree: usize },
    /// Indicators of `count` equal-mass bins of the state.
    Bins { count: usize },
}

/// Which simulated quantity feeds the regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateSelector {
    Wealth,
    LogWealth,
    /// Component `j` of the Brownian motion.
    Brownian(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub kind: BasisKind,
    pub state: StateSelector,
}

impl RegressionBasis {
    pub fn polynomial(degree: usize) -> Self {
        RegressionBasis {
            kind: BasisKind::Polynomial { degree },
            state: StateSelector::Wealth,
        }
    }

    pub fn bins(count: usize) -> Self {
        RegressionBasis {
            kind: BasisKind::Bins { count },
            state: StateSelector::Wealth,
        }
    }

    pub fn with_state(mut self, state: StateSelector) -> Self {
        self.state = state;
        self
    }
}

impl Default for RegressionBasis {
    fn default() -> Self {
        RegressionBasis::polynomial(4)
    }
}

/// Basis functions frozen on one cross-section of the state.
#[derive(Debug, Clone)]
pub(crate) enum FeatureMap {
    Polynomial { center: f64, scale: f64, degree: usize },
    Bins { edges: Vec<f64>, active: Vec<usize> },
}

impl FeatureMap {
    pub(crate) fn build(kind: BasisKind, state: &[f64]) -> Self {
        let n = state.len() as f64;
        match kind {
            BasisKind::Polynomial { degree } => {
                let center = crate::stats::ordered_sum(state) / n;
                let var = state.iter().map(|s| (s - center) * (s - center)).sum::<f64>() / n;
                let scale = var.sqrt();
                // degenerate cross-section (e.g. t = 0): intercept only
                let degree = if scale <= 1e-14 * (1.0 + center.abs()) { 0 } else { degree };
                FeatureMap::Polynomial {
                    center,
                    scale: if degree == 0 { 1.0 } else { scale },
                    degree,
                }
            }
            BasisKind::Bins { count } => {
                let count = count.max(1);
                let mut sorted = state.to_vec();
                sorted.sort_by(|a, b| a.total_cmp(b));
                let edges: Vec<f64> = (1..count)
                    .map(|k| sorted[(k * sorted.len()) / count])
                    .collect();
                let mut counts = vec![0usize; count];
                for s in state {
                    counts[bin_of(&edges, *s)] += 1;
                }
                let active = (0..count).filter(|&k| counts[k] > 0).collect();
                FeatureMap::Bins { edges, active }
            }
        }
    }

    pub(crate) fn len(&self) -> usize {
        match self {
            FeatureMap::Polynomial { degree, .. } => degree + 1,
            FeatureMap::Bins { active, .. } => active.len(),
        }
    }

    pub(crate) fn eval(&self, x: f64, out: &mut [f64]) {
        match self {
            FeatureMap::Polynomial { center, scale, degree } => {
                let xs = (x - center) / scale;
                let mut p = 1.0;
                for slot in out.iter_mut().take(degree + 1) {
                    *slot = p;
                    p *= xs;
                }
            }
            FeatureMap::Bins { edges, active } => {
                let b = bin_of(edges, x);
                for (slot, k) in out.iter_mut().zip(active) {
                    *slot = if *k == b { 1.0 } else { 0.0 };
                }
            }
        }
    }
}

fn bin_of(edges: &[f64], x: f64) -> usize {
    edges.partition_point(|e| *e <= x)
}

/// Solves the normal equations `G c = r`; falls back to a ridge-regularized
/// solve when `G` is numerically singular.
fn solve_normal(gram: DMatrix<f64>, rhs: DVector<f64>) -> (DVector<f64>, bool) {
    let p = gram.nrows();
    let max_diag = (0..p).map(|i| gram[(i, i)]).fold(0.0_f64, f64::max);
    let min_diag = (0..p).map(|i| gram[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_diag > 1e-12 * max_diag {
        if let Some(chol) = gram.clone().cholesky() {
            let sol = chol.solve(&rhs);
            if sol.iter().all(|v| v.is_finite()) {
                return (sol, false);
            }
        }
    }
    let ridge = 1e-10 * max_diag.max(1e-300);
    let mut reg = gram;
    for i in 0..p {
        reg[(i, i)] += ridge;
    }
    match reg.clone().cholesky() {
        Some(chol) => (chol.solve(&rhs), true),
        None => {
            let svd = reg.svd(true, true);
            let sol = svd
                .solve(&rhs, 1e-12 * max_diag)
                .unwrap_or_else(|_| DVector::zeros(p));
            (sol, true)
        }
    }
}

/// Accumulates `sum_m row_m row_m'` and `sum_m row_m y_m` with a fixed reduction order.
fn accumulate<F>(n_rows: usize, p: usize, targets: &[f64], fill: F) -> (DMatrix<f64>, DVector<f64>)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let starts: Vec<usize> = (0..n_rows).step_by(CHUNK).collect();
    let partials: Vec<(Vec<f64>, Vec<f64>)> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + CHUNK).min(n_rows);
            let mut g = vec![0.0; p * p];
            let mut r = vec![0.0; p];
            let mut row = vec![0.0; p];
            for m in start..end {
                fill(m, &mut row);
                let y = targets[m];
                for a in 0..p {
                    let ra = row[a];
                    if ra == 0.0 {
                        continue;
                    }
                    r[a] += ra * y;
                    for b in a..p {
                        g[a * p + b] += ra * row[b];
                    }
                }
            }
            (g, r)
        })
        .collect();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for (g, r) in &partials {
        for a in 0..p {
            rhs[a] += r[a];
            for b in a..p {
                gram[(a, b)] += g[a * p + b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    (gram, rhs)
}

/// Fitted conditional mean on every path.
#[derive(Debug, Clone)]
pub(crate) struct MeanFit {
    pub fitted: Vec<f64>,
    pub regularized: bool,
}

pub(crate) fn fit_mean(kind: BasisKind, state: &[f64], targets: &[f64]) -> MeanFit {
    let features = FeatureMap::build(kind, state);
    let p = features.len();
    let (gram, rhs) = accumulate(state.len(), p, targets, |m, row| features.eval(state[m], row));
    let (coef, regularized) = solve_normal(gram, rhs);
    let fitted = state
        .par_iter()
        .map_init(
            || vec![0.0; p],
            |row, s| {
                features.eval(*s, row);
                row.iter().zip(coef.iter()).map(|(a, b)| a * b).sum()
            },
        )
        .collect();
    MeanFit { fitted, regularized }
}

/// Joint projection `V ≈ a(state) + sum_j b_j(state) dW_j`.
#[derive(Debug, Clone)]
pub(crate) struct JointFit {
    pub mean: Vec<f64>,
    /// Row-major `paths x dim` martingale coefficients.
    pub slope: Vec<f64>,
    pub regularized: bool,
}

/// `increments` is row-major `paths x dim`.
pub(crate) fn fit_joint(
    kind: BasisKind,
    state: &[f64],
    targets: &[f64],
    increments: &[f64],
    dim: usize,
    dt: f64,
) -> JointFit {
    let features = FeatureMap::build(kind, state);
    let k = features.len();
    let p = k * (1 + dim);
    let inv_sqrt_dt = 1.0 / dt.sqrt();
    let (gram, rhs) = accumulate(state.len(), p, targets, |m, row| {
        features.eval(state[m], &mut row[..k]);
        for j in 0..dim {
            let h = increments[m * dim + j] * inv_sqrt_dt;
            for a in 0..k {
                row[k * (1 + j) + a] = row[a] * h;
            }
        }
    });
    let (coef, regularized) = solve_normal(gram, rhs);
    let n = state.len();
    let mut mean = vec![0.0; n];
    let mut slope = vec![0.0; n * dim];
    mean.par_iter_mut()
        .zip(slope.par_chunks_mut(dim))
        .enumerate()
        .for_each_init(
            || vec![0.0; k],
            |row, (m, (mu, sl))| {
                features.eval(state[m], row);
                *mu = row.iter().zip(coef.iter()).map(|(a, b)| a * b).sum();
                for (j, s) in sl.iter_mut().enumerate() {
                    let c = &coef.as_slice()[k * (1 + j)..k * (2 + j)];
                    *s = row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>() * inv_sqrt_dt;
                }
            },
        );
    JointFit {
        mean,
        slope,
        regularized,
    }
}
