use serde::{Deserialize, Serialize};

use super::model::{dual_objective, subgradient_model, ModelPair};
use super::primal::{check_endowment, StrategyFamily};
use super::search::ModelFamily;
use crate::bsde::{solve_backward, SolverConfig};
use crate::error::{Error, Result};
use crate::generators::Generator;
use crate::market::{simulate_wealth, MarketParams};
use crate::stochastic::PathBatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimaxConfig {
    /// Grid points per axis of a parametric strategy family.
    pub strategy_points: usize,
    /// Grid points per axis of a parametric model family.
    pub model_points: usize,
    /// Adds the subgradient model of every strategy's BSDE solution to the model set.
    pub include_subgradient: bool,
    pub solver: SolverConfig,
}

impl Default for MinimaxConfig {
    fn default() -> Self {
        MinimaxConfig {
            strategy_points: 13,
            model_points: 31,
            include_subgradient: true,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxResult {
    /// `max_s min_m J(s, m)`.
    pub sup_inf: f64,
    /// `min_m max_s J(s, m)`.
    pub inf_sup: f64,
    /// `(inf_sup - sup_inf) / |inf_sup|`.
    pub relative_gap: f64,
    pub strategies: Vec<String>,
    pub models: Vec<String>,
    /// `payoff[s][m]`, `+inf` for infeasible models.
    pub payoff: Vec<Vec<f64>>,
    pub best_strategy: usize,
    pub best_model: usize,
}

fn strategy_name(s: &crate::market::Strategy) -> String {
    format!("{}{:?}", s.label(), s.params())
}

/// Sup-inf and inf-sup of the dual objective `J(s, m)` with `H = xi + X^s_T`
/// over discretized strategy and model families. Computed on one payoff
/// matrix, so `sup_inf <= inf_sup` holds by construction.
#[allow(clippy::too_many_arguments)]
pub fn minimax_gap(
    strategies: &StrategyFamily,
    models: &ModelFamily,
    g: &Generator,
    xi: &[f64],
    market: &MarketParams,
    paths: &PathBatch,
    config: &MinimaxConfig,
) -> Result<MinimaxResult> {
    strategies.validate(market.stocks())?;
    models.validate(paths.dim())?;
    check_endowment(xi, paths)?;
    let strategy_list = strategies.discretize(config.strategy_points);
    let model_list: Vec<ModelPair> = models.discretize(config.model_points, paths)?;

    let mut terminals = Vec::with_capacity(strategy_list.len());
    for s in &strategy_list {
        let wealth = simulate_wealth(s, market, paths)?;
        terminals.push(wealth.terminal().iter().zip(xi).map(|(x, e)| x + e).collect::<Vec<f64>>());
    }

    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut model_names = Vec::new();
    let column = |model: &ModelPair| -> Result<Vec<f64>> {
        terminals
            .iter()
            .map(|h| dual_objective(model, g, h, paths).map(|v| v.value()))
            .collect()
    };
    for model in &model_list {
        columns.push(column(model)?);
        model_names.push(model.label());
    }
    if config.include_subgradient {
        for (s, h) in strategy_list.iter().zip(&terminals) {
            let wealth = simulate_wealth(s, market, paths)?;
            let sol = solve_backward(g, h, &wealth, paths, &config.solver)?;
            let model = subgradient_model(&sol, g)?;
            columns.push(column(&model)?);
            model_names.push(format!("{} at {}", model.label(), strategy_name(s)));
        }
    }
    if columns.is_empty() {
        return Err(Error::NoFeasiblePoint("model set is empty".into()));
    }

    let ns = strategy_list.len();
    let payoff: Vec<Vec<f64>> = (0..ns).map(|s| columns.iter().map(|c| c[s]).collect()).collect();

    let mut sup_inf = f64::NEG_INFINITY;
    let mut best_strategy = 0;
    for (s, row) in payoff.iter().enumerate() {
        let inner = row.iter().copied().fold(f64::INFINITY, f64::min);
        if inner > sup_inf {
            sup_inf = inner;
            best_strategy = s;
        }
    }
    let mut inf_sup = f64::INFINITY;
    let mut best_model = 0;
    for (k, col) in columns.iter().enumerate() {
        let outer = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if outer < inf_sup {
            inf_sup = outer;
            best_model = k;
        }
    }
    if !inf_sup.is_finite() {
        return Err(Error::NoFeasiblePoint("no model is feasible for every strategy".into()));
    }
    Ok(MinimaxResult {
        sup_inf,
        inf_sup,
        relative_gap: (inf_sup - sup_inf) / inf_sup.abs(),
        strategies: strategy_list.iter().map(strategy_name).collect(),
        models: model_names,
        payoff,
        best_strategy,
        best_model,
    })
}
