use serde::{Deserialize, Serialize};

use super::search::{SearchBudget, SweepRow};
use crate::bsde::{certainty_equivalent_value, solve_backward, SolverConfig};
use crate::error::{Error, Result};
use crate::generators::{Generator, GeneratorKind, Utility};
use crate::market::{simulate_wealth, MarketParams, Strategy};
use crate::optim::{box_grid, nelder_mead};
use crate::stochastic::PathBatch;

/// How the value of a terminal wealth is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimalMethod {
    /// Certainty equivalent when the generator is one for the utility, BSDE otherwise.
    #[default]
    Auto,
    Bsde,
    CertaintyEquivalent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalValue {
    pub value: f64,
    pub std_error: f64,
    /// Description of the estimator, e.g. `"certainty equivalent"`.
    pub method: String,
}

pub(crate) fn check_endowment(xi: &[f64], paths: &PathBatch) -> Result<()> {
    if xi.len() != paths.paths() {
        return Err(Error::invalid(format!(
            "endowment has {} values for {} paths",
            xi.len(),
            paths.paths()
        )));
    }
    if let Some(m) = xi.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid(format!(
            "endowment must be finite and nonnegative, got {} on path {m}",
            xi[m]
        )));
    }
    Ok(())
}

/// Label of the BSDE estimate: outside the certainty-equivalent and
/// g-expectation families it is only known to bound the utility from below.
fn bsde_label(g: &Generator) -> &'static str {
    match g.kind() {
        GeneratorKind::CertaintyEquivalent(_) | GeneratorKind::GExpectation { .. } | GeneratorKind::Zero => {
            "BSDE value"
        }
        _ if g.utility().is_some() => "BSDE value",
        _ => "BSDE value (subsolution lower bound)",
    }
}

/// Value `E^g_0(xi + X^pi_T)` of one strategy.
#[allow(clippy::too_many_arguments)]
pub fn primal_value(
    strategy: &Strategy,
    g: &Generator,
    utility: Option<&Utility>,
    xi: &[f64],
    market: &MarketParams,
    paths: &PathBatch,
    solver: &SolverConfig,
    method: PrimalMethod,
) -> Result<PrimalValue> {
    check_endowment(xi, paths)?;
    let wealth = simulate_wealth(strategy, market, paths)?;
    let h: Vec<f64> = wealth.terminal().iter().zip(xi).map(|(x, e)| x + e).collect();
    let ce = utility.filter(|u| g.is_certainty_equivalent_of(u));
    let use_ce = match method {
        PrimalMethod::Auto => ce.is_some(),
        PrimalMethod::Bsde => false,
        PrimalMethod::CertaintyEquivalent => {
            if ce.is_none() {
                return Err(Error::invalid(format!(
                    "generator {} is not the certainty equivalent of the configured utility",
                    g.name()
                )));
            }
            true
        }
    };
    if use_ce {
        let (value, std_error) = certainty_equivalent_value(ce.expect("checked"), &h)?;
        return Ok(PrimalValue {
            value,
            std_error,
            method: "certainty equivalent".into(),
        });
    }
    let sol = solve_backward(g, &h, &wealth, paths, solver)?;
    Ok(PrimalValue {
        value: sol.y0,
        std_error: sol.y0_std_error,
        method: bsde_label(g).into(),
    })
}

/// Strategy families searched by [`optimize_strategy`] and [`super::minimax_gap`].
#[derive(Debug, Clone)]
pub enum StrategyFamily {
    /// Constant fractions of wealth with each component in the given interval.
    ConstantFraction { bounds: Vec<(f64, f64)> },
    /// Constant currency amounts with each component in the given interval.
    ConstantAmount { bounds: Vec<(f64, f64)> },
    Fixed(Vec<Strategy>),
}

impl StrategyFamily {
    pub fn label(&self) -> &'static str {
        match self {
            StrategyFamily::ConstantFraction { .. } => "constant-fraction",
            StrategyFamily::ConstantAmount { .. } => "constant-amount",
            StrategyFamily::Fixed(_) => "fixed",
        }
    }

    fn bounds(&self) -> Option<&[(f64, f64)]> {
        match self {
            StrategyFamily::ConstantFraction { bounds } | StrategyFamily::ConstantAmount { bounds } => Some(bounds),
            StrategyFamily::Fixed(_) => None,
        }
    }

    fn strategy_at(&self, x: &[f64]) -> Strategy {
        match self {
            StrategyFamily::ConstantFraction { .. } => Strategy::ConstantFraction(x.to_vec()),
            _ => Strategy::ConstantAmount(x.to_vec()),
        }
    }

    pub fn discretize(&self, per_axis: usize) -> Vec<Strategy> {
        match self {
            StrategyFamily::Fixed(s) => s.clone(),
            _ => {
                let b = self.bounds().expect("parametric family");
                let lo: Vec<f64> = b.iter().map(|v| v.0).collect();
                let hi: Vec<f64> = b.iter().map(|v| v.1).collect();
                box_grid(&lo, &hi, per_axis).iter().map(|x| self.strategy_at(x)).collect()
            }
        }
    }

    pub(crate) fn validate(&self, stocks: usize) -> Result<()> {
        match self {
            StrategyFamily::Fixed(s) => {
                if s.is_empty() {
                    return Err(Error::invalid("fixed strategy family is empty"));
                }
                if let Some(bad) = s.iter().find(|s| s.stocks() != stocks) {
                    return Err(Error::invalid(format!(
                        "strategy has {} components, market has {stocks} stocks",
                        bad.stocks()
                    )));
                }
                Ok(())
            }
            _ => {
                let b = self.bounds().expect("parametric family");
                if b.len() != stocks {
                    return Err(Error::invalid(format!(
                        "strategy box has {} axes, market has {stocks} stocks",
                        b.len()
                    )));
                }
                for (lo, hi) in b {
                    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                        return Err(Error::invalid(format!("strategy interval [{lo}, {hi}] is invalid")));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Result of [`optimize_strategy`].
#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub best: Strategy,
    pub value: f64,
    pub std_error: f64,
    pub method: String,
    pub evaluated: Vec<SweepRow>,
}

/// Maximizes the primal value over a strategy family with common random
/// numbers: grid over the parameter box, then Nelder-Mead from the best point.
#[allow(clippy::too_many_arguments)]
pub fn optimize_strategy(
    family: &StrategyFamily,
    g: &Generator,
    utility: Option<&Utility>,
    xi: &[f64],
    market: &MarketParams,
    paths: &PathBatch,
    solver: &SolverConfig,
    budget: &SearchBudget,
) -> Result<OptimizeResult> {
    family.validate(market.stocks())?;
    check_endowment(xi, paths)?;
    let mut rows: Vec<SweepRow> = Vec::new();
    let mut best: Option<(Strategy, PrimalValue)> = None;
    let mut evaluate = |s: &Strategy, rows: &mut Vec<SweepRow>| -> Result<f64> {
        let v = match primal_value(s, g, utility, xi, market, paths, solver, PrimalMethod::Auto) {
            Ok(v) => v,
            Err(Error::InvalidArgument(_)) | Err(Error::DomainViolation { .. }) => {
                rows.push(SweepRow {
                    family: family.label().into(),
                    params: s.params(),
                    value: f64::NEG_INFINITY,
                    std_error: f64::NAN,
                    feasible: false,
                });
                return Ok(f64::NEG_INFINITY);
            }
            Err(e) => return Err(e),
        };
        rows.push(SweepRow {
            family: if s.params().is_empty() { s.label().into() } else { family.label().into() },
            params: s.params(),
            value: v.value,
            std_error: v.std_error,
            feasible: true,
        });
        let value = v.value;
        if best.as_ref().map_or(true, |(_, b)| value > b.value) {
            best = Some((s.clone(), v));
        }
        Ok(value)
    };

    match family {
        StrategyFamily::Fixed(list) => {
            for s in list {
                evaluate(s, &mut rows)?;
            }
        }
        _ => {
            let b = family.bounds().expect("parametric family");
            let lo: Vec<f64> = b.iter().map(|v| v.0).collect();
            let hi: Vec<f64> = b.iter().map(|v| v.1).collect();
            let mut start: Option<(Vec<f64>, f64)> = None;
            for x in box_grid(&lo, &hi, budget.grid_per_axis) {
                let v = evaluate(&family.strategy_at(&x), &mut rows)?;
                if v > f64::NEG_INFINITY && start.as_ref().map_or(true, |(_, s)| v > *s) {
                    start = Some((x, v));
                }
            }
            if let (Some((x0, _)), true) = (start, budget.refine_iterations > 0) {
                let step: Vec<f64> = lo
                    .iter()
                    .zip(&hi)
                    .map(|(a, b)| ((b - a) / budget.grid_per_axis.max(2) as f64).max(1e-6))
                    .collect();
                let mut failure = None;
                nelder_mead(
                    |x| match evaluate(&family.strategy_at(x), &mut rows) {
                        Ok(v) => -v,
                        Err(e) => {
                            failure.get_or_insert(e);
                            f64::INFINITY
                        }
                    },
                    &x0,
                    &step,
                    &lo,
                    &hi,
                    budget.refine_iterations,
                    1e-12,
                );
                if let Some(e) = failure {
                    return Err(e);
                }
            }
        }
    }
    match best {
        Some((best, v)) => Ok(OptimizeResult {
            best,
            value: v.value,
            std_error: v.std_error,
            method: v.method,
            evaluated: rows,
        }),
        None => Err(Error::NoFeasiblePoint("no strategy could be evaluated".into())),
    }
}
