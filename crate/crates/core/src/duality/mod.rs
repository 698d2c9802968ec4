//! Robust dual representation `inf_{beta, q} E_Q[D_{0,T} H + int D g*(beta, q) du]`,
//! weak duality, subgradient gap closing and strategy optimization.

mod minimax;
mod model;
mod primal;
mod search;

pub use minimax::{minimax_gap, MinimaxConfig, MinimaxResult};
pub use model::{
    close_gap_with_subgradient, dual_objective, subgradient_model, DualValue, GapEntry, ModelDescriptor, ModelPair,
};
pub use primal::{optimize_strategy, primal_value, OptimizeResult, PrimalMethod, PrimalValue, StrategyFamily};
pub use search::{dual_search, DualSearchResult, ModelFamily, SearchBudget, SweepRow};

use serde::{Deserialize, Serialize};

/// Primal estimate, dual sweep and gaps of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualReport {
    pub primal: PrimalValue,
    pub duals: Vec<SweepRow>,
    pub best_dual: f64,
    pub best_dual_std_error: f64,
    pub best_model: ModelDescriptor,
    /// `(best_dual - primal) / |primal|`.
    pub relative_gap: f64,
    /// `(sup-inf, inf-sup)` when a minimax pass was run.
    pub minimax: Option<(f64, f64)>,
}

impl DualReport {
    pub fn new(primal: PrimalValue, search: &DualSearchResult, minimax: Option<&MinimaxResult>) -> Self {
        let relative_gap = (search.value - primal.value) / primal.value.abs();
        DualReport {
            primal,
            duals: search.evaluated.clone(),
            best_dual: search.value,
            best_dual_std_error: search.std_error,
            best_model: search.best.descriptor.clone(),
            relative_gap,
            minimax: minimax.map(|m| (m.sup_inf, m.inf_sup)),
        }
    }

    /// Best dual is not below the primal by more than `k` combined standard errors.
    pub fn weak_duality_holds(&self, k: f64) -> bool {
        let se = (self.best_dual_std_error.powi(2) + self.primal.std_error.powi(2)).sqrt();
        self.best_dual >= self.primal.value - k * se
    }
}
