use serde::{Deserialize, Serialize};

use super::model::{dual_objective, DualValue, ModelPair};
use crate::error::{Error, Result};
use crate::generators::Generator;
use crate::optim::{box_grid, nelder_mead};
use crate::stochastic::PathBatch;

/// Evaluation budget for grid-plus-simplex searches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchBudget {
    /// Grid points per parameter axis.
    pub grid_per_axis: usize,
    /// Nelder-Mead iterations after the grid pass (0 disables refinement).
    pub refine_iterations: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            grid_per_axis: 11,
            refine_iterations: 60,
        }
    }
}

/// One evaluated point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub family: String,
    pub params: Vec<f64>,
    pub value: f64,
    pub std_error: f64,
    pub feasible: bool,
}

/// Parametric families of models searched by [`dual_search`].
#[derive(Debug, Clone)]
pub enum ModelFamily {
    /// Constant pairs with `beta` and each `q_j` in the given intervals.
    ConstantBox { beta: (f64, f64), q: Vec<(f64, f64)> },
    /// Constant pairs `beta = -|q|^2 / (2 coef) - margin`, parametrized by `q`.
    Parabola { coef: f64, margin: f64, q: Vec<(f64, f64)> },
    Fixed(Vec<ModelPair>),
    Union(Vec<ModelFamily>),
}

impl ModelFamily {
    pub fn label(&self) -> &'static str {
        match self {
            ModelFamily::ConstantBox { .. } => "constant-box",
            ModelFamily::Parabola { .. } => "parabola",
            ModelFamily::Fixed(_) => "fixed",
            ModelFamily::Union(_) => "union",
        }
    }

    /// Parameter box of a parametric member, `None` for fixed or union families.
    fn bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            ModelFamily::ConstantBox { beta, q } => Some((
                std::iter::once(beta.0).chain(q.iter().map(|b| b.0)).collect(),
                std::iter::once(beta.1).chain(q.iter().map(|b| b.1)).collect(),
            )),
            ModelFamily::Parabola { q, .. } => {
                Some((q.iter().map(|b| b.0).collect(), q.iter().map(|b| b.1).collect()))
            }
            _ => None,
        }
    }

    /// The constant model for parameter vector `x` of a parametric member.
    fn model_at(&self, x: &[f64], paths: &PathBatch) -> Result<ModelPair> {
        match self {
            ModelFamily::ConstantBox { .. } => ModelPair::constant(paths, x[0], x[1..].to_vec()),
            ModelFamily::Parabola { coef, margin, .. } => {
                let sq: f64 = x.iter().map(|v| v * v).sum();
                ModelPair::constant(paths, -sq / (2.0 * coef) - margin, x.to_vec())
            }
            _ => Err(Error::invalid("not a parametric family")),
        }
    }

    /// All models of a discretization with `per_axis` points per parameter axis.
    pub fn discretize(&self, per_axis: usize, paths: &PathBatch) -> Result<Vec<ModelPair>> {
        match self {
            ModelFamily::Fixed(models) => Ok(models.clone()),
            ModelFamily::Union(members) => {
                let mut out = Vec::new();
                for f in members {
                    out.extend(f.discretize(per_axis, paths)?);
                }
                Ok(out)
            }
            _ => {
                let (lo, hi) = self.bounds().expect("parametric family");
                box_grid(&lo, &hi, per_axis)
                    .iter()
                    .map(|x| self.model_at(x, paths))
                    .collect()
            }
        }
    }

    pub(crate) fn validate(&self, dim: usize) -> Result<()> {
        let check_box = |b: &[(f64, f64)], what: &str| -> Result<()> {
            for (lo, hi) in b {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::invalid(format!("{what} interval [{lo}, {hi}] is invalid")));
                }
            }
            Ok(())
        };
        match self {
            ModelFamily::ConstantBox { beta, q } => {
                check_box(&[*beta], "beta")?;
                if q.len() != dim {
                    return Err(Error::invalid(format!("q box has {} axes, expected {dim}", q.len())));
                }
                check_box(q, "q")
            }
            ModelFamily::Parabola { coef, margin, q } => {
                if !(*coef > 0.0) || !(*margin >= 0.0) {
                    return Err(Error::invalid("parabola needs coef > 0 and margin >= 0"));
                }
                if q.len() != dim {
                    return Err(Error::invalid(format!("q box has {} axes, expected {dim}", q.len())));
                }
                check_box(q, "q")
            }
            ModelFamily::Fixed(models) => {
                if models.is_empty() {
                    return Err(Error::invalid("fixed model family is empty"));
                }
                Ok(())
            }
            ModelFamily::Union(members) => {
                if members.is_empty() {
                    return Err(Error::invalid("union of model families is empty"));
                }
                members.iter().try_for_each(|f| f.validate(dim))
            }
        }
    }
}

/// Result of [`dual_search`].
#[derive(Debug, Clone)]
pub struct DualSearchResult {
    pub best: ModelPair,
    pub value: f64,
    pub std_error: f64,
    pub evaluated: Vec<SweepRow>,
}

fn row(family: &str, model: &ModelPair, v: &DualValue) -> SweepRow {
    let params = model.params();
    SweepRow {
        family: if params.is_empty() { model.label() } else { family.to_string() },
        params,
        value: v.value(),
        std_error: v.std_error(),
        feasible: v.is_feasible(),
    }
}

fn search_member(
    family: &ModelFamily,
    g: &Generator,
    h: &[f64],
    paths: &PathBatch,
    budget: &SearchBudget,
    rows: &mut Vec<SweepRow>,
    best: &mut Option<(ModelPair, DualValue)>,
) -> Result<()> {
    let mut consider = |model: ModelPair, v: DualValue, rows: &mut Vec<SweepRow>| {
        rows.push(row(family.label(), &model, &v));
        if v.is_feasible() && best.as_ref().map_or(true, |(_, b)| v.value() < b.value()) {
            *best = Some((model, v));
        }
    };
    match family {
        ModelFamily::Fixed(models) => {
            for m in models {
                let v = dual_objective(m, g, h, paths)?;
                consider(m.clone(), v, rows);
            }
        }
        ModelFamily::Union(members) => {
            for f in members {
                search_member(f, g, h, paths, budget, rows, best)?;
            }
        }
        _ => {
            let (lo, hi) = family.bounds().expect("parametric family");
            let mut local: Option<(Vec<f64>, f64)> = None;
            for x in box_grid(&lo, &hi, budget.grid_per_axis) {
                let model = family.model_at(&x, paths)?;
                let v = dual_objective(&model, g, h, paths)?;
                if v.is_feasible() && local.as_ref().map_or(true, |(_, b)| v.value() < *b) {
                    local = Some((x.clone(), v.value()));
                }
                consider(model, v, rows);
            }
            if let (Some((x0, _)), true) = (local, budget.refine_iterations > 0) {
                let step: Vec<f64> = lo
                    .iter()
                    .zip(&hi)
                    .map(|(a, b)| ((b - a) / budget.grid_per_axis.max(2) as f64).max(1e-6))
                    .collect();
                let mut failure = None;
                let refined = nelder_mead(
                    |x| match family.model_at(x, paths).and_then(|m| dual_objective(&m, g, h, paths)) {
                        Ok(v) => v.value(),
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
                    1e-10,
                );
                if let Some(e) = failure {
                    return Err(e);
                }
                let model = family.model_at(&refined.x, paths)?;
                let v = dual_objective(&model, g, h, paths)?;
                consider(model, v, rows);
            }
        }
    }
    Ok(())
}

/// Minimizes the dual objective over a model family: a grid over each
/// parametric member followed by a Nelder-Mead refinement from its best point.
pub fn dual_search(
    family: &ModelFamily,
    g: &Generator,
    h: &[f64],
    paths: &PathBatch,
    budget: &SearchBudget,
) -> Result<DualSearchResult> {
    family.validate(paths.dim())?;
    let mut rows = Vec::new();
    let mut best = None;
    search_member(family, g, h, paths, budget, &mut rows, &mut best)?;
    match best {
        Some((best, v)) => Ok(DualSearchResult {
            value: v.value(),
            std_error: v.std_error(),
            best,
            evaluated: rows,
        }),
        None => Err(Error::NoFeasiblePoint(format!(
            "all {} evaluated models are infeasible",
            rows.len()
        ))),
    }
}
