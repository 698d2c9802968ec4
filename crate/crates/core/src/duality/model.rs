use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsde::{solve_linear_dual_rep, BsdeSolution};
use crate::error::{Error, Result};
use crate::generators::{conjugate, subgradient, ConjugateSearch, ConjugateValue, Generator};
use crate::stochastic::{girsanov_weight, PathBatch, ProcessPath};

/// How a model was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelDescriptor {
    Constant { beta: f64, q: Vec<f64> },
    /// Pathwise subgradient of the generator along a solution.
    Subgradient { generator: String },
    Process { label: String },
}

impl ModelDescriptor {
    pub fn label(&self) -> String {
        match self {
            ModelDescriptor::Constant { beta, q } => format!("constant(beta={beta}, q={q:?})"),
            ModelDescriptor::Subgradient { generator } => format!("subgradient({generator})"),
            ModelDescriptor::Process { label } => label.clone(),
        }
    }
}

/// A model `(beta, q)`: discount rate and Girsanov drift, both predictable.
#[derive(Debug, Clone)]
pub struct ModelPair {
    pub beta: ProcessPath,
    pub q: ProcessPath,
    /// `g*(beta, q)` along the paths when known in advance.
    pub penalty: Option<ProcessPath>,
    pub descriptor: ModelDescriptor,
}

impl ModelPair {
    pub fn constant(paths: &PathBatch, beta: f64, q: Vec<f64>) -> Result<Self> {
        if q.len() != paths.dim() {
            return Err(Error::invalid(format!(
                "model drift has {} components, Brownian dimension is {}",
                q.len(),
                paths.dim()
            )));
        }
        if !(beta.is_finite() && q.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(ModelPair {
            beta: ProcessPath::constant(paths.paths(), paths.nodes(), vec![beta]),
            q: ProcessPath::constant(paths.paths(), paths.nodes(), q.clone()),
            penalty: None,
            descriptor: ModelDescriptor::Constant { beta, q },
        })
    }

    /// The reference model `(0, 0)`.
    pub fn zero(paths: &PathBatch) -> Self {
        ModelPair::constant(paths, 0.0, vec![0.0; paths.dim()]).expect("zero model is valid")
    }

    pub fn from_processes(beta: ProcessPath, q: ProcessPath, label: impl Into<String>) -> Result<Self> {
        if beta.width() != 1 || beta.nodes() != q.nodes() {
            return Err(Error::invalid("discount rate must be scalar and share the grid of q"));
        }
        Ok(ModelPair {
            beta,
            q,
            penalty: None,
            descriptor: ModelDescriptor::Process { label: label.into() },
        })
    }

    pub fn label(&self) -> String {
        self.descriptor.label()
    }

    /// Constant parameters `[beta, q...]`, empty for path-dependent models.
    pub fn params(&self) -> Vec<f64> {
        match &self.descriptor {
            ModelDescriptor::Constant { beta, q } => std::iter::once(*beta).chain(q.iter().copied()).collect(),
            _ => Vec::new(),
        }
    }

    /// Discount `D_{0,t_i} = exp(-sum_{k<i} beta_k dt)`.
    pub fn discount(&self, paths: &PathBatch) -> Result<ProcessPath> {
        self.beta.check_shape(paths, 1, "discount rate")?;
        let nodes = paths.nodes();
        let dt = paths.grid().dt();
        if let Some(b) = self.beta.constant_value() {
            let b = b[0];
            let one_path: Vec<f64> = (0..nodes).map(|i| (-b * dt * i as f64).exp()).collect();
            return Ok(ProcessPath::from_paths(paths.paths(), nodes, 1, |_, out| {
                out.copy_from_slice(&one_path)
            })
            .with_predictable(false));
        }
        Ok(ProcessPath::from_paths(paths.paths(), nodes, 1, |m, out| {
            let mut acc = 0.0_f64;
            for (i, o) in out.iter_mut().enumerate() {
                *o = (-acc).exp();
                if i + 1 < nodes {
                    acc += self.beta.scalar(m, i) * dt;
                }
            }
        })
        .with_predictable(false))
    }

    /// Density process of `Q^q` with respect to `P`.
    pub fn weight(&self, paths: &PathBatch) -> Result<ProcessPath> {
        girsanov_weight(&self.q, paths)
    }

    /// Same model with constants added to `beta` and `q`; any cached penalty is dropped.
    pub fn shifted(&self, d_beta: f64, d_q: &[f64]) -> Result<Self> {
        let shift = |p: &ProcessPath, delta: &[f64]| -> Result<ProcessPath> {
            if let Some(c) = p.constant_value() {
                let v = c.iter().zip(delta).map(|(a, b)| a + b).collect();
                return Ok(ProcessPath::constant(p.paths(), p.nodes(), v));
            }
            let w = p.width();
            Ok(ProcessPath::from_paths(p.paths(), p.nodes(), w, |m, out| {
                for i in 0..p.nodes() {
                    for k in 0..w {
                        out[i * w + k] = p.at(m, i)[k] + delta[k];
                    }
                }
            }))
        };
        if d_q.len() != self.q.width() {
            return Err(Error::invalid("shift has the wrong dimension"));
        }
        let descriptor = match &self.descriptor {
            ModelDescriptor::Constant { beta, q } => ModelDescriptor::Constant {
                beta: beta + d_beta,
                q: q.iter().zip(d_q).map(|(a, b)| a + b).collect(),
            },
            other => ModelDescriptor::Process {
                label: format!("{} shifted by ({d_beta}, {d_q:?})", other.label()),
            },
        };
        Ok(ModelPair {
            beta: shift(&self.beta, &[d_beta])?,
            q: shift(&self.q, d_q)?,
            penalty: None,
            descriptor,
        })
    }

    /// `g*(beta, q)` on every node; [`Error::InfeasibleModel`] where it is infinite.
    pub fn penalty_path(&self, g: &Generator, paths: &PathBatch) -> Result<ProcessPath> {
        if let Some(p) = &self.penalty {
            return Ok(p.clone());
        }
        let search = ConjugateSearch::default();
        if let (Some(b), Some(q)) = (self.beta.constant_value(), self.q.constant_value()) {
            return match conjugate(g, b[0], q, &search) {
                ConjugateValue::Finite { value, .. } => {
                    Ok(ProcessPath::constant(paths.paths(), paths.nodes(), vec![value]))
                }
                ConjugateValue::Infinite => Err(Error::InfeasibleModel(format!(
                    "g* is infinite at beta = {}, q = {q:?}",
                    b[0]
                ))),
            };
        }
        let nodes = paths.nodes();
        let steps = paths.grid().steps();
        let values = ProcessPath::from_paths(paths.paths(), nodes, 1, |m, out| {
            for i in 0..steps {
                out[i] = conjugate(g, self.beta.scalar(m, i), self.q.at(m, i), &search).value();
            }
            out[steps] = out[steps.saturating_sub(1)];
        });
        for m in 0..paths.paths() {
            for i in 0..steps {
                if !values.scalar(m, i).is_finite() {
                    return Err(Error::InfeasibleModel(format!(
                        "g* is infinite on path {m} at node {i}"
                    )));
                }
            }
        }
        Ok(values)
    }
}

/// Dual objective value of one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DualValue {
    Finite { value: f64, std_error: f64 },
    /// `g*` is infinite somewhere along the model: the objective is `+inf`.
    Infeasible,
    /// Finite penalty, but the discounted payoff overflows to `+inf` on some path.
    Unbounded,
}

impl DualValue {
    pub fn value(&self) -> f64 {
        match self {
            DualValue::Finite { value, .. } => *value,
            DualValue::Infeasible | DualValue::Unbounded => f64::INFINITY,
        }
    }

    pub fn std_error(&self) -> f64 {
        match self {
            DualValue::Finite { std_error, .. } => *std_error,
            DualValue::Infeasible | DualValue::Unbounded => f64::NAN,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, DualValue::Finite { .. })
    }
}

/// `E_Q[D_{0,T} H + int_0^T D_{0,u} g*(beta_u, q_u) du]` for one model.
pub fn dual_objective(model: &ModelPair, g: &Generator, h: &[f64], paths: &PathBatch) -> Result<DualValue> {
    let penalty = match model.penalty_path(g, paths) {
        Ok(p) => p,
        Err(Error::InfeasibleModel(_)) => return Ok(DualValue::Infeasible),
        Err(e) => return Err(e),
    };
    let (value, std_error) = solve_linear_dual_rep(model, &penalty, h, paths)?;
    if value == f64::INFINITY {
        return Ok(DualValue::Unbounded);
    }
    Ok(DualValue::Finite { value, std_error })
}

/// Model `(beta_t, q_t) = subgradient of g at (Y_t, Z_t)` along a solution.
///
/// The penalty is cached from the Fenchel-Young equality
/// `g*(beta, q) = beta Y + q.Z - g(Y, Z)`.
pub fn subgradient_model(solution: &BsdeSolution, g: &Generator) -> Result<ModelPair> {
    let count = solution.y.paths();
    let nodes = solution.grid.nodes();
    let steps = solution.grid.steps();
    let d = solution.z.width();
    let positive = g.requires_positive_level();
    let floor = solution.config.y_floor;
    let rows: Vec<Result<Vec<f64>>> = (0..count)
        .into_par_iter()
        .map(|m| {
            // per node: beta, q (d values), penalty
            let mut row = vec![0.0; nodes * (d + 2)];
            for i in 0..steps {
                let y = solution.y.scalar(m, i);
                let y = if positive { y.max(floor) } else { y };
                let z = solution.z.at(m, i);
                let (beta, q) = subgradient(g, y, z)?;
                let inner: f64 = q.iter().zip(z).map(|(a, b)| a * b).sum();
                let gv = g.eval(y, z);
                let penalty = beta * y + inner - gv;
                let scale = (beta * y).abs() + inner.abs() + gv.abs();
                let penalty = if penalty.abs() <= 1e-12 * scale { 0.0 } else { penalty };
                let slot = &mut row[i * (d + 2)..(i + 1) * (d + 2)];
                slot[0] = beta;
                slot[1..=d].copy_from_slice(&q);
                slot[d + 1] = penalty;
            }
            let (head, tail) = row.split_at_mut(steps * (d + 2));
            tail.copy_from_slice(&head[(steps - 1) * (d + 2)..]);
            Ok(row)
        })
        .collect();
    let mut beta = Vec::with_capacity(count * nodes);
    let mut q = Vec::with_capacity(count * nodes * d);
    let mut penalty = Vec::with_capacity(count * nodes);
    for row in rows {
        let row = row?;
        for node in row.chunks(d + 2) {
            beta.push(node[0]);
            q.extend_from_slice(&node[1..=d]);
            penalty.push(node[d + 1]);
        }
    }
    Ok(ModelPair {
        beta: ProcessPath::dense(count, nodes, 1, beta)?,
        q: ProcessPath::dense(count, nodes, d, q)?,
        penalty: Some(ProcessPath::dense(count, nodes, 1, penalty)?),
        descriptor: ModelDescriptor::Subgradient { generator: g.name() },
    })
}

/// Result of [`close_gap_with_subgradient`].
#[derive(Debug, Clone)]
pub struct GapEntry {
    pub model: ModelPair,
    pub dual: DualValue,
    pub primal: f64,
    pub primal_std_error: f64,
    /// `|dual - primal| / |primal|`.
    pub relative_gap: f64,
}

/// Evaluates the dual objective at the subgradient model of a solution.
pub fn close_gap_with_subgradient(solution: &BsdeSolution, g: &Generator, paths: &PathBatch) -> Result<GapEntry> {
    if solution.y.paths() != paths.paths() || solution.grid.nodes() != paths.nodes() {
        return Err(Error::invalid("solution was computed on a different path batch"));
    }
    let model = subgradient_model(solution, g)?;
    let dual = dual_objective(&model, g, &solution.terminal, paths)?;
    let relative_gap = (dual.value() - solution.y0).abs() / solution.y0.abs();
    Ok(GapEntry {
        model,
        dual,
        primal: solution.y0,
        primal_std_error: solution.y0_std_error,
        relative_gap,
    })
}
