//! Experiment configuration: TOML files with a JSON mirror.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use maxsub::bsde::SolverConfig;
use maxsub::duality::{ModelFamily, ModelPair, SearchBudget, StrategyFamily};
use maxsub::generators::{make_ce_generator, UtilitySpec};
use maxsub::{BasisKind, Generator, GeneratorSpec, MarketParams, PathBatch, RegressionBasis, StateSelector, Strategy, Utility};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub market: MarketConfig,
    pub grid: GridConfig,
    pub mc: McConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilitySpec>,
    /// Defaults to the certainty-equivalent generator of `utility`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
    #[serde(default)]
    pub endowment: EndowmentConfig,
    pub strategy: StrategyConfig,
    pub models: ModelConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub search: SearchBudget,
    #[serde(default)]
    pub minimax: MinimaxSection,
    #[serde(default)]
    pub muckenhoupt: MuckenhouptSection,
    #[serde(default)]
    pub characterize: CharacterizeSection,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub mu: Vec<f64>,
    /// One row of length `d` per stock.
    pub sigma: Vec<Vec<f64>>,
    pub x0: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub paths: usize,
    pub seed: u64,
}

/// Endowment `xi`, a bounded nonnegative claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EndowmentConfig {
    Constant {
        value: f64,
    },
    /// `min(cap, max(0, intercept + slope S_T / S_0))` for stock `stock`.
    StockLinear {
        intercept: f64,
        slope: f64,
        cap: f64,
        #[serde(default)]
        stock: usize,
    },
}

impl Default for EndowmentConfig {
    fn default() -> Self {
        EndowmentConfig::Constant { value: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    ConstantFraction,
    ConstantAmount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub family: StrategyKind,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Strategy used by `simulate`, `dual`, `gap` and `characterize`;
    /// the optimizer's choice when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Only the reference model `(0, 0)`.
    Zero,
    /// `beta = -|q|^2 / (2 coef) - margin` with `q` in the box.
    Parabola {
        #[serde(default = "one")]
        coef: f64,
        #[serde(default)]
        margin: f64,
        lower: Vec<f64>,
        upper: Vec<f64>,
        #[serde(default)]
        include_subgradient: bool,
    },
    Box {
        beta: (f64, f64),
        lower: Vec<f64>,
        upper: Vec<f64>,
        #[serde(default)]
        include_subgradient: bool,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisChoice {
    Polynomial,
    Bins,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateChoice {
    Wealth,
    LogWealth,
    Brownian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub basis: BasisChoice,
    /// Polynomial degree or number of bins.
    pub degree: usize,
    pub state: StateChoice,
    pub picard: usize,
    pub y_floor: f64,
    pub bootstrap: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        SolverSection {
            basis: BasisChoice::Polynomial,
            degree: 4,
            state: StateChoice::Wealth,
            picard: d.picard,
            y_floor: d.y_floor,
            bootstrap: d.bootstrap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinimaxSection {
    pub strategy_points: usize,
    pub model_points: usize,
    /// Smaller path batch for the payoff matrix; the main batch when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

impl Default for MinimaxSection {
    fn default() -> Self {
        MinimaxSection {
            strategy_points: 13,
            model_points: 31,
            paths: None,
            steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MuckenhouptSection {
    pub p: f64,
    /// Checked time in years; must lie on the grid.
    pub tau: f64,
    /// Market price of risk to test; the market's own when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
}

impl Default for MuckenhouptSection {
    fn default() -> Self {
        MuckenhouptSection {
            p: 2.0,
            tau: 0.0,
            theta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CharacterizeSection {
    /// Step counts of the refinement series.
    pub steps: Vec<usize>,
}

impl Default for CharacterizeSection {
    fn default() -> Self {
        CharacterizeSection { steps: vec![50, 100, 200] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Json,
    Csv,
    #[default]
    Both,
}

impl OutputFormat {
    pub fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }

    pub fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            format: OutputFormat::Both,
        }
    }
}

fn config_error(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    /// Reads a `.toml` or `.json` file; other extensions are tried as TOML then JSON.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let parsed = match ext {
            "json" => Self::from_json(&text),
            "toml" => Self::from_toml(&text),
            _ => Self::from_toml(&text).or_else(|_| Self::from_json(&text)),
        }?;
        parsed.validate()?;
        Ok(parsed)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("TOML: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("JSON: {e}")))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("TOML: {e}")))
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::Config(format!("JSON: {e}")))
    }

    /// Checks every field against the preconditions of the operations it feeds.
    pub fn validate(&self) -> Result<(), CliError> {
        let market = self.market_params()?;
        if !(self.market.horizon.is_finite() && self.market.horizon > 0.0) {
            return Err(config_error("market.horizon", "must be positive"));
        }
        if self.grid.steps == 0 {
            return Err(config_error("grid.steps", "must be at least 1"));
        }
        if self.mc.paths < 2 {
            return Err(config_error("mc.paths", "must be at least 2"));
        }
        self.utility()?;
        self.generator()?;
        match self.endowment {
            EndowmentConfig::Constant { value } => {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(config_error("endowment.value", "must be finite and nonnegative"));
                }
            }
            EndowmentConfig::StockLinear {
                intercept,
                slope,
                cap,
                stock,
            } => {
                if !(cap.is_finite() && cap >= 0.0 && intercept.is_finite() && slope.is_finite()) {
                    return Err(config_error("endowment", "intercept and slope must be finite, cap finite and >= 0"));
                }
                if stock >= market.stocks() {
                    return Err(config_error("endowment.stock", format!("no stock {stock}")));
                }
            }
        }
        self.strategy_family()?;
        let n = market.stocks();
        if let Some(r) = &self.strategy.reference {
            if r.len() != n || r.iter().any(|v| !v.is_finite()) {
                return Err(config_error("strategy.reference", format!("needs {n} finite values")));
            }
        }
        self.model_family_shape(market.dim())?;
        let s = &self.solver;
        if s.picard == 0 {
            return Err(config_error("solver.picard", "must be at least 1"));
        }
        if s.degree == 0 && s.basis == BasisChoice::Bins {
            return Err(config_error("solver.degree", "bins need a positive count"));
        }
        if !(s.y_floor > 0.0) {
            return Err(config_error("solver.y_floor", "must be positive"));
        }
        if self.search.grid_per_axis == 0 {
            return Err(config_error("search.grid_per_axis", "must be at least 1"));
        }
        if self.minimax.strategy_points == 0 || self.minimax.model_points == 0 {
            return Err(config_error("minimax", "grid sizes must be positive"));
        }
        if self.minimax.paths.is_some_and(|p| p < 2) || self.minimax.steps == Some(0) {
            return Err(config_error("minimax", "paths must be >= 2 and steps >= 1"));
        }
        let mk = &self.muckenhoupt;
        if !(mk.p > 1.0) {
            return Err(config_error("muckenhoupt.p", "must exceed 1"));
        }
        self.tau_index()?;
        if let Some(t) = &mk.theta {
            if t.len() != market.dim() || t.iter().any(|v| !v.is_finite()) {
                return Err(config_error("muckenhoupt.theta", format!("needs {} finite values", market.dim())));
            }
        }
        if self.characterize.steps.iter().any(|n| *n == 0) {
            return Err(config_error("characterize.steps", "step counts must be positive"));
        }
        Ok(())
    }

    pub fn market_params(&self) -> Result<MarketParams, CliError> {
        MarketParams::new(self.market.mu.clone(), self.market.sigma.clone(), self.market.x0)
            .map_err(|e| config_error("market", e))
    }

    pub fn utility(&self) -> Result<Option<Utility>, CliError> {
        self.utility
            .as_ref()
            .map(|u| u.build())
            .transpose()
            .map_err(|e| config_error("utility", e))
    }

    pub fn generator(&self) -> Result<Generator, CliError> {
        let utility = self.utility()?;
        match (&self.generator, utility) {
            (Some(spec), u) => spec.build_with(u).map_err(|e| config_error("generator", e)),
            (None, Some(u)) => make_ce_generator(u).map_err(|e| config_error("generator", e)),
            (None, None) => Err(config_error("generator", "needs a generator or a utility")),
        }
    }

    pub fn solver(&self) -> SolverConfig {
        let s = &self.solver;
        let kind = match s.basis {
            BasisChoice::Polynomial => BasisKind::Polynomial { degree: s.degree },
            BasisChoice::Bins => BasisKind::Bins { count: s.degree },
        };
        let state = match s.state {
            StateChoice::Wealth => StateSelector::Wealth,
            StateChoice::LogWealth => StateSelector::LogWealth,
            StateChoice::Brownian => StateSelector::Brownian(0),
        };
        SolverConfig {
            basis: RegressionBasis { kind, state },
            picard: s.picard,
            y_floor: s.y_floor,
            bootstrap: s.bootstrap,
        }
    }

    /// The strategy family and, when the box is a single point, that strategy.
    pub fn strategy_family(&self) -> Result<(StrategyFamily, Option<Strategy>), CliError> {
        let n = self.market.mu.len();
        let (lo, hi) = (&self.strategy.lower, &self.strategy.upper);
        if lo.len() != n || hi.len() != n {
            return Err(config_error("strategy", format!("lower and upper need {n} values")));
        }
        if lo.iter().zip(hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b)) {
            return Err(config_error("strategy", "need finite lower <= upper"));
        }
        let make = |x: &[f64]| match self.strategy.family {
            StrategyKind::ConstantFraction => Strategy::ConstantFraction(x.to_vec()),
            StrategyKind::ConstantAmount => Strategy::ConstantAmount(x.to_vec()),
        };
        if lo == hi {
            let s = make(lo);
            return Ok((StrategyFamily::Fixed(vec![s.clone()]), Some(s)));
        }
        let bounds = lo.iter().copied().zip(hi.iter().copied()).collect();
        let family = match self.strategy.family {
            StrategyKind::ConstantFraction => StrategyFamily::ConstantFraction { bounds },
            StrategyKind::ConstantAmount => StrategyFamily::ConstantAmount { bounds },
        };
        Ok((family, None))
    }

    pub fn reference_strategy(&self) -> Option<Strategy> {
        self.strategy.reference.as_ref().map(|x| match self.strategy.family {
            StrategyKind::ConstantFraction => Strategy::ConstantFraction(x.clone()),
            StrategyKind::ConstantAmount => Strategy::ConstantAmount(x.clone()),
        })
    }

    fn model_family_shape(&self, d: usize) -> Result<(), CliError> {
        let check = |lo: &[f64], hi: &[f64]| {
            if lo.len() != d || hi.len() != d {
                return Err(config_error("models", format!("lower and upper need {d} values")));
            }
            if lo.iter().zip(hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b)) {
                return Err(config_error("models", "need finite lower <= upper"));
            }
            Ok(())
        };
        match &self.models {
            ModelConfig::Zero => Ok(()),
            ModelConfig::Parabola {
                coef,
                margin,
                lower,
                upper,
                ..
            } => {
                if !(*coef > 0.0 && *margin >= 0.0) {
                    return Err(config_error("models", "parabola needs coef > 0 and margin >= 0"));
                }
                check(lower, upper)
            }
            ModelConfig::Box { beta, lower, upper, .. } => {
                if !(beta.0.is_finite() && beta.1.is_finite() && beta.0 <= beta.1) {
                    return Err(config_error("models.beta", "need finite lower <= upper"));
                }
                check(lower, upper)
            }
        }
    }

    /// Parametric model family on `paths`, without any subgradient member.
    pub fn model_family(&self, paths: &PathBatch) -> ModelFamily {
        let boxed = |lo: &[f64], hi: &[f64]| lo.iter().copied().zip(hi.iter().copied()).collect::<Vec<_>>();
        match &self.models {
            ModelConfig::Zero => ModelFamily::Fixed(vec![ModelPair::zero(paths)]),
            ModelConfig::Parabola {
                coef,
                margin,
                lower,
                upper,
                ..
            } => ModelFamily::Parabola {
                coef: *coef,
                margin: *margin,
                q: boxed(lower, upper),
            },
            ModelConfig::Box { beta, lower, upper, .. } => ModelFamily::ConstantBox {
                beta: *beta,
                q: boxed(lower, upper),
            },
        }
    }

    pub fn include_subgradient(&self) -> bool {
        match self.models {
            ModelConfig::Zero => false,
            ModelConfig::Parabola {
                include_subgradient, ..
            }
            | ModelConfig::Box {
                include_subgradient, ..
            } => include_subgradient,
        }
    }

    pub fn tau_index(&self) -> Result<usize, CliError> {
        let tau = self.muckenhoupt.tau;
        let steps = self.grid.steps as f64;
        let pos = tau / self.market.horizon * steps;
        let idx = pos.round();
        if !(tau >= 0.0 && tau <= self.market.horizon) || (pos - idx).abs() > 1e-9 {
            return Err(config_error("muckenhoupt.tau", format!("{tau} is not a grid time")));
        }
        Ok(idx as usize)
    }
}
