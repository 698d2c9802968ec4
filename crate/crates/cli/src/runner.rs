//! Subcommands on top of one prepared experiment.

use maxsub::bsde::{admissibility_drift, solve_backward, subsolution_residual, BsdeSolution, SolverConfig};
use maxsub::characterize::{foc_residual, max_principle_residual, solve_adjoint};
use maxsub::duality::{
    close_gap_with_subgradient, dual_search, minimax_gap, optimize_strategy, primal_value, subgradient_model,
    DualReport, MinimaxConfig, ModelFamily, PrimalMethod,
};
use maxsub::generators::{verify_conditions, SampleGrid};
use maxsub::market::{simulate_wealth, to_fraction_process};
use maxsub::stats::{mean_and_se, weighted_mean_and_se};
use maxsub::stochastic::{check_muckenhoupt, girsanov_weight};
use maxsub::{gen_brownian, Generator, MarketParams, PathBatch, ProcessPath, Strategy, TimeGrid, Utility, WealthPath};

use crate::config::{EndowmentConfig, ExperimentConfig};
use crate::error::{CliError, During};
use crate::report::{
    CharacterizeRow, CharacterizeSection, ConditionsSection, GapSection, MinimaxSection, MuckenhouptSection,
    PrimalSection, Report, Series, SimulateSection, SubsolutionSection,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Primal,
    Dual,
    Gap,
    Characterize,
    CheckConditions,
    Muckenhoupt,
    /// Every section in one report.
    Run,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Primal => "primal",
            Command::Dual => "dual",
            Command::Gap => "gap",
            Command::Characterize => "characterize",
            Command::CheckConditions => "check-conditions",
            Command::Muckenhoupt => "muckenhoupt",
            Command::Run => "run",
        }
    }
}

fn strategy_name(s: &Strategy) -> String {
    format!("{}{:?}", s.label(), s.params())
}

/// Endowment values on the paths of `paths`.
fn endowment(config: &EndowmentConfig, market: &MarketParams, paths: &PathBatch) -> Vec<f64> {
    match *config {
        EndowmentConfig::Constant { value } => vec![value; paths.paths()],
        EndowmentConfig::StockLinear {
            intercept,
            slope,
            cap,
            stock,
        } => {
            let horizon = paths.grid().horizon();
            let row: Vec<f64> = market.sigma().row(stock).iter().copied().collect();
            let drift = (market.mu()[stock] - 0.5 * row.iter().map(|v| v * v).sum::<f64>()) * horizon;
            let terminal: Vec<Vec<f64>> = (0..paths.dim()).map(|j| paths.terminal(j)).collect();
            (0..paths.paths())
                .map(|m| {
                    let noise: f64 = row.iter().enumerate().map(|(j, s)| s * terminal[j][m]).sum();
                    (intercept + slope * (drift + noise).exp()).max(0.0).min(cap)
                })
                .collect()
        }
    }
}

/// Largest `|dg/dy| + |dg/dz|` seen on a subsample of the solution nodes, at least 1.
fn slope_bound(g: &Generator, sol: &BsdeSolution) -> f64 {
    let positive = g.requires_positive_level();
    let steps = sol.grid.steps();
    let mut bound: f64 = 1.0;
    for m in (0..sol.y.paths()).step_by(7) {
        for i in 0..steps {
            let y = sol.y.scalar(m, i);
            let y = if positive { y.max(sol.config.y_floor) } else { y };
            let z = sol.z.at(m, i).to_vec();
            let base = g.eval(y, &z);
            let hy = 1e-6 * y.abs().max(1e-3);
            let mut slope = ((g.eval(y + hy, &z) - base) / hy).abs();
            let mut bumped = z.clone();
            for j in 0..z.len() {
                let hz = 1e-6 * z[j].abs().max(1e-3);
                bumped[j] = z[j] + hz;
                let up = g.eval(y, &bumped);
                bumped[j] = z[j] - hz;
                let down = g.eval(y, &bumped);
                bumped[j] = z[j];
                slope += ((up - down) / (2.0 * hz)).abs();
            }
            if slope.is_finite() {
                bound = bound.max(slope);
            }
        }
    }
    bound
}

/// Market, generator, simulated paths and endowment of one configuration.
pub struct Experiment {
    pub config: ExperimentConfig,
    market: MarketParams,
    utility: Option<Utility>,
    generator: Generator,
    solver: SolverConfig,
    paths: PathBatch,
    xi: Vec<f64>,
}

struct Reference {
    strategy: Strategy,
    wealth: WealthPath,
    solution: Option<BsdeSolution>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, CliError> {
        config.validate()?;
        let market = config.market_params()?;
        let utility = config.utility()?;
        let generator = config.generator()?;
        let solver = config.solver();
        let paths = Self::batch(&config, &market, config.grid.steps, config.mc.paths)?;
        let xi = endowment(&config.endowment, &market, &paths);
        Ok(Experiment {
            config,
            market,
            utility,
            generator,
            solver,
            paths,
            xi,
        })
    }

    fn batch(config: &ExperimentConfig, market: &MarketParams, steps: usize, count: usize) -> Result<PathBatch, CliError> {
        let grid = TimeGrid::new(config.market.horizon, steps).during("stochastic", "TimeGrid::new")?;
        gen_brownian(grid, count, market.dim(), config.mc.seed).during("stochastic", "gen_brownian")
    }

    pub fn paths(&self) -> &PathBatch {
        &self.paths
    }

    pub fn endowment(&self) -> &[f64] {
        &self.xi
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn run(&self, command: Command) -> Result<Report, CliError> {
        let mut config = serde_json::to_value(&self.config).map_err(|e| CliError::Output(e.to_string()))?;
        if let Some(map) = config.as_object_mut() {
            map.remove("output");
        }
        let mut report = Report {
            command: command.name().into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: self.config.mc.seed,
            paths: self.paths.paths(),
            steps: self.paths.grid().steps(),
            generator: self.generator.name(),
            config,
            simulate: None,
            primal: None,
            dual: None,
            gap: None,
            minimax: None,
            admissibility: None,
            subsolution: None,
            muckenhoupt: None,
            conditions: None,
            characterize: None,
            notes: Vec::new(),
            sweep: Vec::new(),
            series: Vec::new(),
        };
        let mut reference = None;
        match command {
            Command::Simulate => self.simulate(&mut report, &mut reference)?,
            Command::Primal => self.primal(&mut report)?,
            Command::Dual => self.dual(&mut report, &mut reference)?,
            Command::Gap => {
                self.gap(&mut report, &mut reference)?;
                self.bsde_diagnostics(&mut report, &mut reference)?;
            }
            Command::Characterize => self.characterize(&mut report, &mut reference)?,
            Command::CheckConditions => self.conditions(&mut report),
            Command::Muckenhoupt => self.muckenhoupt(&mut report)?,
            Command::Run => {
                self.conditions(&mut report);
                self.muckenhoupt(&mut report)?;
                self.primal(&mut report)?;
                self.simulate(&mut report, &mut reference)?;
                self.dual(&mut report, &mut reference)?;
                self.gap(&mut report, &mut reference)?;
                self.bsde_diagnostics(&mut report, &mut reference)?;
                self.minimax(&mut report)?;
                self.characterize(&mut report, &mut reference)?;
            }
        }
        Ok(report)
    }

    fn terminal(&self, wealth: &WealthPath) -> Vec<f64> {
        wealth.terminal().iter().zip(&self.xi).map(|(x, e)| x + e).collect()
    }

    /// Configured reference strategy, the single member of a point family, or the optimizer's choice.
    fn reference<'a>(&self, report: &mut Report, slot: &'a mut Option<Reference>) -> Result<&'a mut Reference, CliError> {
        if slot.is_none() {
            let strategy = match self.config.reference_strategy() {
                Some(s) => s,
                None => match self.config.strategy_family()? {
                    (_, Some(s)) => s,
                    (_, None) => {
                        if report.primal.is_none() {
                            self.primal(report)?;
                        }
                        self.best_strategy(report)
                    }
                },
            };
            let wealth = simulate_wealth(&strategy, &self.market, &self.paths).during("market", "simulate_wealth")?;
            *slot = Some(Reference {
                strategy,
                wealth,
                solution: None,
            });
        }
        Ok(slot.as_mut().expect("set above"))
    }

    fn best_strategy(&self, report: &Report) -> Strategy {
        let p = report.primal.as_ref().expect("primal section present");
        match self.config.strategy.family {
            crate::config::StrategyKind::ConstantFraction => Strategy::ConstantFraction(p.params.clone()),
            crate::config::StrategyKind::ConstantAmount => Strategy::ConstantAmount(p.params.clone()),
        }
    }

    fn solution<'a>(&self, report: &mut Report, slot: &'a mut Option<Reference>) -> Result<&'a mut Reference, CliError> {
        let r = self.reference(report, slot)?;
        if r.solution.is_none() {
            let h = self.terminal(&r.wealth);
            let sol =
                solve_backward(&self.generator, &h, &r.wealth, &self.paths, &self.solver).during("bsde", "solve_backward")?;
            r.solution = Some(sol);
        }
        Ok(r)
    }

    fn simulate(&self, report: &mut Report, slot: &mut Option<Reference>) -> Result<(), CliError> {
        let r = self.reference(report, slot)?;
        let terminal = r.wealth.terminal();
        let (mean, se) = mean_and_se(&terminal);
        let std = se * (terminal.len() as f64).sqrt();
        let minus_theta: Vec<f64> = self.market.theta().iter().map(|v| -v).collect();
        let q = ProcessPath::constant(self.paths.paths(), self.paths.nodes(), minus_theta);
        let weight = girsanov_weight(&q, &self.paths).during("stochastic", "girsanov_weight")?;
        let (q_mean, q_se) = weighted_mean_and_se(&terminal, &weight.terminal());
        let grid = *self.paths.grid();
        let points = (0..=grid.steps())
            .map(|i| {
                let xs: Vec<f64> = (0..self.paths.paths()).map(|m| r.wealth.at(m, i)).collect();
                (grid.time(i), mean_and_se(&xs).0)
            })
            .collect();
        report.series.push(Series {
            name: "wealth_mean".into(),
            x_label: "t".into(),
            y_label: "mean_wealth".into(),
            points,
        });
        report.simulate = Some(SimulateSection {
            strategy: strategy_name(&r.strategy),
            terminal_mean: mean,
            terminal_std: std,
            min_wealth: r.wealth.min(),
            absorbed_paths: r.wealth.absorbed_paths,
            q_terminal_mean: q_mean,
            q_std_error: q_se,
            supermartingale: q_mean <= self.market.x0() + 3.0 * q_se,
        });
        Ok(())
    }

    fn primal(&self, report: &mut Report) -> Result<(), CliError> {
        let (family, _) = self.config.strategy_family()?;
        let res = optimize_strategy(
            &family,
            &self.generator,
            self.utility.as_ref(),
            &self.xi,
            &self.market,
            &self.paths,
            &self.solver,
            &self.config.search,
        )
        .during("duality", "optimize_strategy")?;
        let mut points: Vec<(f64, f64)> = res
            .evaluated
            .iter()
            .filter(|r| r.feasible && !r.params.is_empty())
            .map(|r| (r.params[0], r.value))
            .collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        report.series.push(Series {
            name: "primal_vs_strategy".into(),
            x_label: "pi_0".into(),
            y_label: "primal".into(),
            points,
        });
        report.sweep.extend(res.evaluated.iter().map(|r| ("primal".to_string(), r.clone())));
        report.primal = Some(PrimalSection {
            strategy: strategy_name(&res.best),
            params: res.best.params(),
            value: res.value,
            std_error: res.std_error,
            method: res.method,
            evaluated: res.evaluated.len(),
        });
        Ok(())
    }

    fn model_family(&self, solution: Option<&BsdeSolution>) -> Result<ModelFamily, CliError> {
        let base = self.config.model_family(&self.paths);
        match (self.config.include_subgradient(), solution) {
            (true, Some(sol)) => {
                let sub = subgradient_model(sol, &self.generator).during("duality", "subgradient_model")?;
                Ok(ModelFamily::Union(vec![base, ModelFamily::Fixed(vec![sub])]))
            }
            _ => Ok(base),
        }
    }

    fn dual(&self, report: &mut Report, slot: &mut Option<Reference>) -> Result<(), CliError> {
        let include = self.config.include_subgradient();
        let r = if include { self.solution(report, slot)? } else { self.reference(report, slot)? };
        let h = self.terminal(&r.wealth);
        let family = self.model_family(r.solution.as_ref())?;
        let search = dual_search(&family, &self.generator, &h, &self.paths, &self.config.search)
            .during("duality", "dual_search")?;
        let primal = primal_value(
            &r.strategy,
            &self.generator,
            self.utility.as_ref(),
            &self.xi,
            &self.market,
            &self.paths,
            &self.solver,
            PrimalMethod::Auto,
        )
        .during("duality", "primal_value")?;
        let mut points: Vec<(f64, f64)> = search
            .evaluated
            .iter()
            .filter(|r| r.feasible && r.value.is_finite() && !r.params.is_empty())
            .map(|r| (*r.params.last().expect("nonempty"), r.value))
            .collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        report.series.push(Series {
            name: "dual_vs_model".into(),
            x_label: "q_last".into(),
            y_label: "dual".into(),
            points,
        });
        report.sweep.extend(search.evaluated.iter().map(|r| ("dual".to_string(), r.clone())));
        report.dual = Some(DualReport::new(primal, &search, None));
        Ok(())
    }

    fn gap(&self, report: &mut Report, slot: &mut Option<Reference>) -> Result<(), CliError> {
        let r = self.solution(report, slot)?;
        let sol = r.solution.as_ref().expect("solved");
        let entry = close_gap_with_subgradient(sol, &self.generator, &self.paths)
            .during("duality", "close_gap_with_subgradient")?;
        let grid = sol.grid;
        let points = (0..=grid.steps())
            .map(|i| (grid.time(i), mean_and_se(&sol.y.cross_section(i, 0)).0))
            .collect();
        report.series.push(Series {
            name: "y_mean".into(),
            x_label: "t".into(),
            y_label: "mean_y".into(),
            points,
        });
        report.gap = Some(GapSection {
            strategy: strategy_name(&r.strategy),
            model: entry.model.label(),
            primal: entry.primal,
            primal_std_error: entry.primal_std_error,
            dual: entry.dual.value(),
            dual_std_error: entry.dual.std_error(),
            relative_gap: entry.relative_gap,
        });
        Ok(())
    }

    fn bsde_diagnostics(&self, report: &mut Report, slot: &mut Option<Reference>) -> Result<(), CliError> {
        let r = self.solution(report, slot)?;
        let sol = r.solution.as_ref().expect("solved");
        match &self.utility {
            Some(u) => report.admissibility = Some(admissibility_drift(u, &self.generator, sol)),
            None => report.notes.push("admissibility drift needs a utility".into()),
        }
        let stride = (sol.grid.steps() / 10).max(1);
        let res = subsolution_residual(&sol.y, &sol.z, &self.generator, &sol.terminal, &self.paths, stride)
            .during("bsde", "subsolution_residual")?;
        let tolerance = 5.0 * sol.grid.dt() * slope_bound(&self.generator, sol);
        report.subsolution = Some(SubsolutionSection {
            dynamics: res.dynamics,
            terminal: res.terminal,
            pair_stride: stride,
            tolerance,
            within_tolerance: res.dynamics <= tolerance && res.terminal == 0.0,
        });
        Ok(())
    }

    fn minimax(&self, report: &mut Report) -> Result<(), CliError> {
        let mm = &self.config.minimax;
        let steps = mm.steps.unwrap_or(self.config.grid.steps);
        let count = mm.paths.unwrap_or(self.config.mc.paths);
        let smaller;
        let (paths, xi) = if steps == self.paths.grid().steps() && count == self.paths.paths() {
            (&self.paths, self.xi.clone())
        } else {
            smaller = Self::batch(&self.config, &self.market, steps, count)?;
            let xi = endowment(&self.config.endowment, &self.market, &smaller);
            (&smaller, xi)
        };
        let (family, _) = self.config.strategy_family()?;
        let config = MinimaxConfig {
            strategy_points: mm.strategy_points,
            model_points: mm.model_points,
            include_subgradient: self.config.include_subgradient(),
            solver: self.solver,
        };
        let res = minimax_gap(
            &family,
            &self.config.model_family(paths),
            &self.generator,
            &xi,
            &self.market,
            paths,
            &config,
        )
        .during("duality", "minimax_gap")?;
        if let Some(d) = report.dual.as_mut() {
            d.minimax = Some((res.sup_inf, res.inf_sup));
        }
        report.minimax = Some(MinimaxSection {
            sup_inf: res.sup_inf,
            inf_sup: res.inf_sup,
            relative_gap: res.relative_gap,
            best_strategy: res.strategies[res.best_strategy].clone(),
            best_model: res.models[res.best_model].clone(),
            strategies: res.strategies.len(),
            models: res.models.len(),
            paths: count,
            steps,
        });
        Ok(())
    }

    fn conditions(&self, report: &mut Report) {
        let grid = SampleGrid {
            dim: self.market.dim(),
            utility: self.utility,
            ..SampleGrid::default()
        };
        let checked = verify_conditions(&self.generator, &grid);
        report.conditions = Some(ConditionsSection::new(&checked, self.generator.claimed()));
    }

    fn muckenhoupt(&self, report: &mut Report) -> Result<(), CliError> {
        let mk = &self.config.muckenhoupt;
        let theta = mk.theta.clone().unwrap_or_else(|| self.market.theta().to_vec());
        let process = ProcessPath::constant(self.paths.paths(), self.paths.nodes(), theta.clone());
        let tau = self.config.tau_index()?;
        let est = check_muckenhoupt(&process, mk.p, tau, &self.paths).during("stochastic", "check_muckenhoupt")?;
        if let Some(u) = &self.utility {
            if !u.compatible_with_muckenhoupt(mk.p) {
                report
                    .notes
                    .push(format!("utility {} is not covered by the A_p condition with p = {}", u.name(), mk.p));
            }
        }
        report.muckenhoupt = Some(MuckenhouptSection {
            p: mk.p,
            tau: mk.tau,
            theta,
            estimate: est.estimate,
            std_error: est.std_error,
            analytic: est.analytic,
            deterministic_times_only: est.deterministic_times_only,
        });
        Ok(())
    }

    fn characterize(&self, report: &mut Report, slot: &mut Option<Reference>) -> Result<(), CliError> {
        let strategy = self.reference(report, slot)?.strategy.clone();
        let basis = self.solver.basis;
        let mut rows = Vec::new();
        for &steps in &self.config.characterize.steps {
            let paths = Self::batch(&self.config, &self.market, steps, self.config.mc.paths)?;
            let xi = endowment(&self.config.endowment, &self.market, &paths);
            let wealth = simulate_wealth(&strategy, &self.market, &paths).during("market", "simulate_wealth")?;
            let h: Vec<f64> = wealth.terminal().iter().zip(&xi).map(|(x, e)| x + e).collect();
            let sol = solve_backward(&self.generator, &h, &wealth, &paths, &self.solver)
                .during("bsde", "solve_backward")?;
            let model = subgradient_model(&sol, &self.generator).during("duality", "subgradient_model")?;
            let frac = to_fraction_process(&strategy, &wealth).during("market", "to_fraction_process")?;
            let adjoint = solve_adjoint(&model, &frac, &self.market, &wealth, &paths, &basis)
                .during("characterize", "solve_adjoint")?;
            let residual = max_principle_residual(&adjoint, self.market.theta(), &model)
                .during("characterize", "max_principle_residual")?;
            let foc = foc_residual(&self.generator, &model, &sol).during("characterize", "foc_residual")?;
            let gap =
                close_gap_with_subgradient(&sol, &self.generator, &paths).during("duality", "close_gap_with_subgradient")?;
            rows.push(CharacterizeRow {
                steps,
                residual_l2: residual.l2,
                residual_max: residual.max,
                adjoint_positive_fraction: adjoint.positive_fraction(),
                foc_max_abs: foc.max_abs,
                foc_negative_fraction: foc.negative_fraction,
                duality_gap: gap.relative_gap,
            });
        }
        let residual_decreasing = rows.windows(2).all(|w| w[1].residual_l2 < w[0].residual_l2);
        let mut failed_legs = Vec::new();
        if rows.iter().any(|r| r.duality_gap > 0.01) {
            failed_legs.push("duality gap".to_string());
        }
        if !residual_decreasing {
            failed_legs.push("max-principle residual".to_string());
        }
        if rows.iter().any(|r| r.foc_max_abs > 1e-6) {
            failed_legs.push("first-order conditions".to_string());
        }
        report.series.push(Series {
            name: "residual_vs_steps".into(),
            x_label: "steps".into(),
            y_label: "residual_l2".into(),
            points: rows.iter().map(|r| (r.steps as f64, r.residual_l2)).collect(),
        });
        report.characterize = Some(CharacterizeSection {
            strategy: strategy_name(&strategy),
            rows,
            residual_decreasing,
            failed_legs,
        });
        Ok(())
    }
}
