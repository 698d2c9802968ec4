//! Report payload and its JSON / CSV files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use maxsub::bsde::DriftStats;
use maxsub::duality::{DualReport, SweepRow};
use maxsub::generators::{ConditionReport, QgReport};

use crate::config::OutputFormat;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSection {
    pub strategy: String,
    pub terminal_mean: f64,
    pub terminal_std: f64,
    pub min_wealth: f64,
    pub absorbed_paths: usize,
    /// Mean of `X_T` under the minimal martingale measure `Q^{-theta}`.
    pub q_terminal_mean: f64,
    pub q_std_error: f64,
    /// `q_terminal_mean <= x0 + 3 s.e.`
    pub supermartingale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalSection {
    pub strategy: String,
    pub params: Vec<f64>,
    pub value: f64,
    pub std_error: f64,
    pub method: String,
    pub evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSection {
    pub strategy: String,
    pub model: String,
    pub primal: f64,
    pub primal_std_error: f64,
    pub dual: f64,
    pub dual_std_error: f64,
    pub relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxSection {
    pub sup_inf: f64,
    pub inf_sup: f64,
    pub relative_gap: f64,
    pub best_strategy: String,
    pub best_model: String,
    pub strategies: usize,
    pub models: usize,
    pub paths: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsolutionSection {
    pub dynamics: f64,
    pub terminal: f64,
    pub pair_stride: usize,
    /// `5 dt L` with `L` the largest generator slope seen on the solution.
    pub tolerance: f64,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuckenhouptSection {
    pub p: f64,
    pub tau: f64,
    pub theta: Vec<f64>,
    pub estimate: f64,
    pub std_error: f64,
    pub analytic: Option<f64>,
    /// Stopping times other than grid times are not checked.
    pub deterministic_times_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: String,
    pub claimed: bool,
    pub passed: bool,
    pub applicable: bool,
    pub max_residual: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionsSection {
    pub generator: String,
    pub rows: Vec<ConditionRow>,
    pub qg: QgReport,
}

impl ConditionsSection {
    pub fn new(report: &ConditionReport, claimed: maxsub::generators::ConditionFlags) -> Self {
        let row = |name: &str, c: &maxsub::generators::ConditionCheck, claimed: bool| ConditionRow {
            condition: name.into(),
            claimed,
            passed: c.passed,
            applicable: c.applicable,
            max_residual: c.max_residual,
            note: String::new(),
        };
        let qg = &report.qg;
        let note = if qg.blows_up_near_zero {
            "constant grows without bound as y approaches 0".to_string()
        } else {
            String::new()
        };
        let rows = vec![
            row("Conv", &report.conv, claimed.conv),
            row("Lsc", &report.lsc, claimed.lsc),
            row("Nor", &report.nor, claimed.nor),
            row("Pos", &report.pos, claimed.pos),
            row("Adm", &report.adm, claimed.adm),
            ConditionRow {
                condition: "Qg".into(),
                claimed: claimed.qg,
                passed: qg.passed,
                applicable: true,
                max_residual: qg.box_constant,
                note,
            },
        ];
        ConditionsSection {
            generator: report.generator.clone(),
            rows,
            qg: qg.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterizeRow {
    pub steps: usize,
    pub residual_l2: f64,
    pub residual_max: f64,
    pub adjoint_positive_fraction: f64,
    pub foc_max_abs: f64,
    pub foc_negative_fraction: f64,
    pub duality_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterizeSection {
    pub strategy: String,
    pub rows: Vec<CharacterizeRow>,
    /// L2 residual strictly decreasing along the refinement series.
    pub residual_decreasing: bool,
    /// Diagnostics that did not pass: duality gap, max-principle residual, first-order conditions.
    pub failed_legs: Vec<String>,
}

/// `(x, y)` data written to `series/<name>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub paths: usize,
    pub steps: usize,
    pub generator: String,
    /// The configuration without its output settings.
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primal: Option<PrimalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual: Option<DualReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<GapSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minimax: Option<MinimaxSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admissibility: Option<DriftStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsolution: Option<SubsolutionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub muckenhoupt: Option<MuckenhouptSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditions: Option<ConditionsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub characterize: Option<CharacterizeSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// Rows for `sweep.csv`: strategy and model evaluations.
    #[serde(skip)]
    pub sweep: Vec<(String, SweepRow)>,
    #[serde(skip)]
    pub series: Vec<Series>,
}

impl Report {
    pub fn to_json(&self) -> Result<String, CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Output(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }

    /// Writes `report.json`, `sweep.csv` and `series/*.csv` as selected by `format`.
    pub fn write(&self, dir: &Path, format: OutputFormat) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)?;
        if format.json() {
            std::fs::write(dir.join("report.json"), self.to_json()?)?;
        }
        if format.csv() {
            self.write_sweep(&dir.join("sweep.csv"))?;
            if !self.series.is_empty() {
                let sdir = dir.join("series");
                std::fs::create_dir_all(&sdir)?;
                for s in &self.series {
                    let mut w = csv::Writer::from_path(sdir.join(format!("{}.csv", s.name)))?;
                    w.write_record([&s.x_label, &s.y_label])?;
                    for (x, y) in &s.points {
                        w.write_record([x.to_string(), y.to_string()])?;
                    }
                    w.flush()?;
                }
            }
        }
        Ok(())
    }

    fn write_sweep(&self, path: &Path) -> Result<(), CliError> {
        let width = self.sweep.iter().map(|(_, r)| r.params.len()).max().unwrap_or(0);
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["kind".to_string(), "family".into()];
        header.extend((0..width).map(|k| format!("p{k}")));
        header.extend(["value".into(), "std_error".into(), "feasible".into()]);
        w.write_record(&header)?;
        for (kind, r) in &self.sweep {
            let mut rec = vec![kind.clone(), r.family.clone()];
            for k in 0..width {
                rec.push(r.params.get(k).map(|v| v.to_string()).unwrap_or_default());
            }
            rec.push(r.value.to_string());
            rec.push(r.std_error.to_string());
            rec.push(r.feasible.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable lines for the terminal.
    pub fn summary(&self) -> Vec<String> {
        let mut out = vec![format!(
            "{} | generator {} | M = {}, N = {}, seed {}",
            self.command, self.generator, self.paths, self.steps, self.seed
        )];
        if let Some(s) = &self.simulate {
            out.push(format!(
                "wealth {}: E[X_T] = {:.6}, E_Q[X_T] = {:.6} +- {:.1e}, absorbed paths {}",
                s.strategy, s.terminal_mean, s.q_terminal_mean, s.q_std_error, s.absorbed_paths
            ));
        }
        if let Some(p) = &self.primal {
            out.push(format!(
                "primal V(x) = {:.6} +- {:.1e} at {} ({})",
                p.value, p.std_error, p.strategy, p.method
            ));
        }
        if let Some(d) = &self.dual {
            out.push(format!(
                "best dual = {:.6} +- {:.1e} at {}, relative gap {:.3e}",
                d.best_dual,
                d.best_dual_std_error,
                d.best_model.label(),
                d.relative_gap
            ));
        }
        if let Some(g) = &self.gap {
            out.push(format!(
                "subgradient gap: dual {:.6}, primal {:.6}, relative gap {:.3e}",
                g.dual, g.primal, g.relative_gap
            ));
        }
        if let Some(m) = &self.minimax {
            out.push(format!(
                "minimax: sup-inf {:.6} <= inf-sup {:.6}, relative gap {:.3e}",
                m.sup_inf, m.inf_sup, m.relative_gap
            ));
        }
        if let Some(a) = &self.admissibility {
            out.push(format!(
                "admissibility drift: min {:.3e}, max |r| {:.3e}, violations {:.3}",
                a.min, a.max_abs, a.violation_fraction
            ));
        }
        if let Some(s) = &self.subsolution {
            out.push(format!(
                "subsolution residual: dynamics {:.3e} (tolerance {:.3e}), terminal {:.3e}",
                s.dynamics, s.tolerance, s.terminal
            ));
        }
        if let Some(m) = &self.muckenhoupt {
            out.push(format!("muckenhoupt estimate: {:?} (s.e. {:.1e})", m.estimate, m.std_error));
        }
        if let Some(c) = &self.conditions {
            out.push(format!("conditions of {}:", c.generator));
            for r in &c.rows {
                let status = if !r.applicable { "n/a" } else if r.passed { "pass" } else { "fail" };
                let note = if r.note.is_empty() { String::new() } else { format!(" ({})", r.note) };
                out.push(format!("  {:<5}{status}{note}", r.condition));
            }
        }
        if let Some(c) = &self.characterize {
            for r in &c.rows {
                out.push(format!(
                    "N = {:>4}: residual L2 {:.3e}, p > 0 on {:.4}, FOC max {:.1e}, gap {:.1e}",
                    r.steps, r.residual_l2, r.adjoint_positive_fraction, r.foc_max_abs, r.duality_gap
                ));
            }
            if !c.failed_legs.is_empty() {
                out.push(format!("failed diagnostics: {}", c.failed_legs.join(", ")));
            }
        }
        for n in &self.notes {
            out.push(format!("note: {n}"));
        }
        out
    }
}
