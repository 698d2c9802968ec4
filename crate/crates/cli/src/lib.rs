//! Configuration-driven experiments for robust utility maximization:
//! primal and dual values, duality gaps, minimax checks and the
//! maximum-principle diagnostics, written as JSON and CSV reports.

pub mod config;
pub mod error;
pub mod report;
pub mod runner;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{ExperimentConfig, OutputFormat};
pub use error::CliError;
pub use report::Report;
pub use runner::{Command, Experiment};

#[derive(Debug, Parser)]
#[command(name = "maxsub", version, about = "Robust utility maximization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: SubCommand,
    /// Experiment configuration (TOML or JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `mc.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory, overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum SubCommand {
    /// Wealth paths of the reference strategy.
    Simulate,
    /// Optimize the primal value over the strategy family.
    Primal,
    /// Search the model family for the smallest dual value.
    Dual,
    /// Close the duality gap with the subgradient model.
    Gap,
    /// Adjoint, maximum-principle residual and first-order conditions over a step series.
    Characterize,
    /// Sample the structural conditions of the generator.
    CheckConditions,
    /// Estimate the Muckenhoupt constant of the density process.
    Muckenhoupt {
        /// Market price of risk, comma separated; defaults to the market's.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        theta: Option<Vec<f64>>,
        /// Exponent of the A_p condition, above 1; overrides `muckenhoupt.p`.
        #[arg(long)]
        p: Option<f64>,
    },
    /// All of the above in one report.
    Run,
}

impl Cli {
    /// Loads the configuration and applies command-line overrides.
    pub fn load_config(&self) -> Result<ExperimentConfig, CliError> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Config("--config: a configuration file is required".into()))?;
        let mut config = ExperimentConfig::load(path)?;
        if let Some(seed) = self.seed {
            config.mc.seed = seed;
        }
        if let Some(out) = &self.out {
            config.output.dir = out.clone();
        }
        if let Some(format) = self.format {
            config.output.format = format;
        }
        if let SubCommand::Muckenhoupt { theta, p } = &self.command {
            if theta.is_some() {
                config.muckenhoupt.theta = theta.clone();
            }
            if let Some(p) = p {
                config.muckenhoupt.p = *p;
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn runner_command(&self) -> Command {
        match self.command {
            SubCommand::Simulate => Command::Simulate,
            SubCommand::Primal => Command::Primal,
            SubCommand::Dual => Command::Dual,
            SubCommand::Gap => Command::Gap,
            SubCommand::Characterize => Command::Characterize,
            SubCommand::CheckConditions => Command::CheckConditions,
            SubCommand::Muckenhoupt { .. } => Command::Muckenhoupt,
            SubCommand::Run => Command::Run,
        }
    }

    /// Runs the command, writes the report files and returns the report.
    pub fn execute(&self) -> Result<Report, CliError> {
        let config = self.load_config()?;
        let run = || -> Result<Report, CliError> {
            let dir = config.output.dir.clone();
            let format = config.output.format;
            let experiment = Experiment::new(config.clone())?;
            let report = experiment.run(self.runner_command())?;
            report.write(&dir, format)?;
            Ok(report)
        };
        match self.threads {
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
                pool.install(run)
            }
            None => run(),
        }
    }
}
