mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use mnl_core::data::MleConfig;

use config::{ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "mnl-bandit", version, about = "Simulate and analyse MNL assortment bandits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo regret curves and a summary table.
    Run(Overrides),
    /// Run the bandit-to-MNL reduction on generated block instances.
    Lowerbound(Overrides),
    /// Compare simulated geometric tail frequencies with their bounds.
    BoundsCheck(Overrides),
    /// Fit the logistic attraction model to car-evaluation data.
    Fitdata {
        /// Car-evaluation file (7 comma-separated fields per line).
        data: PathBuf,
        #[arg(long, value_name = "PATH", default_value = "theta.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = MleConfig::default().step)]
        step: f64,
        #[arg(long, default_value_t = MleConfig::default().max_iters)]
        iters: usize,
        #[arg(long, default_value_t = MleConfig::default().tol)]
        tol: f64,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(flags) => {
            let cfg = ExperimentConfig::resolve(&flags)?;
            for s in commands::cmd_run(&cfg)? {
                let rate = s.identify_rate.map(|r| format!(" identified {:.0}%", 100.0 * r)).unwrap_or_default();
                println!(
                    "{} {}: regret {:.3} +- {:.3} over {} runs{rate}",
                    cfg.policy.as_str(),
                    s.label,
                    s.aggregate.mean_terminal(),
                    s.aggregate.terminal_stderr(),
                    s.aggregate.n_runs
                );
            }
        }
        Command::Lowerbound(flags) => {
            let cfg = ExperimentConfig::resolve(&flags)?;
            let rows = commands::cmd_lowerbound(&cfg)?;
            println!("{rows} reduction runs written to {}", cfg.out_path("reduction.csv").display());
        }
        Command::BoundsCheck(flags) => {
            let cfg = ExperimentConfig::resolve(&flags)?;
            let report = commands::cmd_bounds_check(&cfg)?;
            println!("{} cells, {} violations", report.cells, report.violations);
            if report.violations > 0 {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Fitdata { data, out, step, iters, tol } => {
            let report = commands::cmd_fitdata(&data, &out, &MleConfig { step, max_iters: iters, tol })?;
            println!(
                "{} records, {} coefficients, objective {:.4}, |grad| {:.2e}{}",
                report.records,
                report.fit.theta.len(),
                report.fit.objective,
                report.fit.grad_inf_norm,
                if report.fit.converged { "" } else { " (not converged)" }
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
