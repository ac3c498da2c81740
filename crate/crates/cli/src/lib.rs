//! Command-line driver: ingest scored event logs, fit the arrival and score
//! models, solve critical curves, and produce empirical and analytic
//! detection-rate / capacity tradeoffs.

pub mod commands;
pub mod config;
pub mod data;
pub mod engine;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::commands::Shape;
use crate::config::{CommonArgs, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "triage", version, about = "Detection rate vs inspection capacity for streaming alerts")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit rate.json and model.json from `episode_id,t_seconds,score,label`.
    Estimate {
        #[arg(long)]
        input: PathBuf,
    },
    /// Solve critical curves for the largest budget in the k grid.
    Curves {
        #[arg(long)]
        rate: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Override the number of curves.
        #[arg(long)]
        max_budget: Option<usize>,
    },
    /// Analytic bounds on the k grid.
    Bounds {
        #[arg(long)]
        rate: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Empirical tradeoff curves on real or simulated episodes.
    Simulate {
        #[arg(long)]
        rate: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Curve sidecar (curves.json) from `curves`; solved if omitted.
        #[arg(long)]
        curves: Option<PathBuf>,
        /// Held-out episodes for real mode.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Estimate, solve, bound and simulate in one go, with self-checks.
    Sweep {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        rate: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Generate episodes from a score model and a rate shape.
    Synth {
        /// JSON `{beta, f0: {knots, probs}, f1: {knots, probs}}`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "constant")]
        shape: Shape,
        /// Expected arrivals per episode for parametric shapes.
        #[arg(long)]
        expected: Option<f64>,
        /// Relative swing of the sinusoidal shape.
        #[arg(long, default_value_t = 0.5)]
        amplitude: f64,
        /// Rate JSON for `--shape piecewise`.
        #[arg(long)]
        rate: Option<PathBuf>,
    },
}

/// Runs a parsed command. `Ok(false)` means a sweep self-check failed.
pub fn run(cli: &Cli) -> Result<bool> {
    let cfg = RunConfig::resolve(&cli.common)?;
    match &cli.command {
        Command::Estimate { input } => {
            let r = commands::estimate(&cfg, input)?;
            println!(
                "episodes={} beta={:.6} expected_arrivals={:.3} malformed_rows={} clamped_scores={}",
                r.episodes, r.beta, r.lambda_total, r.malformed, r.clamped
            );
        }
        Command::Curves {
            rate,
            model,
            max_budget,
        } => {
            let set = commands::curves(&cfg, rate, model, *max_budget)?;
            println!(
                "solved {} curves on {} grid points -> {}",
                set.budget(),
                set.grid_times().len(),
                cfg.out_dir.join("curves.csv").display()
            );
        }
        Command::Bounds { rate, model } => {
            let b = commands::bounds(&cfg, rate, model)?;
            println!(
                "{} methods x {} capacities -> {}",
                b.len(),
                cfg.k_grid.len(),
                cfg.out_dir.join("bounds.csv").display()
            );
        }
        Command::Simulate {
            rate,
            model,
            curves,
            input,
        } => {
            let t = commands::simulate(&cfg, rate, model, curves.as_deref(), input.as_deref())?;
            println!(
                "{} policies x {} capacities -> {}",
                t.len(),
                cfg.k_grid.len(),
                cfg.out_dir.join("tradeoff.csv").display()
            );
        }
        Command::Sweep { input, rate, model } => {
            let r = commands::sweep(&cfg, input.as_deref(), rate.as_deref(), model.as_deref())?;
            print!("{}", r.summary);
            return Ok(r.passed());
        }
        Command::Synth {
            model,
            shape,
            expected,
            amplitude,
            rate,
        } => {
            let p = commands::synth(&cfg, model, *shape, *expected, *amplitude, rate.as_deref())?;
            println!("{} episodes -> {}", cfg.episodes, p.display());
        }
    }
    Ok(true)
}
