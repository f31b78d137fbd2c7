//! `damdp`: solve, plan and simulate detection-averse control problems.
//!
//! Exit status is 0 on success, 1 for domain errors (invalid models,
//! non-convergence, inadmissible plans) and 2 for I/O or configuration errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "damdp",
    version,
    about = "Detection-averse control for finite MDPs"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug); planner diagnostics are
    /// written in full when set.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a model for stochasticity and shape errors.
    Validate(ModelArgs),
    /// Solve the nominal problem and write its value and policy.
    SolveNominal(NominalArgs),
    /// Solve value iteration over (state, belief) on a simplex grid.
    SolveAugmented(AugmentedArgs),
    /// Run closed-loop simulations and write traces and a summary.
    Simulate(SimulateArgs),
    /// Solve one receding-horizon problem and report every sequence.
    Plan(PlanArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// `example1`, `gridworld`, a model file or a grid-world spec file.
    #[arg(long, default_value = "example1")]
    pub model: String,
    /// Observation model file; required for model files.
    #[arg(long)]
    pub obs: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NominalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Stopping tolerance on the sup-norm change between sweeps.
    #[arg(long, default_value_t = damdp::mdp::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = damdp::mdp::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WeightArgs {
    /// Weight on the nominal reward.
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub wn: f64,
    /// Weight on the detection penalty; negative values reward detection.
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub wa: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    /// Simplex grid resolution.
    #[arg(long, default_value_t = damdp::augmented::DEFAULT_RESOLUTION)]
    pub grid_res: usize,
    /// Largest state count accepted for grid value iteration.
    #[arg(long, default_value_t = 6)]
    pub max_states: usize,
    #[arg(long, default_value_t = damdp::augmented::DEFAULT_AUG_MAX_ITER)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AugmentedArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub weights: WeightArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = damdp::augmented::DEFAULT_AUG_TOL)]
    pub tol: f64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HorizonArgs {
    /// Planning horizon.
    #[arg(long, default_value_t = 3)]
    pub horizon: usize,
    /// Extra weight on detection inside the horizon.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub wap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Nominal,
    Augmented,
    Rho,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = ControllerKind::Rho)]
    pub controller: ControllerKind,
    #[command(flatten)]
    pub weights: WeightArgs,
    #[command(flatten)]
    pub horizon: HorizonArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Tolerance for the grid value iteration of the augmented controller.
    #[arg(long, default_value_t = damdp::augmented::DEFAULT_AUG_TOL)]
    pub tol: f64,
    /// Previously solved value table for the augmented controller.
    #[arg(long)]
    pub value_file: Option<PathBuf>,
    /// Steps per episode.
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    /// Number of seeds; seed i is `seed_base + i`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed_base: u64,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Initial state; defaults to the start cell for grid worlds and is
    /// drawn from the initial belief otherwise.
    #[arg(long)]
    pub x0: Option<usize>,
    /// Also write the belief at every step.
    #[arg(long)]
    pub beliefs: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlanArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub weights: WeightArgs,
    #[command(flatten)]
    pub horizon: HorizonArgs,
    /// Current state of the ego.
    #[arg(long, default_value_t = 0)]
    pub x0: usize,
    /// Adversary's belief as comma-separated probabilities; uniform when absent.
    #[arg(long, value_delimiter = ',')]
    pub belief: Option<Vec<f64>>,
    /// File for the full diagnostics; stdout gets a short report either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let verbose = cli.verbose > 0;
    let result = match cli.command {
        Command::Validate(a) => commands::validate(&a),
        Command::SolveNominal(a) => commands::solve_nominal(&a),
        Command::SolveAugmented(a) => commands::solve_augmented(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Plan(a) => commands::plan(&a, verbose),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                damdp::Error::InvalidModel(items) => {
                    eprintln!("error: invalid model");
                    for item in items {
                        eprintln!("  - {item}");
                    }
                }
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
