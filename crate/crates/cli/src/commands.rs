use std::fs;
use std::path::Path;

use damdp::augmented::{solve_augmented_vi, AugmentedValueFile};
use damdp::io::{load_observation_model, resolve_model, LoadedModel};
use damdp::mdp::{extract_nominal_policy, nominal_value_iteration};
use damdp::rho::plan_with_fallback;
use damdp::sim::{
    aggregate_runs, run_closed_loop, AugmentedVIController, Controller, EpisodeConfig,
    NominalPolicyController, RhoController, Trace,
};
use damdp::{
    AugmentedValueFunction, Belief, DetectionProblem, Error, ObservationModel, PlannerConfig,
    Result, SimplexGrid, Weights,
};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::{
    AugmentedArgs, ControllerKind, GridArgs, ModelArgs, NominalArgs, PlanArgs, SimulateArgs,
};

fn load(args: &ModelArgs) -> Result<(LoadedModel, Option<ObservationModel>)> {
    let loaded = resolve_model(&args.model)?;
    let obs = match &args.obs {
        Some(path) => Some(load_observation_model(path)?),
        None => loaded.obs.clone(),
    };
    Ok((loaded, obs))
}

fn load_problem(args: &ModelArgs) -> Result<(LoadedModel, DetectionProblem)> {
    let (loaded, obs) = load(args)?;
    let obs = obs.ok_or_else(|| {
        Error::InvalidConfig(format!(
            "model {} needs an observation model (--obs)",
            args.model
        ))
    })?;
    let problem = DetectionProblem::solve(loaded.model.clone(), obs)?;
    Ok((loaded, problem))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn validate(args: &ModelArgs) -> Result<()> {
    let (loaded, obs) = load(args)?;
    let n = loaded.model.num_states();
    if let Some(obs) = &obs {
        if obs.num_states() != n {
            return Err(Error::DimensionMismatch(format!(
                "observation model covers {} states, model has {n}",
                obs.num_states()
            )));
        }
    }
    println!(
        "{}: valid ({n} states, {} actions{})",
        loaded.name,
        loaded.model.num_actions(),
        obs.map(|o| format!(", {} observations", o.num_observations()))
            .unwrap_or_default()
    );
    Ok(())
}

pub fn solve_nominal(args: &NominalArgs) -> Result<()> {
    let (loaded, _) = load(&args.model)?;
    let model = &loaded.model;
    let out = nominal_value_iteration(model, args.tol, args.max_iter)?;
    if !out.converged {
        return Err(Error::NotConverged {
            iterations: out.iterations,
            residual: out.residual,
        });
    }
    let policy = extract_nominal_policy(model, &out.value);
    if policy.has_ties() {
        warn!(
            "nominal policy has ties at states {:?}; lowest action index used",
            policy.tied_states()
        );
    }
    fs::create_dir_all(&args.out)?;
    write_json(
        &args.out.join("nominal.json"),
        &json!({
            "inputs": args,
            "model": loaded.name,
            "iterations": out.iterations,
            "residual": out.residual,
            "values": out.value.values,
            "policy": policy.actions,
            "tie_flags": policy.tie_flags,
        }),
    )?;
    let mut csv = String::from("state,value,action,tie\n");
    for x in 0..model.num_states() {
        csv += &format!(
            "{x},{},{},{}\n",
            out.value.values[x], policy.actions[x], policy.tie_flags[x]
        );
    }
    fs::write(args.out.join("nominal.csv"), csv)?;
    if let Some(spec) = &loaded.grid {
        let mut grid = String::new();
        for row in 0..spec.height {
            let cells: Vec<String> = (0..spec.width)
                .map(|col| {
                    out.value.values[spec.index(damdp::models::Cell::new(row, col))].to_string()
                })
                .collect();
            grid += &cells.join(",");
            grid.push('\n');
        }
        fs::write(args.out.join("value_grid.csv"), grid)?;
    }
    println!(
        "converged in {} sweeps (residual {:e}); policy {:?}",
        out.iterations, out.residual, policy.actions
    );
    Ok(())
}

fn check_state_cap(problem: &DetectionProblem, grid: &GridArgs) -> Result<()> {
    if problem.num_states() > grid.max_states {
        return Err(Error::TooManyStates {
            states: problem.num_states(),
            cap: grid.max_states,
        });
    }
    Ok(())
}

fn solve_grid_vi(
    problem: &DetectionProblem,
    weights: Weights,
    grid_args: &GridArgs,
    tol: f64,
) -> Result<(damdp::mdp::ViOutcome<AugmentedValueFunction>, SimplexGrid)> {
    check_state_cap(problem, grid_args)?;
    let grid = SimplexGrid::new(problem.num_states(), grid_args.grid_res)?;
    info!("solving on a grid of {} points per state", grid.len());
    let out = solve_augmented_vi(problem, weights, &grid, tol, grid_args.max_iter)?;
    if !out.converged {
        return Err(Error::NotConverged {
            iterations: out.iterations,
            residual: out.residual,
        });
    }
    Ok((out, grid))
}

pub fn solve_augmented(args: &AugmentedArgs) -> Result<()> {
    let (loaded, problem) = load_problem(&args.model)?;
    let weights = Weights::new(args.weights.wn, args.weights.wa);
    let (out, grid) = solve_grid_vi(&problem, weights, &args.grid, args.tol)?;
    fs::create_dir_all(&args.out)?;
    AugmentedValueFile::from_solution(&out, &grid, problem.model().discount())
        .save(&args.out.join("augmented.json"))?;
    write_json(
        &args.out.join("augmented.meta.json"),
        &json!({
            "inputs": args,
            "model": loaded.name,
            "model_hash": problem.fingerprint(),
            "grid_points": grid.len(),
            "iterations": out.iterations,
            "residual": out.residual,
        }),
    )?;
    println!(
        "converged in {} sweeps (residual {:e}) on {} grid points per state",
        out.iterations,
        out.residual,
        grid.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct SeedResult {
    seed: u64,
    initial_state: usize,
    avg_reward: f64,
    avg_detection: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    reached_target: Option<bool>,
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    if args.seeds == 0 {
        return Err(Error::InvalidConfig("--seeds must be at least 1".into()));
    }
    let (loaded, problem) = load_problem(&args.model)?;
    let n = problem.num_states();
    let mut episode = EpisodeConfig {
        steps: args.steps,
        initial_state: args.x0,
        initial_belief: None,
    };
    if let Some(spec) = &loaded.grid {
        let start = spec.index(spec.start);
        episode.initial_state.get_or_insert(start);
        episode.initial_belief = Some(Belief::point(n, start));
    }

    let weights = Weights::new(args.weights.wn, args.weights.wa);
    let solved;
    let controller: Box<dyn Controller> = match args.controller {
        ControllerKind::Nominal => Box::new(NominalPolicyController::new(
            problem.nominal_policy().clone(),
        )),
        ControllerKind::Rho => Box::new(RhoController::new(
            &problem,
            PlannerConfig::new(
                args.horizon.horizon,
                args.weights.wn,
                args.weights.wa,
                args.horizon.wap,
            )?,
        )),
        ControllerKind::Augmented => {
            solved = match &args.value_file {
                Some(path) => {
                    let (value, grid) = AugmentedValueFile::load(path)?;
                    if grid.dimension() != n {
                        return Err(Error::DimensionMismatch(format!(
                            "value table covers {} states, model has {n}",
                            grid.dimension()
                        )));
                    }
                    (value, grid)
                }
                None => {
                    let (out, grid) = solve_grid_vi(&problem, weights, &args.grid, args.tol)?;
                    (out.value, grid)
                }
            };
            Box::new(AugmentedVIController::new(&problem, &solved.0, &solved.1))
        }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let traces: Vec<Trace> = pool.install(|| {
        (0..args.seeds)
            .into_par_iter()
            .map(|i| {
                run_closed_loop(
                    controller.as_ref(),
                    &problem,
                    &episode,
                    args.seed_base + i,
                    0,
                )
            })
            .collect::<Result<_>>()
    })?;

    fs::create_dir_all(&args.out)?;
    let target = loaded.grid.as_ref().map(|s| s.index(s.target));
    let mut per_seed = Vec::with_capacity(traces.len());
    for trace in &traces {
        let seed = trace.meta.seed;
        trace.save(&args.out, &format!("seed_{seed}"), args.beliefs)?;
        per_seed.push(SeedResult {
            seed,
            initial_state: trace.meta.initial_state,
            avg_reward: trace.final_avg_reward(),
            avg_detection: trace.final_avg_detection(),
            reached_target: target.map(|t| trace.visits(t)),
        });
    }
    let summary = aggregate_runs(&traces)?;
    write_json(
        &args.out.join("summary.json"),
        &json!({
            "inputs": args,
            "model": loaded.name,
            "summary": summary,
            "runs": per_seed,
        }),
    )?;
    println!(
        "{} over {} seeds x {} steps: mean avg reward {:.4} (se {:.4}), mean avg detection {:.4} (se {:.4})",
        summary.controller,
        summary.runs,
        summary.steps,
        summary.mean_avg_reward,
        summary.se_avg_reward,
        summary.mean_avg_detection,
        summary.se_avg_detection
    );
    Ok(())
}

pub fn plan(args: &PlanArgs, verbose: bool) -> Result<()> {
    let (loaded, problem) = load_problem(&args.model)?;
    let n = problem.num_states();
    if args.x0 >= n {
        return Err(Error::InvalidConfig(format!(
            "--x0 {} out of range for {n} states",
            args.x0
        )));
    }
    let belief = match &args.belief {
        Some(v) => Belief::new(v.clone())?,
        None => Belief::uniform(n),
    };
    let config = PlannerConfig::new(
        args.horizon.horizon,
        args.weights.wn,
        args.weights.wa,
        args.horizon.wap,
    )?;
    let (result, used) = plan_with_fallback(&problem, args.x0, &belief, config)?;
    println!(
        "first action {} (sequence {:?}, objective {:.12}{}{})",
        result.first_action,
        result.best_sequence,
        result.best_objective,
        if result.tie { ", tie" } else { "" },
        if used != config.horizon {
            format!(", horizon shortened to {used}")
        } else {
            String::new()
        }
    );
    if verbose {
        for e in &result.evaluations {
            println!(
                "  {:?}: R1 {:.9} R2* {:.9} R3 {:.9} objective {:.12}",
                e.sequence, e.r1, e.r2_star, e.r3, e.objective
            );
        }
        for p in &result.pruned {
            println!("  pruned {:?} + {} (state {})", p.prefix, p.action, p.state);
        }
    }
    if let Some(path) = &args.out {
        write_json(
            path,
            &json!({
                "inputs": args,
                "model": loaded.name,
                "model_hash": problem.fingerprint(),
                "belief": belief,
                "horizon_used": used,
                "result": result,
            }),
        )?;
    }
    Ok(())
}
