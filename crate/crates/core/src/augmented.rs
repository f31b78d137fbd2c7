//! Value iteration over (state, belief) pairs on a simplex grid.
//!
//! Each backup maximizes `w_n R(x,u) − w_a o(x) + λ E[V(x', o')]` over the
//! admissible actions, where the expectation runs over the finite support of
//! the augmented kernel and `V(x', ·)` is interpolated on the grid.

use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{posterior_from_prediction, stage_penalty, Belief, EPS_ZERO};
use crate::error::{Error, Result};
use crate::mdp::{argmax_lowest, sup_distance, ViOutcome};
use crate::problem::DetectionProblem;
use crate::simplex::SimplexGrid;

pub const DEFAULT_RESOLUTION: usize = 10;
pub const DEFAULT_AUG_TOL: f64 = 1e-6;
pub const DEFAULT_AUG_MAX_ITER: usize = 2000;

/// Objective weights: nominal reward `w_n` and detection penalty `w_a`.
/// A negative `w_a` rewards being detected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w_n: f64,
    pub w_a: f64,
}

impl Weights {
    pub fn new(w_n: f64, w_a: f64) -> Self {
        Self { w_n, w_a }
    }

    pub fn stage(&self, reward: f64, penalty: f64) -> f64 {
        self.w_n * reward - self.w_a * penalty
    }

    fn check(&self) -> Result<()> {
        if self.w_n.is_finite() && self.w_a.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("non-finite weights {self:?}")))
        }
    }
}

/// Value table `V_a[x][grid point]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedValueFunction {
    pub values: Vec<Vec<f64>>,
    pub weights: Weights,
}

impl AugmentedValueFunction {
    pub fn zeros(num_states: usize, grid: &SimplexGrid, weights: Weights) -> Self {
        Self {
            values: vec![vec![0.0; grid.len()]; num_states],
            weights,
        }
    }

    /// Interpolated `V_a(x, o)`.
    pub fn interpolate(&self, grid: &SimplexGrid, x: usize, belief: &Belief) -> f64 {
        grid.interpolate(&self.values[x], belief)
    }

    fn sup_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max(sup_distance(a, b)))
    }
}

pub fn interpolate_value(
    value: &AugmentedValueFunction,
    grid: &SimplexGrid,
    x: usize,
    belief: &Belief,
) -> f64 {
    value.interpolate(grid, x, belief)
}

/// Precomputed expectation stencils for one action at one grid pair.
#[derive(Debug, Clone)]
struct ActionTerms {
    stage: f64,
    /// `(x', grid index, probability × interpolation weight)`.
    terms: Vec<(usize, usize, f64)>,
}

/// Everything a backup needs that does not depend on the current values.
#[derive(Debug, Clone)]
pub struct BackupPlan {
    num_points: usize,
    discount: f64,
    /// Indexed `x * num_points + j`.
    entries: Vec<Vec<ActionTerms>>,
    /// Grid pairs handled by the empty-admissible-set convention.
    pub fallback_points: Vec<(usize, usize)>,
}

impl BackupPlan {
    pub fn new(problem: &DetectionProblem, grid: &SimplexGrid, weights: Weights) -> Result<Self> {
        weights.check()?;
        let nx = problem.num_states();
        if grid.dimension() != nx {
            return Err(Error::DimensionMismatch(format!(
                "grid dimension {} does not match {nx} states",
                grid.dimension()
            )));
        }
        let built: Vec<Result<(Vec<ActionTerms>, bool)>> = (0..nx * grid.len())
            .into_par_iter()
            .map(|k| plan_point(problem, grid, weights, k / grid.len(), k % grid.len()))
            .collect();
        let mut entries = Vec::with_capacity(built.len());
        let mut fallback_points = Vec::new();
        for (k, r) in built.into_iter().enumerate() {
            let (terms, fallback) = r?;
            if fallback {
                fallback_points.push((k / grid.len(), k % grid.len()));
            }
            entries.push(terms);
        }
        if !fallback_points.is_empty() {
            warn!(
                "{} grid pairs with zero belief in the true state have no admissible action; \
                 backing them up over all actions with realizable observations",
                fallback_points.len()
            );
        }
        Ok(Self {
            num_points: grid.len(),
            discount: problem.model().discount(),
            entries,
            fallback_points,
        })
    }

    /// One Jacobi sweep.
    pub fn apply(&self, value: &AugmentedValueFunction) -> AugmentedValueFunction {
        let flat: Vec<f64> = self
            .entries
            .par_iter()
            .map(|actions| {
                actions
                    .iter()
                    .map(|a| {
                        let cont: f64 = a
                            .terms
                            .iter()
                            .map(|&(x, j, c)| c * value.values[x][j])
                            .sum();
                        a.stage + self.discount * cont
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        AugmentedValueFunction {
            values: flat.chunks(self.num_points).map(|c| c.to_vec()).collect(),
            weights: value.weights,
        }
    }
}

fn plan_point(
    problem: &DetectionProblem,
    grid: &SimplexGrid,
    weights: Weights,
    x: usize,
    j: usize,
) -> Result<(Vec<ActionTerms>, bool)> {
    let belief = grid.belief(j);
    let penalty = stage_penalty(x, &belief);
    let admissible = problem.admissible_actions(x, &belief);
    let mut actions = Vec::with_capacity(admissible.len());
    for &u in &admissible {
        let support = problem.support(x, &belief, u)?;
        let mut terms = Vec::new();
        for atom in &support.atoms {
            for (idx, w) in grid.stencil(&atom.belief) {
                terms.push((atom.state, idx, atom.prob * w));
            }
        }
        actions.push(ActionTerms {
            stage: weights.stage(problem.model().reward(x, u), penalty),
            terms,
        });
    }
    if !actions.is_empty() {
        return Ok((actions, false));
    }
    if penalty > 0.0 {
        return Err(Error::EmptyAdmissibleSet {
            state: x,
            belief: belief.as_slice().to_vec(),
        });
    }
    // o(x) = 0: keep only realizable observations and renormalize
    let (pred, predicted_obs) = problem.predict(&belief);
    for u in 0..problem.num_actions() {
        let mut terms = Vec::new();
        let mut mass = 0.0;
        for (y, &py) in predicted_obs.iter().enumerate() {
            if py <= EPS_ZERO {
                continue;
            }
            let posterior = posterior_from_prediction(problem.obs(), &pred, y)?;
            let stencil = grid.stencil(&posterior);
            for &(d, p) in problem.successors(x, u) {
                let prob = problem.obs().q(y, d) * p;
                if prob <= 0.0 {
                    continue;
                }
                mass += prob;
                for &(idx, w) in &stencil {
                    terms.push((d, idx, prob * w));
                }
            }
        }
        if mass > 0.0 {
            for t in &mut terms {
                t.2 /= mass;
            }
        }
        actions.push(ActionTerms {
            stage: weights.stage(problem.model().reward(x, u), penalty),
            terms,
        });
    }
    Ok((actions, true))
}

/// A single backup `V_a^{k+1} = T V_a^k`.
pub fn augmented_backup(
    value: &AugmentedValueFunction,
    grid: &SimplexGrid,
    problem: &DetectionProblem,
) -> Result<AugmentedValueFunction> {
    Ok(BackupPlan::new(problem, grid, value.weights)?.apply(value))
}

/// Iterate backups from `V⁰ ≡ 0` until the sup-norm change is at most `tol`.
pub fn solve_augmented_vi(
    problem: &DetectionProblem,
    weights: Weights,
    grid: &SimplexGrid,
    tol: f64,
    max_iter: usize,
) -> Result<ViOutcome<AugmentedValueFunction>> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let plan = BackupPlan::new(problem, grid, weights)?;
    let mut value = AugmentedValueFunction::zeros(problem.num_states(), grid, weights);
    let mut residuals = Vec::new();
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _ in 0..max_iter {
        let next = plan.apply(&value);
        residual = next.sup_distance(&value);
        residuals.push(residual);
        value = next;
        if residual <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("augmented value iteration stopped after {max_iter} sweeps, residual {residual:e}");
    }
    Ok(ViOutcome {
        value,
        residual,
        iterations: residuals.len(),
        converged,
        residuals,
    })
}

/// Bracketed objective of every admissible action at `(x, o)`.
pub fn augmented_q_values(
    value: &AugmentedValueFunction,
    grid: &SimplexGrid,
    problem: &DetectionProblem,
    x: usize,
    belief: &Belief,
) -> Result<Vec<(usize, f64)>> {
    problem.check_belief(belief)?;
    let lambda = problem.model().discount();
    let penalty = stage_penalty(x, belief);
    problem
        .admissible_actions(x, belief)
        .into_iter()
        .map(|u| {
            let support = problem.support(x, belief, u)?;
            let cont: f64 = support
                .atoms
                .iter()
                .map(|a| a.prob * value.interpolate(grid, a.state, &a.belief))
                .sum();
            let stage = value.weights.stage(problem.model().reward(x, u), penalty);
            Ok((u, stage + lambda * cont))
        })
        .collect()
}

/// Greedy action with respect to a converged `V_a`; lowest index on ties.
pub fn extract_augmented_policy(
    value: &AugmentedValueFunction,
    grid: &SimplexGrid,
    problem: &DetectionProblem,
    x: usize,
    belief: &Belief,
) -> Result<usize> {
    let q = augmented_q_values(value, grid, problem, x, belief)?;
    if q.is_empty() {
        return Err(Error::EmptyAdmissibleSet {
            state: x,
            belief: belief.as_slice().to_vec(),
        });
    }
    let scores: Vec<f64> = q.iter().map(|&(_, v)| v).collect();
    let (best, _) = argmax_lowest(&scores);
    Ok(q[best].0)
}

/// On-disk form of a converged value table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentedValueFile {
    pub dimension: usize,
    pub resolution: usize,
    pub w_n: f64,
    pub w_a: f64,
    pub discount: f64,
    pub residual: f64,
    pub iterations: usize,
    /// `[state][grid point]`, grid points in lexicographic composition order.
    pub values: Vec<Vec<f64>>,
}

impl AugmentedValueFile {
    pub fn from_solution(
        out: &ViOutcome<AugmentedValueFunction>,
        grid: &SimplexGrid,
        discount: f64,
    ) -> Self {
        Self {
            dimension: grid.dimension(),
            resolution: grid.resolution(),
            w_n: out.value.weights.w_n,
            w_a: out.value.weights.w_a,
            discount,
            residual: out.residual,
            iterations: out.iterations,
            values: out.value.values.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Load and rebuild the grid the table was computed on.
    pub fn load(path: &Path) -> Result<(AugmentedValueFunction, SimplexGrid)> {
        let file: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let grid = SimplexGrid::new(file.dimension, file.resolution)?;
        if file.values.len() != file.dimension
            || file.values.iter().any(|row| row.len() != grid.len())
        {
            return Err(Error::InvalidConfig(format!(
                "value table shape does not match a {}-state grid of resolution {}",
                file.dimension, file.resolution
            )));
        }
        Ok((
            AugmentedValueFunction {
                values: file.values,
                weights: Weights::new(file.w_n, file.w_a),
            },
            grid,
        ))
    }
}
