//! Receding-horizon planning.
//!
//! For an open-loop action sequence `μ_0 … μ_{N−1}` the planner scores
//!
//! ```text
//! w_n (R1 + R2*) − (w_a + w_a') R3
//! R1  = Σ_{τ<N} λ^τ E[R(x_τ, μ_τ)]
//! R2* = λ^N E[V(x_N)]                  (nominal value as terminal cost)
//! R3  = Σ_{1≤τ<N} λ^τ E[o_τ(x_τ)]
//! ```
//!
//! Expectations come from propagating the joint law of (state, adversary
//! belief), which has finite support at every depth. The tree of sequences is
//! searched exhaustively, depth first, sharing propagation across prefixes.

use std::collections::HashMap;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::belief::{posterior_from_prediction, Belief, EPS_ZERO};
use crate::error::{Error, Result};
use crate::mdp::{MdpModel, ValueFunction};
use crate::problem::DetectionProblem;

/// Objectives within this relative distance of the best are ties.
const OBJECTIVE_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub w_n: f64,
    pub w_a: f64,
    pub w_a_prime: f64,
}

impl PlannerConfig {
    pub fn new(horizon: usize, w_n: f64, w_a: f64, w_a_prime: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if ![w_n, w_a, w_a_prime].iter().all(|w| w.is_finite()) {
            return Err(Error::InvalidConfig(
                "planner weights must be finite".into(),
            ));
        }
        Ok(Self {
            horizon,
            w_n,
            w_a,
            w_a_prime,
        })
    }

    /// Upper end of the suggested tail-weight range, `λ^N / (1 − λ^N) · w_a`.
    pub fn suggested_tail_weight(&self, discount: f64) -> f64 {
        let ln = discount.powi(self.horizon as i32);
        ln / (1.0 - ln) * self.w_a
    }

    /// False when `w_a ≥ 0` and `w_a'` lies outside `[0, λ^N/(1−λ^N) w_a]`.
    pub fn tail_weight_in_range(&self, discount: f64) -> bool {
        self.w_a < 0.0
            || (self.w_a_prime >= 0.0 && self.w_a_prime <= self.suggested_tail_weight(discount))
    }

    fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }
}

/// Probability mass per state for one belief value.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefNode {
    pub belief: Belief,
    pub mass: Vec<f64>,
}

/// Joint law of (state, belief) after a fixed open-loop prefix. Atoms sharing
/// a belief are grouped into one node.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    nodes: Vec<BeliefNode>,
}

impl JointDistribution {
    pub fn point(num_states: usize, state: usize, belief: Belief) -> Self {
        let mut mass = vec![0.0; num_states];
        mass[state] = 1.0;
        Self {
            nodes: vec![BeliefNode { belief, mass }],
        }
    }

    pub fn nodes(&self) -> &[BeliefNode] {
        &self.nodes
    }

    /// `(state, belief, probability)` for every atom with positive mass.
    pub fn atoms(&self) -> impl Iterator<Item = (usize, &Belief, f64)> + '_ {
        self.nodes.iter().flat_map(|n| {
            n.mass
                .iter()
                .enumerate()
                .filter(|(_, &m)| m > 0.0)
                .map(move |(x, &m)| (x, &n.belief, m))
        })
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms().count()
    }

    pub fn total_mass(&self) -> f64 {
        self.nodes.iter().flat_map(|n| n.mass.iter()).sum()
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        let n = self.nodes.first().map_or(0, |n| n.mass.len());
        let mut out = vec![0.0; n];
        for node in &self.nodes {
            for (o, m) in out.iter_mut().zip(&node.mass) {
                *o += m;
            }
        }
        out
    }

    /// `E[o(x)]`: expected extent of detection.
    pub fn expected_penalty(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| {
                n.mass
                    .iter()
                    .zip(n.belief.as_slice())
                    .map(|(m, o)| m * o)
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Adversary predictions for every node of a distribution.
struct Prepared {
    pred_states: Vec<Vec<f64>>,
    pred_obs: Vec<Vec<f64>>,
}

impl Prepared {
    fn new(problem: &DetectionProblem, dist: &JointDistribution) -> Self {
        let (pred_states, pred_obs) = dist
            .nodes
            .iter()
            .map(|n| problem.predict(&n.belief))
            .unzip();
        Self {
            pred_states,
            pred_obs,
        }
    }

    /// First non-negligible atom at which `u` is prohibited.
    fn violation(
        &self,
        problem: &DetectionProblem,
        dist: &JointDistribution,
        u: usize,
    ) -> Option<usize> {
        dist.nodes
            .iter()
            .zip(&self.pred_obs)
            .find_map(|(node, pobs)| {
                node.mass
                    .iter()
                    .enumerate()
                    .find(|&(x, &m)| m > EPS_ZERO && !problem.is_admissible_given(x, u, pobs))
                    .map(|(x, _)| x)
            })
    }

    fn propagate(
        &self,
        problem: &DetectionProblem,
        dist: &JointDistribution,
        u: usize,
    ) -> Result<JointDistribution> {
        let nx = problem.num_states();
        let obs = problem.obs();
        let mut nodes: Vec<BeliefNode> = Vec::new();
        let mut index: HashMap<Vec<i64>, usize> = HashMap::new();
        for (k, node) in dist.nodes.iter().enumerate() {
            // mass pushed through the ego's dynamics, before observing
            let mut moved = vec![0.0; nx];
            for (x, &m) in node.mass.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                for &(d, p) in problem.successors(x, u) {
                    moved[d] += m * p;
                }
            }
            for (y, &py) in self.pred_obs[k].iter().enumerate() {
                if py <= EPS_ZERO {
                    continue;
                }
                let mass: Vec<f64> = moved
                    .iter()
                    .enumerate()
                    .map(|(d, &m)| m * obs.q(y, d))
                    .collect();
                if mass.iter().all(|&m| m == 0.0) {
                    continue;
                }
                let posterior = posterior_from_prediction(obs, &self.pred_states[k], y)?;
                let key = posterior.merge_key();
                match index.get(&key) {
                    Some(&i) => {
                        for (a, b) in nodes[i].mass.iter_mut().zip(&mass) {
                            *a += b;
                        }
                    }
                    None => {
                        index.insert(key, nodes.len());
                        nodes.push(BeliefNode {
                            belief: posterior,
                            mass,
                        });
                    }
                }
            }
        }
        Ok(JointDistribution { nodes })
    }
}

/// Push a joint distribution one step through the augmented kernel under `u`.
///
/// Atoms with mass at or below `EPS_ZERO` are not checked for admissibility;
/// any of their branches the adversary deems impossible are dropped.
pub fn propagate_joint(
    dist: &JointDistribution,
    u: usize,
    problem: &DetectionProblem,
) -> Result<JointDistribution> {
    let prepared = Prepared::new(problem, dist);
    if let Some(x) = prepared.violation(problem, dist, u) {
        return Err(Error::ProhibitedAction {
            state: x,
            action: u,
        });
    }
    prepared.propagate(problem, dist, u)
}

/// State marginals `P(x_τ = ·)` for τ = 0..=N under an open-loop sequence.
fn state_marginals(model: &MdpModel, x_t: usize, sequence: &[usize]) -> Vec<Vec<f64>> {
    let n = model.num_states();
    let mut cur = vec![0.0; n];
    cur[x_t] = 1.0;
    let mut out = vec![cur.clone()];
    for &u in sequence {
        let mut next = vec![0.0; n];
        for (x, &m) in cur.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (d, p) in model.successors(x, u) {
                next[d] += m * p;
            }
        }
        out.push(next.clone());
        cur = next;
    }
    out
}

/// Discounted nominal reward over the horizon.
pub fn evaluate_r1(model: &MdpModel, x_t: usize, sequence: &[usize]) -> f64 {
    let marginals = state_marginals(model, x_t, sequence);
    let lambda = model.discount();
    sequence
        .iter()
        .enumerate()
        .map(|(tau, &u)| {
            let stage: f64 = marginals[tau]
                .iter()
                .enumerate()
                .map(|(x, &m)| m * model.reward(x, u))
                .sum();
            lambda.powi(tau as i32) * stage
        })
        .sum()
}

/// Terminal value `λ^N E[V(x_N)]`.
pub fn evaluate_r2_star(
    model: &MdpModel,
    nominal: &ValueFunction,
    x_t: usize,
    sequence: &[usize],
) -> f64 {
    let marginals = state_marginals(model, x_t, sequence);
    let last = marginals.last().expect("at least the initial marginal");
    let expected: f64 = last.iter().zip(&nominal.values).map(|(m, v)| m * v).sum();
    model.discount().powi(sequence.len() as i32) * expected
}

/// Discounted expected detection over steps `1..N`.
pub fn evaluate_r3(
    problem: &DetectionProblem,
    x_t: usize,
    o_t: &Belief,
    sequence: &[usize],
) -> Result<f64> {
    problem.check_belief(o_t)?;
    let lambda = problem.model().discount();
    let mut dist = JointDistribution::point(problem.num_states(), x_t, o_t.clone());
    let mut total = 0.0;
    for (tau, &u) in sequence
        .iter()
        .enumerate()
        .take(sequence.len().saturating_sub(1))
    {
        dist = propagate_joint(&dist, u, problem)?;
        total += lambda.powi(tau as i32 + 1) * dist.expected_penalty();
    }
    Ok(total)
}

/// Scored open-loop sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceEvaluation {
    pub sequence: Vec<usize>,
    pub r1: f64,
    pub r2_star: f64,
    pub r3: f64,
    pub objective: f64,
}

/// A prefix cut off because its last action is prohibited at some atom.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PruneEvent {
    /// Actions applied before the prohibited one.
    pub prefix: Vec<usize>,
    pub action: usize,
    /// State of the atom that prohibits it.
    pub state: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanResult {
    pub config: PlannerConfig,
    pub best_sequence: Vec<usize>,
    pub best_objective: f64,
    pub first_action: usize,
    pub tie: bool,
    /// Every complete admissible sequence, in lexicographic order.
    pub evaluations: Vec<SequenceEvaluation>,
    pub pruned: Vec<PruneEvent>,
    /// Admissible prefixes of every length that were expanded or scored.
    pub evaluated_prefixes: usize,
}

impl PlanResult {
    pub fn best(&self) -> &SequenceEvaluation {
        self.evaluations
            .iter()
            .find(|e| e.sequence == self.best_sequence)
            .expect("best sequence is among the evaluations")
    }
}

struct Search<'a> {
    problem: &'a DetectionProblem,
    config: PlannerConfig,
    evaluations: Vec<SequenceEvaluation>,
    pruned: Vec<PruneEvent>,
    evaluated_prefixes: usize,
}

impl Search<'_> {
    fn objective(&self, r1: f64, r2: f64, r3: f64) -> f64 {
        self.config.w_n * (r1 + r2) - (self.config.w_a + self.config.w_a_prime) * r3
    }

    /// Expand `dist`, the law of (x_τ, o_τ) after `prefix` (τ = prefix length).
    /// `r3` already includes depth τ.
    fn expand(
        &mut self,
        dist: &JointDistribution,
        prefix: &mut Vec<usize>,
        r1: f64,
        r3: f64,
        actions: &[usize],
    ) -> Result<()> {
        let problem = self.problem;
        let model = problem.model();
        let tau = prefix.len();
        let horizon = self.config.horizon;
        let lambda = model.discount();
        let prepared = Prepared::new(problem, dist);
        let marginal = dist.state_marginal();
        for &u in actions {
            if let Some(state) = prepared.violation(problem, dist, u) {
                self.pruned.push(PruneEvent {
                    prefix: prefix.clone(),
                    action: u,
                    state,
                });
                continue;
            }
            self.evaluated_prefixes += 1;
            let stage: f64 = marginal
                .iter()
                .enumerate()
                .map(|(x, &m)| m * model.reward(x, u))
                .sum();
            let r1_next = r1 + lambda.powi(tau as i32) * stage;
            prefix.push(u);
            if tau + 1 == horizon {
                let mut terminal = vec![0.0; marginal.len()];
                for (x, &m) in marginal.iter().enumerate() {
                    if m == 0.0 {
                        continue;
                    }
                    for &(d, p) in problem.successors(x, u) {
                        terminal[d] += m * p;
                    }
                }
                let expected: f64 = terminal
                    .iter()
                    .zip(&problem.nominal_value().values)
                    .map(|(m, v)| m * v)
                    .sum();
                let r2 = lambda.powi(horizon as i32) * expected;
                self.evaluations.push(SequenceEvaluation {
                    sequence: prefix.clone(),
                    r1: r1_next,
                    r2_star: r2,
                    r3,
                    objective: self.objective(r1_next, r2, r3),
                });
            } else {
                let next = prepared.propagate(problem, dist, u)?;
                let r3_next = r3 + lambda.powi(tau as i32 + 1) * next.expected_penalty();
                let all: Vec<usize> = (0..problem.num_actions()).collect();
                self.expand(&next, prefix, r1_next, r3_next, &all)?;
            }
            prefix.pop();
        }
        Ok(())
    }
}

/// Exhaustive search over admissible open-loop sequences of length `N`.
pub fn plan(
    problem: &DetectionProblem,
    x_t: usize,
    o_t: &Belief,
    config: PlannerConfig,
) -> Result<PlanResult> {
    problem.check_belief(o_t)?;
    if x_t >= problem.num_states() {
        return Err(Error::DimensionMismatch(format!(
            "state {x_t} out of range"
        )));
    }
    if !config.tail_weight_in_range(problem.model().discount()) {
        warn!(
            "tail weight {} outside the suggested range [0, {}]",
            config.w_a_prime,
            config.suggested_tail_weight(problem.model().discount())
        );
    }
    let root = JointDistribution::point(problem.num_states(), x_t, o_t.clone());

    // root subtrees are independent; results are concatenated in action order
    let subtrees: Vec<Result<Search>> = (0..problem.num_actions())
        .into_par_iter()
        .map(|u| {
            let mut s = Search {
                problem,
                config,
                evaluations: Vec::new(),
                pruned: Vec::new(),
                evaluated_prefixes: 0,
            };
            s.expand(
                &root,
                &mut Vec::with_capacity(config.horizon),
                0.0,
                0.0,
                &[u],
            )?;
            Ok(s)
        })
        .collect();

    let mut evaluations = Vec::new();
    let mut pruned = Vec::new();
    let mut evaluated_prefixes = 0;
    for s in subtrees {
        let s = s?;
        evaluations.extend(s.evaluations);
        pruned.extend(s.pruned);
        evaluated_prefixes += s.evaluated_prefixes;
    }

    let mut best: Option<usize> = None;
    let mut tie = false;
    for (i, e) in evaluations.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) => {
                let incumbent = evaluations[b].objective;
                let band = OBJECTIVE_TIE_TOL * incumbent.abs().max(1.0);
                if e.objective > incumbent + band {
                    best = Some(i);
                    tie = false;
                } else if (e.objective - incumbent).abs() <= band {
                    tie = true;
                }
            }
        }
    }
    let best = best.ok_or(Error::NoAdmissibleSequence {
        horizon: config.horizon,
    })?;
    let best_eval = &evaluations[best];
    Ok(PlanResult {
        config,
        best_sequence: best_eval.sequence.clone(),
        best_objective: best_eval.objective,
        first_action: best_eval.sequence[0],
        tie,
        evaluations: evaluations.clone(),
        pruned,
        evaluated_prefixes,
    })
}

/// [`plan`], retrying with shorter horizons when every sequence is pruned.
/// Returns the result and the horizon that produced it.
pub fn plan_with_fallback(
    problem: &DetectionProblem,
    x_t: usize,
    o_t: &Belief,
    config: PlannerConfig,
) -> Result<(PlanResult, usize)> {
    let mut horizon = config.horizon;
    loop {
        match plan(problem, x_t, o_t, config.with_horizon(horizon)) {
            Err(Error::NoAdmissibleSequence { .. }) if horizon > 1 => {
                warn!("no admissible sequence of length {horizon}; shortening the horizon");
                horizon -= 1;
            }
            other => return other.map(|r| (r, horizon)),
        }
    }
}
