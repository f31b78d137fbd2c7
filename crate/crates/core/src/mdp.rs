//! Finite MDP model and the nominal (reward-only) problem.
//!
//! Kernels are stored as `p[dest][src][action]`, i.e. column `(src, action)` of
//! the stored tensor is the successor distribution `p(· | src, action)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on column sums of stochastic kernels.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Two Q-values closer than this (relative to max(1, |q|)) count as a tie.
pub const TIE_TOL: f64 = 1e-9;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// A finite, discounted Markov decision process.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel {
    num_states: usize,
    num_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    discount: f64,
}

impl MdpModel {
    /// Build a model from a flat kernel in `[dest][src][action]` order and a flat
    /// reward table in `[state][action]` order.
    ///
    /// Only the table shapes are checked here; use [`MdpModel::validate`] for the
    /// stochasticity and discount invariants.
    pub fn from_flat(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::DimensionMismatch(
                "state and action spaces must be non-empty".into(),
            ));
        }
        let want = num_states * num_states * num_actions;
        if transition.len() != want {
            return Err(Error::DimensionMismatch(format!(
                "transition table has {} entries, expected {want}",
                transition.len()
            )));
        }
        if reward.len() != num_states * num_actions {
            return Err(Error::DimensionMismatch(format!(
                "reward table has {} entries, expected {}",
                reward.len(),
                num_states * num_actions
            )));
        }
        Ok(Self {
            num_states,
            num_actions,
            transition,
            reward,
            discount,
        })
    }

    /// Build a model from one column-stochastic matrix per action, each indexed
    /// `[dest][src]` (the `p_ij = p(i | j, k)` convention), and rewards `[state][action]`.
    pub fn from_action_matrices(
        matrices: &[Vec<Vec<f64>>],
        reward: &[Vec<f64>],
        discount: f64,
    ) -> Result<Self> {
        let num_actions = matrices.len();
        let num_states = reward.len();
        let mut transition = vec![0.0; num_states * num_states * num_actions];
        for (a, m) in matrices.iter().enumerate() {
            if m.len() != num_states || m.iter().any(|row| row.len() != num_states) {
                return Err(Error::DimensionMismatch(format!(
                    "transition matrix for action {a} is not {num_states}x{num_states}"
                )));
            }
            for (dest, row) in m.iter().enumerate() {
                for (src, &p) in row.iter().enumerate() {
                    transition[(dest * num_states + src) * num_actions + a] = p;
                }
            }
        }
        if reward.iter().any(|r| r.len() != num_actions) {
            return Err(Error::DimensionMismatch(format!(
                "reward rows must have {num_actions} entries"
            )));
        }
        let reward = reward.iter().flatten().copied().collect();
        Self::from_flat(num_states, num_actions, transition, reward, discount)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// `p(dest | src, action)`.
    #[inline]
    pub fn p(&self, dest: usize, src: usize, action: usize) -> f64 {
        self.transition[(dest * self.num_states + src) * self.num_actions + action]
    }

    #[inline]
    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.reward[state * self.num_actions + action]
    }

    /// Successor distribution `p(· | src, action)` as a dense vector.
    pub fn successor_distribution(&self, src: usize, action: usize) -> Vec<f64> {
        (0..self.num_states)
            .map(|d| self.p(d, src, action))
            .collect()
    }

    /// Successors with strictly positive probability.
    pub fn successors(&self, src: usize, action: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.num_states)
            .map(move |d| (d, self.p(d, src, action)))
            .filter(|&(_, p)| p > 0.0)
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Collect every violated invariant. An empty list means the model is valid.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.discount > 0.0 && self.discount < 1.0) {
            out.push(format!(
                "discount {} is not strictly between 0 and 1",
                self.discount
            ));
        }
        for src in 0..self.num_states {
            for a in 0..self.num_actions {
                let mut sum = 0.0;
                for dest in 0..self.num_states {
                    let p = self.p(dest, src, a);
                    if !(0.0..=1.0).contains(&p) {
                        out.push(format!("p({dest}|{src},{a}) = {p} is outside [0, 1]"));
                    }
                    sum += p;
                }
                if !sum.is_finite() || (sum - 1.0).abs() > STOCHASTIC_TOL {
                    out.push(format!(
                        "transition column (x={src}, u={a}) sums to {sum}, expected 1"
                    ));
                }
                let r = self.reward(src, a);
                if !r.is_finite() {
                    out.push(format!("reward R({src},{a}) = {r} is not finite"));
                }
            }
        }
        out
    }

    pub(crate) fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidModel(v))
        }
    }

    /// `R(x,u) + λ Σ_{x'} p(x'|x,u) V(x')`.
    pub fn q_value(&self, values: &[f64], state: usize, action: usize) -> f64 {
        let expected: f64 = (0..self.num_states)
            .map(|d| self.p(d, state, action) * values[d])
            .sum();
        self.reward(state, action) + self.discount * expected
    }

    /// One Jacobi sweep of the Bellman optimality operator.
    pub fn bellman_backup(&self, values: &[f64]) -> Vec<f64> {
        (0..self.num_states)
            .map(|x| {
                (0..self.num_actions)
                    .map(|u| self.q_value(values, x, u))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }
}

/// Nominal value function `V(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn get(&self, state: usize) -> f64 {
        self.values[state]
    }
}

/// Deterministic stationary policy with per-state tie markers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub actions: Vec<usize>,
    pub tie_flags: Vec<bool>,
}

impl Policy {
    /// A policy without tie information, e.g. one of an enumerated family.
    pub fn from_actions(actions: Vec<usize>) -> Self {
        let tie_flags = vec![false; actions.len()];
        Self { actions, tie_flags }
    }

    pub fn action(&self, state: usize) -> usize {
        self.actions[state]
    }

    pub fn has_ties(&self) -> bool {
        self.tie_flags.iter().any(|&t| t)
    }

    pub fn tied_states(&self) -> Vec<usize> {
        self.tie_flags
            .iter()
            .enumerate()
            .filter_map(|(x, &t)| t.then_some(x))
            .collect()
    }
}

/// Result of a value iteration run.
#[derive(Debug, Clone)]
pub struct ViOutcome<V> {
    pub value: V,
    /// Sup-norm difference of the last two iterates.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Residual after each sweep, in order.
    pub residuals: Vec<f64>,
}

/// Value iteration from `V⁰ ≡ 0` until `‖V^{k+1} − V^k‖_∞ ≤ tol` or `max_iter` sweeps.
pub fn nominal_value_iteration(
    model: &MdpModel,
    tol: f64,
    max_iter: usize,
) -> Result<ViOutcome<ValueFunction>> {
    model.ensure_valid()?;
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let mut values = vec![0.0; model.num_states()];
    let mut residuals = Vec::new();
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _ in 0..max_iter {
        let next = model.bellman_backup(&values);
        residual = sup_distance(&next, &values);
        residuals.push(residual);
        values = next;
        if residual <= tol {
            converged = true;
            break;
        }
    }
    Ok(ViOutcome {
        value: ValueFunction { values },
        residual,
        iterations: residuals.len(),
        converged,
        residuals,
    })
}

/// Greedy policy with respect to `value`; ties go to the lowest action index
/// and are flagged.
pub fn extract_nominal_policy(model: &MdpModel, value: &ValueFunction) -> Policy {
    let mut actions = Vec::with_capacity(model.num_states());
    let mut tie_flags = Vec::with_capacity(model.num_states());
    for x in 0..model.num_states() {
        let q: Vec<f64> = (0..model.num_actions())
            .map(|u| model.q_value(&value.values, x, u))
            .collect();
        let (action, tie) = argmax_lowest(&q);
        actions.push(action);
        tie_flags.push(tie);
    }
    Policy { actions, tie_flags }
}

/// Index of the maximum, taking the lowest index among entries within
/// [`TIE_TOL`] of the maximum. The flag reports whether more than one entry
/// was in that band.
pub(crate) fn argmax_lowest(q: &[f64]) -> (usize, bool) {
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let band = TIE_TOL * best.abs().max(1.0);
    let mut near = q.iter().enumerate().filter(|(_, &v)| best - v <= band);
    let (first, _) = near.next().expect("non-empty action set");
    (first, near.next().is_some())
}

/// Solve `V = R_π + λ P_π V` directly.
pub fn policy_evaluation_exact(model: &MdpModel, policy: &Policy) -> Result<ValueFunction> {
    model.ensure_valid()?;
    let n = model.num_states();
    if policy.actions.len() != n || policy.actions.iter().any(|&u| u >= model.num_actions()) {
        return Err(Error::DimensionMismatch(
            "policy does not fit the model".into(),
        ));
    }
    let lambda = model.discount();
    let system = DMatrix::from_fn(n, n, |x, d| {
        let id = if x == d { 1.0 } else { 0.0 };
        id - lambda * model.p(d, x, policy.action(x))
    });
    let rhs = DVector::from_fn(n, |x, _| model.reward(x, policy.action(x)));
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::DimensionMismatch("singular policy evaluation system".into()))?;
    Ok(ValueFunction {
        values: sol.iter().copied().collect(),
    })
}

/// The Markov chain the adversary assumes: `p_a(x'|x) = p(x'|x, π(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedChain {
    num_states: usize,
    /// `[dest][src]`.
    probs: Vec<f64>,
    /// Positive entries of each source column.
    columns: Vec<Vec<(usize, f64)>>,
}

impl InducedChain {
    /// Build from a dense `[dest][src]` matrix.
    pub fn from_matrix(matrix: &[Vec<f64>]) -> Result<Self> {
        let n = matrix.len();
        if matrix.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch(
                "induced chain must be square".into(),
            ));
        }
        let probs: Vec<f64> = matrix.iter().flatten().copied().collect();
        Ok(Self::from_flat(n, probs))
    }

    fn from_flat(num_states: usize, probs: Vec<f64>) -> Self {
        let columns = (0..num_states)
            .map(|src| {
                (0..num_states)
                    .map(|d| (d, probs[d * num_states + src]))
                    .filter(|&(_, p)| p > 0.0)
                    .collect()
            })
            .collect();
        Self {
            num_states,
            probs,
            columns,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// `p_a(dest | src)`.
    #[inline]
    pub fn prob(&self, dest: usize, src: usize) -> f64 {
        self.probs[dest * self.num_states + src]
    }

    pub fn column(&self, src: usize) -> &[(usize, f64)] {
        &self.columns[src]
    }

    /// One-step prediction `Σ_x p_a(·|x) o(x)`.
    pub fn predict(&self, belief: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_states];
        for (src, &w) in belief.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for &(d, p) in &self.columns[src] {
                out[d] += p * w;
            }
        }
        out
    }

    /// Dense `[dest][src]` matrix.
    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        self.probs
            .chunks(self.num_states)
            .map(|r| r.to_vec())
            .collect()
    }
}

pub fn induced_chain(model: &MdpModel, policy: &Policy) -> InducedChain {
    let n = model.num_states();
    let mut probs = vec![0.0; n * n];
    for src in 0..n {
        let u = policy.action(src);
        for dest in 0..n {
            probs[dest * n + src] = model.p(dest, src, u);
        }
    }
    InducedChain::from_flat(n, probs)
}

pub(crate) fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_state(reward: f64, discount: f64) -> MdpModel {
        MdpModel::from_flat(1, 1, vec![1.0], vec![reward], discount).unwrap()
    }

    fn two_state_identity(rewards: [[f64; 2]; 2]) -> MdpModel {
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        MdpModel::from_action_matrices(
            &[id.clone(), id],
            &[rewards[0].to_vec(), rewards[1].to_vec()],
            0.9,
        )
        .unwrap()
    }

    #[test]
    fn bad_column_sum_is_reported_with_its_index() {
        let m = vec![vec![0.9, 0.0], vec![0.0, 1.0]];
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let model =
            MdpModel::from_action_matrices(&[m, id], &[vec![0.0, 0.0], vec![0.0, 0.0]], 0.9)
                .unwrap();
        let v = model.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].contains("x=0, u=0"), "{}", v[0]);
    }

    #[test]
    fn discount_of_one_is_rejected() {
        let v = single_state(1.0, 1.0).validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("discount"));
    }

    #[test]
    fn zero_reward_converges_in_one_sweep() {
        let model = two_state_identity([[0.0; 2]; 2]);
        let out = nominal_value_iteration(&model, 1e-10, 100).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        assert_eq!(out.value.values, vec![0.0, 0.0]);
    }

    #[test]
    fn single_state_geometric_series() {
        let model = single_state(1.0, 0.95);
        let out = nominal_value_iteration(&model, 1e-10, DEFAULT_MAX_ITER).unwrap();
        assert!((out.value.values[0] - 20.0).abs() < 1e-8);
        let exact =
            policy_evaluation_exact(&single_state(1.0, 0.5), &Policy::from_actions(vec![0]))
                .unwrap();
        assert!((exact.values[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn non_convergence_is_reported() {
        let model = single_state(1.0, 0.95);
        let out = nominal_value_iteration(&model, 1e-10, 5).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 5);
        assert!(out.residual > 1e-10);
    }

    #[test]
    fn dominant_action_is_chosen() {
        let model = two_state_identity([[1.0, 0.0], [2.0, 1.0]]);
        let v = nominal_value_iteration(&model, 1e-10, DEFAULT_MAX_ITER).unwrap();
        let pi = extract_nominal_policy(&model, &v.value);
        assert_eq!(pi.actions, vec![0, 0]);
        assert!(!pi.has_ties());
    }

    #[test]
    fn identical_actions_tie_to_lowest_index() {
        let model = two_state_identity([[1.0, 1.0], [0.5, 0.5]]);
        let v = nominal_value_iteration(&model, 1e-10, DEFAULT_MAX_ITER).unwrap();
        let pi = extract_nominal_policy(&model, &v.value);
        assert_eq!(pi.actions, vec![0, 0]);
        assert_eq!(pi.tie_flags, vec![true, true]);
    }

    #[test]
    fn zero_reward_evaluates_to_zero() {
        let model = two_state_identity([[0.0; 2]; 2]);
        let v = policy_evaluation_exact(&model, &Policy::from_actions(vec![1, 0])).unwrap();
        assert_eq!(v.values, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_kernel_induces_identity_chain() {
        let model = two_state_identity([[1.0, 0.0], [0.0, 1.0]]);
        let chain = induced_chain(&model, &Policy::from_actions(vec![1, 0]));
        assert_eq!(chain.to_matrix(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn shape_errors_are_caught() {
        assert!(MdpModel::from_flat(2, 1, vec![1.0; 3], vec![0.0; 2], 0.9).is_err());
        assert!(MdpModel::from_flat(0, 1, vec![], vec![], 0.9).is_err());
    }
}
