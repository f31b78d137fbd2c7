//! A detection-averse problem instance: the ego's MDP, the adversary's sensor,
//! and the nominal solution the adversary uses to model the ego.

use log::warn;
use sha2::{Digest, Sha256};

use crate::belief::{self, AugmentedSupport, Belief, ObservationModel, EPS_ZERO};
use crate::error::{Error, Result};
use crate::mdp::{
    extract_nominal_policy, induced_chain, nominal_value_iteration, InducedChain, MdpModel, Policy,
    ValueFunction, DEFAULT_MAX_ITER, DEFAULT_TOL,
};

#[derive(Debug, Clone)]
pub struct DetectionProblem {
    model: MdpModel,
    obs: ObservationModel,
    value: ValueFunction,
    policy: Policy,
    chain: InducedChain,
    /// `successors[x * |U| + u]`: positive entries of `p(·|x,u)`.
    successors: Vec<Vec<(usize, f64)>>,
    /// `emission[(x * |U| + u) * |Y| + y] = Σ_{x'} q(y|x') p(x'|x,u)`.
    emission: Vec<f64>,
}

impl DetectionProblem {
    /// Solve the nominal problem with default tolerances and assemble the instance.
    pub fn solve(model: MdpModel, obs: ObservationModel) -> Result<Self> {
        Self::solve_with(model, obs, DEFAULT_TOL, DEFAULT_MAX_ITER)
    }

    pub fn solve_with(
        model: MdpModel,
        obs: ObservationModel,
        tol: f64,
        max_iter: usize,
    ) -> Result<Self> {
        let out = nominal_value_iteration(&model, tol, max_iter)?;
        if !out.converged {
            warn!(
                "nominal value iteration stopped after {} sweeps with residual {:e}",
                out.iterations, out.residual
            );
        }
        let policy = extract_nominal_policy(&model, &out.value);
        if policy.has_ties() {
            warn!(
                "nominal policy has ties at states {:?}; lowest action index used",
                policy.tied_states()
            );
        }
        Self::new(model, obs, out.value, policy)
    }

    /// Assemble from an already solved nominal problem.
    pub fn new(
        model: MdpModel,
        obs: ObservationModel,
        value: ValueFunction,
        policy: Policy,
    ) -> Result<Self> {
        model.ensure_valid()?;
        obs.ensure_valid()?;
        let (nx, nu, ny) = (
            model.num_states(),
            model.num_actions(),
            obs.num_observations(),
        );
        if obs.num_states() != nx || value.values.len() != nx || policy.actions.len() != nx {
            return Err(Error::DimensionMismatch(format!(
                "model has {nx} states, observation model {}, value {}, policy {}",
                obs.num_states(),
                value.values.len(),
                policy.actions.len()
            )));
        }
        if let Some(&u) = policy.actions.iter().find(|&&u| u >= nu) {
            return Err(Error::DimensionMismatch(format!(
                "policy action {u} out of range"
            )));
        }
        let chain = induced_chain(&model, &policy);
        let mut successors = Vec::with_capacity(nx * nu);
        let mut emission = vec![0.0; nx * nu * ny];
        for x in 0..nx {
            for u in 0..nu {
                let succ: Vec<(usize, f64)> = model.successors(x, u).collect();
                let base = (x * nu + u) * ny;
                for y in 0..ny {
                    emission[base + y] = succ.iter().map(|&(d, p)| obs.q(y, d) * p).sum();
                }
                successors.push(succ);
            }
        }
        Ok(Self {
            model,
            obs,
            value,
            policy,
            chain,
            successors,
            emission,
        })
    }

    pub fn model(&self) -> &MdpModel {
        &self.model
    }

    pub fn obs(&self) -> &ObservationModel {
        &self.obs
    }

    pub fn chain(&self) -> &InducedChain {
        &self.chain
    }

    pub fn nominal_value(&self) -> &ValueFunction {
        &self.value
    }

    pub fn nominal_policy(&self) -> &Policy {
        &self.policy
    }

    pub fn num_states(&self) -> usize {
        self.model.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.model.num_actions()
    }

    pub fn num_observations(&self) -> usize {
        self.obs.num_observations()
    }

    pub fn successors(&self, x: usize, u: usize) -> &[(usize, f64)] {
        &self.successors[x * self.num_actions() + u]
    }

    /// `Σ_{x'} q(·|x') p(x'|x,u)` for all observations.
    pub fn emission(&self, x: usize, u: usize) -> &[f64] {
        let ny = self.num_observations();
        let base = (x * self.num_actions() + u) * ny;
        &self.emission[base..base + ny]
    }

    /// Predicted state distribution and observation probabilities under the
    /// adversary's model.
    pub fn predict(&self, belief: &Belief) -> (Vec<f64>, Vec<f64>) {
        let pred = self.chain.predict(belief.as_slice());
        let obs_probs = (0..self.num_observations())
            .map(|y| {
                pred.iter()
                    .enumerate()
                    .map(|(x, &w)| self.obs.q(y, x) * w)
                    .sum()
            })
            .collect();
        (pred, obs_probs)
    }

    /// Admissibility of `u` at state `x`, given the adversary's predicted
    /// observation probabilities.
    pub fn is_admissible_given(&self, x: usize, u: usize, predicted_obs: &[f64]) -> bool {
        self.emission(x, u)
            .iter()
            .zip(predicted_obs)
            .all(|(&e, &p)| !(e > EPS_ZERO && p <= EPS_ZERO))
    }

    pub fn admissible_actions(&self, x: usize, belief: &Belief) -> Vec<usize> {
        let (_, predicted) = self.predict(belief);
        (0..self.num_actions())
            .filter(|&u| self.is_admissible_given(x, u, &predicted))
            .collect()
    }

    pub fn is_admissible(&self, x: usize, belief: &Belief, u: usize) -> bool {
        let (_, predicted) = self.predict(belief);
        self.is_admissible_given(x, u, &predicted)
    }

    pub fn support(&self, x: usize, belief: &Belief, u: usize) -> Result<AugmentedSupport> {
        belief::augmented_transition_support(&self.model, &self.obs, &self.chain, x, belief, u)
    }

    pub fn bayes_update(&self, belief: &Belief, y: usize) -> Result<Belief> {
        belief::bayes_update(&self.chain, &self.obs, belief, y)
    }

    /// SHA-256 over the kernels, rewards, discount and sensor.
    pub fn fingerprint(&self) -> String {
        let m = &self.model;
        let mut h = Sha256::new();
        for n in [m.num_states(), m.num_actions(), self.obs.num_observations()] {
            h.update((n as u64).to_le_bytes());
        }
        h.update(m.discount().to_le_bytes());
        for x in 0..m.num_states() {
            for u in 0..m.num_actions() {
                h.update(m.reward(x, u).to_le_bytes());
                for d in 0..m.num_states() {
                    h.update(m.p(d, x, u).to_le_bytes());
                }
            }
            for y in 0..self.obs.num_observations() {
                h.update(self.obs.q(y, x).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub(crate) fn check_belief(&self, belief: &Belief) -> Result<()> {
        if belief.len() != self.num_states() {
            return Err(Error::DimensionMismatch(format!(
                "belief has {} entries, model has {} states",
                belief.len(),
                self.num_states()
            )));
        }
        Ok(())
    }
}
