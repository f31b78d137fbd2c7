//! The adversary's inference machinery.
//!
//! The adversary filters the ego's state with the chain induced by the nominal
//! policy. The ego may act differently, so an observation the adversary
//! considers impossible can occur; actions that could cause this are
//! prohibited, and the admissible ones define a finite-support transition law
//! on (state, belief) pairs.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{InducedChain, MdpModel, STOCHASTIC_TOL};

/// Probabilities at or below this are treated as zero.
pub const EPS_ZERO: f64 = 1e-12;

/// Beliefs closer than this in sup-norm are the same support point.
pub const EPS_MERGE: f64 = 1e-9;

/// Largest ℓ¹ deviation from 1 that construction silently renormalizes.
pub const RENORMALIZE_TOL: f64 = 1e-9;

/// Observation kernel `q(y | x)`, stored `[observation][state]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    num_observations: usize,
    num_states: usize,
    likelihood: Vec<f64>,
}

impl ObservationModel {
    /// Build from a dense `[observation][state]` table. Only shapes are checked.
    pub fn from_matrix(matrix: &[Vec<f64>]) -> Result<Self> {
        let num_observations = matrix.len();
        let num_states = matrix.first().map_or(0, Vec::len);
        if num_observations == 0 || num_states == 0 {
            return Err(Error::DimensionMismatch("empty observation table".into()));
        }
        if matrix.iter().any(|r| r.len() != num_states) {
            return Err(Error::DimensionMismatch(
                "observation rows differ in length".into(),
            ));
        }
        Ok(Self {
            num_observations,
            num_states,
            likelihood: matrix.iter().flatten().copied().collect(),
        })
    }

    pub fn num_observations(&self) -> usize {
        self.num_observations
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// `q(y | x)`.
    #[inline]
    pub fn q(&self, y: usize, x: usize) -> f64 {
        self.likelihood[y * self.num_states + x]
    }

    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        self.likelihood
            .chunks(self.num_states)
            .map(|r| r.to_vec())
            .collect()
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        for x in 0..self.num_states {
            let mut sum = 0.0;
            for y in 0..self.num_observations {
                let q = self.q(y, x);
                if !(0.0..=1.0).contains(&q) {
                    out.push(format!("q({y}|{x}) = {q} is outside [0, 1]"));
                }
                sum += q;
            }
            if !sum.is_finite() || (sum - 1.0).abs() > STOCHASTIC_TOL {
                out.push(format!(
                    "observation column x={x} sums to {sum}, expected 1"
                ));
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
}

/// A probability vector over the state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Belief(Vec<f64>);

impl Belief {
    /// Validate and renormalize. Entries must lie in `[0, 1]` and sum to 1
    /// within [`RENORMALIZE_TOL`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidBelief("empty belief".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::InvalidBelief(format!(
                "entry {i} = {p} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > RENORMALIZE_TOL {
            return Err(Error::InvalidBelief(format!("entries sum to {sum}")));
        }
        Ok(Self(probs.into_iter().map(|p| p / sum).collect()))
    }

    /// Wrap a vector already known to be normalized.
    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        Self(probs)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// All mass on `state`.
    pub fn point(n: usize, state: usize) -> Self {
        let mut v = vec![0.0; n];
        v[state] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, state: usize) -> f64 {
        self.0[state]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sup_distance(&self, other: &Belief) -> f64 {
        crate::mdp::sup_distance(&self.0, &other.0)
    }

    /// Hash key of the `EPS_MERGE` lattice cell containing this belief.
    /// Equal keys imply sup-distance below `EPS_MERGE`.
    pub(crate) fn merge_key(&self) -> Vec<i64> {
        self.0
            .iter()
            .map(|p| (p / EPS_MERGE).round() as i64)
            .collect()
    }
}

impl TryFrom<Vec<f64>> for Belief {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Belief::new(v)
    }
}

impl From<Belief> for Vec<f64> {
    fn from(b: Belief) -> Self {
        b.0
    }
}

/// `Σ_{x''} q(y|x'') Σ_x p_a(x''|x) o(x)`: the adversary's predictive
/// probability of the next observation.
pub fn predicted_obs_prob(
    chain: &InducedChain,
    obs: &ObservationModel,
    belief: &Belief,
    y: usize,
) -> f64 {
    let pred = chain.predict(belief.as_slice());
    pred.iter().enumerate().map(|(x, &w)| obs.q(y, x) * w).sum()
}

/// Predictive probabilities of every observation.
pub fn predicted_obs_probs(
    chain: &InducedChain,
    obs: &ObservationModel,
    belief: &Belief,
) -> Vec<f64> {
    let pred = chain.predict(belief.as_slice());
    (0..obs.num_observations())
        .map(|y| pred.iter().enumerate().map(|(x, &w)| obs.q(y, x) * w).sum())
        .collect()
}

/// One predict-update step of the adversary's filter.
pub fn bayes_update(
    chain: &InducedChain,
    obs: &ObservationModel,
    belief: &Belief,
    y: usize,
) -> Result<Belief> {
    let pred = chain.predict(belief.as_slice());
    posterior_from_prediction(obs, &pred, y)
}

pub(crate) fn posterior_from_prediction(
    obs: &ObservationModel,
    pred: &[f64],
    y: usize,
) -> Result<Belief> {
    let joint: Vec<f64> = pred
        .iter()
        .enumerate()
        .map(|(x, &w)| obs.q(y, x) * w)
        .collect();
    let denom: f64 = joint.iter().sum();
    if denom <= EPS_ZERO {
        return Err(Error::IllDefinedUpdate {
            observation: y,
            predicted: denom,
        });
    }
    Ok(Belief::from_normalized(
        joint.into_iter().map(|j| (j / denom).min(1.0)).collect(),
    ))
}

/// Probability that the ego emits `y` at the next step from `x` under `u`:
/// `Σ_{x'} q(y|x') p(x'|x,u)`.
pub fn emission_prob(
    model: &MdpModel,
    obs: &ObservationModel,
    x: usize,
    u: usize,
    y: usize,
) -> f64 {
    model.successors(x, u).map(|(d, p)| obs.q(y, d) * p).sum()
}

/// Actions that could produce an observation the adversary deems impossible.
pub fn prohibited_actions(
    model: &MdpModel,
    obs: &ObservationModel,
    chain: &InducedChain,
    x: usize,
    belief: &Belief,
) -> Vec<usize> {
    let predicted = predicted_obs_probs(chain, obs, belief);
    (0..model.num_actions())
        .filter(|&u| {
            (0..obs.num_observations())
                .any(|y| predicted[y] <= EPS_ZERO && emission_prob(model, obs, x, u, y) > EPS_ZERO)
        })
        .collect()
}

/// Complement of [`prohibited_actions`], in ascending order.
pub fn admissible_actions(
    model: &MdpModel,
    obs: &ObservationModel,
    chain: &InducedChain,
    x: usize,
    belief: &Belief,
) -> Vec<usize> {
    let prohibited = prohibited_actions(model, obs, chain, x, belief);
    (0..model.num_actions())
        .filter(|u| !prohibited.contains(u))
        .collect()
}

/// Extent of detection: the adversary's belief in the true state.
pub fn stage_penalty(x: usize, belief: &Belief) -> f64 {
    belief.get(x)
}

/// One support point of the (state, belief) transition law.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportAtom {
    pub state: usize,
    pub belief: Belief,
    pub prob: f64,
}

/// Finite support of the (state, belief) transition law from one (x, o, u).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentedSupport {
    pub atoms: Vec<SupportAtom>,
}

impl AugmentedSupport {
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob).sum()
    }

    /// Mass per successor state, summed over beliefs.
    pub fn state_marginal(&self, num_states: usize) -> Vec<f64> {
        let mut m = vec![0.0; num_states];
        for a in &self.atoms {
            m[a.state] += a.prob;
        }
        m
    }
}

/// Enumerate the support of `r(·,·|x,o,u)`, merging atoms with the same
/// successor state and coinciding posteriors.
pub fn augmented_transition_support(
    model: &MdpModel,
    obs: &ObservationModel,
    chain: &InducedChain,
    x: usize,
    belief: &Belief,
    u: usize,
) -> Result<AugmentedSupport> {
    let pred = chain.predict(belief.as_slice());
    let predicted: Vec<f64> = (0..obs.num_observations())
        .map(|y| pred.iter().enumerate().map(|(s, &w)| obs.q(y, s) * w).sum())
        .collect();
    let successors: Vec<(usize, f64)> = model.successors(x, u).collect();

    let mut atoms: Vec<SupportAtom> = Vec::new();
    let mut index: HashMap<(usize, Vec<i64>), usize> = HashMap::new();
    for (y, &py) in predicted.iter().enumerate() {
        let emitted: f64 = successors.iter().map(|&(d, p)| obs.q(y, d) * p).sum();
        if py <= EPS_ZERO {
            if emitted > EPS_ZERO {
                return Err(Error::ProhibitedAction {
                    state: x,
                    action: u,
                });
            }
            continue;
        }
        if emitted == 0.0 {
            continue;
        }
        let posterior = posterior_from_prediction(obs, &pred, y)?;
        let key = posterior.merge_key();
        for &(d, p) in &successors {
            let prob = obs.q(y, d) * p;
            if prob <= 0.0 {
                continue;
            }
            match index.get(&(d, key.clone())) {
                Some(&i) => atoms[i].prob += prob,
                None => {
                    index.insert((d, key.clone()), atoms.len());
                    atoms.push(SupportAtom {
                        state: d,
                        belief: posterior.clone(),
                        prob,
                    });
                }
            }
        }
    }
    Ok(AugmentedSupport { atoms })
}
