//! Detection-averse control for finite Markov decision processes.
//!
//! An ego agent pursues a discounted reward while an adversary tracks its
//! state with a Bayesian filter built on the ego's nominal policy. The ego
//! trades reward against the adversary's belief in its true state, either
//! exactly, by value iteration over (state, belief) on a simplex grid, or
//! approximately, by receding-horizon tree search.
//!
//! - [`mdp`]: the nominal problem and its value iteration.
//! - [`belief`]: the adversary's filter, admissible actions, augmented kernel.
//! - [`simplex`], [`augmented`]: value iteration over (state, belief).
//! - [`rho`]: receding-horizon planning.
//! - [`sim`]: closed-loop simulation and traces.
//! - [`models`]: built-in instances.
//! - [`io`]: file formats.

pub mod augmented;
pub mod belief;
pub mod error;
pub mod io;
pub mod mdp;
pub mod models;
pub mod problem;
pub mod rho;
pub mod sim;
pub mod simplex;

pub use augmented::{AugmentedValueFunction, Weights};
pub use belief::{Belief, ObservationModel};
pub use error::{Error, Result};
pub use mdp::{InducedChain, MdpModel, Policy, ValueFunction};
pub use problem::DetectionProblem;
pub use rho::{PlanResult, PlannerConfig};
pub use simplex::SimplexGrid;
