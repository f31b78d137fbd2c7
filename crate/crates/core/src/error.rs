use thiserror::Error;

/// Errors raised by the solvers, planners and loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model:\n  {}", .0.join("\n  "))]
    InvalidModel(Vec<String>),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid belief: {0}")]
    InvalidBelief(String),

    #[error(
        "bayes update undefined: observation {observation} has predicted probability {predicted:e}"
    )]
    IllDefinedUpdate { observation: usize, predicted: f64 },

    #[error("action {action} is prohibited at state {state}")]
    ProhibitedAction { state: usize, action: usize },

    #[error("no admissible action at state {state}, belief {belief:?}")]
    EmptyAdmissibleSet { state: usize, belief: Vec<f64> },

    #[error("simplex grid with {points} points exceeds the cap of {cap}")]
    SizeOverflow { points: u128, cap: usize },

    #[error("every action sequence of length {horizon} was pruned as inadmissible")]
    NoAdmissibleSequence { horizon: usize },

    #[error("value iteration did not converge: residual {residual:e} after {iterations} sweeps")]
    NotConverged { iterations: usize, residual: f64 },

    #[error(
        "grid value iteration is limited to {cap} states but the model has {states}; \
         use the receding-horizon planner (`plan`, or `simulate --controller rho`) instead"
    )]
    TooManyStates { states: usize, cap: usize },

    #[error("traces do not share a configuration: {0}")]
    MixedConfig(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the surrounding environment (files, parsing)
    /// rather than of the model or the solver.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::InvalidConfig(_) => true,
            Error::AtStep { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
