//! JSON file formats for models, sensors and grid-world specifications.
//!
//! Model files list the kernel as `transition[action][source][destination]`;
//! it is transposed into the in-memory `[dest][src][action]` layout on load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::belief::ObservationModel;
use crate::error::{Error, Result};
use crate::mdp::MdpModel;
use crate::models::{example1, gridworld_model, GridWorldSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpModelFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub discount: f64,
    /// `[action][source][destination]`.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `[state][action]`.
    pub reward: Vec<Vec<f64>>,
}

impl MdpModelFile {
    pub fn from_model(model: &MdpModel) -> Self {
        let (n, a) = (model.num_states(), model.num_actions());
        Self {
            num_states: n,
            num_actions: a,
            discount: model.discount(),
            transition: (0..a)
                .map(|u| (0..n).map(|x| model.successor_distribution(x, u)).collect())
                .collect(),
            reward: (0..n)
                .map(|x| (0..a).map(|u| model.reward(x, u)).collect())
                .collect(),
        }
    }

    /// Convert, reporting every shape problem and violated invariant.
    pub fn into_model(self) -> Result<MdpModel> {
        let (n, a) = (self.num_states, self.num_actions);
        let mut problems = Vec::new();
        if n == 0 || a == 0 {
            problems.push("num_states and num_actions must be positive".to_string());
        }
        if self.transition.len() != a {
            problems.push(format!(
                "transition lists {} actions, expected {a}",
                self.transition.len()
            ));
        }
        for (u, per_action) in self.transition.iter().enumerate() {
            if per_action.len() != n {
                problems.push(format!(
                    "transition[{u}] lists {} source states, expected {n}",
                    per_action.len()
                ));
            }
            for (x, row) in per_action.iter().enumerate() {
                if row.len() != n {
                    problems.push(format!(
                        "transition[{u}][{x}] has {} destinations, expected {n}",
                        row.len()
                    ));
                }
            }
        }
        if self.reward.len() != n || self.reward.iter().any(|r| r.len() != a) {
            problems.push(format!("reward must be a {n}x{a} table"));
        }
        if !problems.is_empty() {
            return Err(Error::InvalidModel(problems));
        }
        let mut flat = vec![0.0; n * n * a];
        for (u, per_action) in self.transition.iter().enumerate() {
            for (x, row) in per_action.iter().enumerate() {
                for (d, &p) in row.iter().enumerate() {
                    flat[(d * n + x) * a + u] = p;
                }
            }
        }
        let reward = self.reward.into_iter().flatten().collect();
        let model = MdpModel::from_flat(n, a, flat, reward, self.discount)?;
        let violations = model.validate();
        if violations.is_empty() {
            Ok(model)
        } else {
            Err(Error::InvalidModel(violations))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationModelFile {
    pub num_observations: usize,
    /// `[observation][state]`.
    pub likelihood: Vec<Vec<f64>>,
}

impl ObservationModelFile {
    pub fn from_model(obs: &ObservationModel) -> Self {
        Self {
            num_observations: obs.num_observations(),
            likelihood: obs.to_matrix(),
        }
    }

    pub fn into_model(self) -> Result<ObservationModel> {
        if self.likelihood.len() != self.num_observations {
            return Err(Error::InvalidModel(vec![format!(
                "likelihood lists {} observations, expected {}",
                self.likelihood.len(),
                self.num_observations
            )]));
        }
        let obs = ObservationModel::from_matrix(&self.likelihood)
            .map_err(|e| Error::InvalidModel(vec![e.to_string()]))?;
        let violations = obs.validate();
        if violations.is_empty() {
            Ok(obs)
        } else {
            Err(Error::InvalidModel(violations))
        }
    }
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_model(path: &Path) -> Result<MdpModel> {
    let file: MdpModelFile = serde_json::from_value(read_json(path)?)?;
    file.into_model()
}

pub fn load_observation_model(path: &Path) -> Result<ObservationModel> {
    let file: ObservationModelFile = serde_json::from_value(read_json(path)?)?;
    file.into_model()
}

pub fn save_model(model: &MdpModel, path: &Path) -> Result<()> {
    std::fs::write(
        path,
        serde_json::to_string_pretty(&MdpModelFile::from_model(model))?,
    )?;
    Ok(())
}

pub fn save_observation_model(obs: &ObservationModel, path: &Path) -> Result<()> {
    std::fs::write(
        path,
        serde_json::to_string_pretty(&ObservationModelFile::from_model(obs))?,
    )?;
    Ok(())
}

/// A loaded instance: the MDP, its sensor (if known), and the grid layout for
/// grid worlds.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub name: String,
    pub model: MdpModel,
    pub obs: Option<ObservationModel>,
    pub grid: Option<GridWorldSpec>,
}

/// Resolve a model argument: `example1`, `gridworld`, a grid-world spec file
/// (a JSON object with a `width` key) or an MDP model file.
pub fn resolve_model(arg: &str) -> Result<LoadedModel> {
    match arg {
        "example1" => {
            let (model, obs) = example1();
            Ok(LoadedModel {
                name: arg.into(),
                model,
                obs: Some(obs),
                grid: None,
            })
        }
        "gridworld" => gridworld(arg.into(), GridWorldSpec::default()),
        path => {
            let value = read_json(Path::new(path))?;
            if value.get("width").is_some() {
                let spec: GridWorldSpec = serde_json::from_value(value)?;
                gridworld(path.into(), spec)
            } else {
                let file: MdpModelFile = serde_json::from_value(value)?;
                Ok(LoadedModel {
                    name: path.into(),
                    model: file.into_model()?,
                    obs: None,
                    grid: None,
                })
            }
        }
    }
}

fn gridworld(name: String, spec: GridWorldSpec) -> Result<LoadedModel> {
    let (model, obs) = gridworld_model(&spec)?;
    Ok(LoadedModel {
        name,
        model,
        obs: Some(obs),
        grid: Some(spec),
    })
}
