//! Closed-loop simulation against the filtering adversary.

use std::io::Write;
use std::path::Path;

use log::warn;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augmented::{extract_augmented_policy, AugmentedValueFunction};
use crate::belief::{stage_penalty, Belief};
use crate::error::{Error, Result};
use crate::mdp::Policy;
use crate::problem::DetectionProblem;
use crate::rho::{plan_with_fallback, PlannerConfig};
use crate::simplex::SimplexGrid;

/// Chooses the ego's action from its state and the adversary's belief.
pub trait Controller: Sync {
    /// Short identifier including parameters, e.g. `rho(N=3,wn=0.5,wa=0.5,wap=0)`.
    fn id(&self) -> String;
    fn decide(&self, x: usize, belief: &Belief) -> Result<usize>;
}

/// Follows the nominal policy and ignores the belief.
pub struct NominalPolicyController {
    policy: Policy,
}

impl NominalPolicyController {
    pub fn new(policy: Policy) -> Self {
        Self { policy }
    }
}

impl Controller for NominalPolicyController {
    fn id(&self) -> String {
        "nominal".into()
    }

    fn decide(&self, x: usize, _belief: &Belief) -> Result<usize> {
        Ok(self.policy.action(x))
    }
}

/// Greedy with respect to a solved augmented value table.
pub struct AugmentedVIController<'a> {
    problem: &'a DetectionProblem,
    value: &'a AugmentedValueFunction,
    grid: &'a SimplexGrid,
}

impl<'a> AugmentedVIController<'a> {
    pub fn new(
        problem: &'a DetectionProblem,
        value: &'a AugmentedValueFunction,
        grid: &'a SimplexGrid,
    ) -> Self {
        Self {
            problem,
            value,
            grid,
        }
    }
}

impl Controller for AugmentedVIController<'_> {
    fn id(&self) -> String {
        format!(
            "augmented(M={},wn={},wa={})",
            self.grid.resolution(),
            self.value.weights.w_n,
            self.value.weights.w_a
        )
    }

    fn decide(&self, x: usize, belief: &Belief) -> Result<usize> {
        extract_augmented_policy(self.value, self.grid, self.problem, x, belief)
    }
}

/// Re-plans every step and applies the first action of the best sequence.
pub struct RhoController<'a> {
    problem: &'a DetectionProblem,
    config: PlannerConfig,
}

impl<'a> RhoController<'a> {
    pub fn new(problem: &'a DetectionProblem, config: PlannerConfig) -> Self {
        Self { problem, config }
    }
}

impl Controller for RhoController<'_> {
    fn id(&self) -> String {
        let c = &self.config;
        format!(
            "rho(N={},wn={},wa={},wap={})",
            c.horizon, c.w_n, c.w_a, c.w_a_prime
        )
    }

    fn decide(&self, x: usize, belief: &Belief) -> Result<usize> {
        plan_with_fallback(self.problem, x, belief, self.config).map(|(r, _)| r.first_action)
    }
}

/// Generator for run `run` of an experiment seeded with `seed`; each run gets
/// its own ChaCha stream.
pub fn episode_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

fn sample<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    WeightedIndex::new(weights)
        .expect("probability vector with positive mass")
        .sample(rng)
}

/// Advance one step: sample `x'`, then the leaked observation `y'`, then the
/// adversary's posterior.
pub fn step<R: Rng + ?Sized>(
    problem: &DetectionProblem,
    x: usize,
    belief: &Belief,
    u: usize,
    rng: &mut R,
) -> Result<(usize, usize, Belief)> {
    if !problem.is_admissible(x, belief, u) {
        return Err(Error::ProhibitedAction {
            state: x,
            action: u,
        });
    }
    let succ = problem.successors(x, u);
    let probs: Vec<f64> = succ.iter().map(|&(_, p)| p).collect();
    let next = succ[sample(&probs, rng)].0;
    let likelihood: Vec<f64> = (0..problem.num_observations())
        .map(|y| problem.obs().q(y, next))
        .collect();
    let y = sample(&likelihood, rng);
    let posterior = problem.bayes_update(belief, y)?;
    Ok((next, y, posterior))
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeConfig {
    pub steps: usize,
    /// Drawn from the initial belief when absent.
    pub initial_state: Option<usize>,
    /// Uniform when absent.
    pub initial_belief: Option<Belief>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub state: usize,
    pub action: usize,
    /// Observation that produced this step's belief; none at `t = 0`.
    pub observation: Option<usize>,
    pub belief: Belief,
    pub reward: f64,
    pub penalty: f64,
    pub avg_reward: f64,
    pub avg_detection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub seed: u64,
    pub run: u64,
    pub controller: String,
    pub model_hash: String,
    pub steps: usize,
    pub initial_state: usize,
    pub initial_belief: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub meta: TraceMeta,
    pub records: Vec<TraceRecord>,
}

pub const TRACE_HEADER: [&str; 8] = [
    "t",
    "x",
    "u",
    "y",
    "reward",
    "penalty",
    "avg_reward",
    "avg_detection",
];

impl Trace {
    pub fn final_avg_reward(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.avg_reward)
    }

    pub fn final_avg_detection(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.avg_detection)
    }

    pub fn visits(&self, state: usize) -> bool {
        self.records.iter().any(|r| r.state == state)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.t.to_string(),
                r.state.to_string(),
                r.action.to_string(),
                r.observation.map(|y| y.to_string()).unwrap_or_default(),
                r.reward.to_string(),
                r.penalty.to_string(),
                r.avg_reward.to_string(),
                r.avg_detection.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per step: `t,o0,o1,…`.
    pub fn write_beliefs_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.records.first().map_or(0, |r| r.belief.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("o{i}")));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.t.to_string()];
            row.extend(r.belief.as_slice().iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Write `<stem>.csv`, `<stem>.meta.json` and, if asked, `<stem>.beliefs.csv`.
    pub fn save(&self, dir: &Path, stem: &str, beliefs: bool) -> Result<()> {
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv_string())?;
        std::fs::write(
            dir.join(format!("{stem}.meta.json")),
            serde_json::to_string_pretty(&self.meta)?,
        )?;
        if beliefs {
            let f = std::fs::File::create(dir.join(format!("{stem}.beliefs.csv")))?;
            self.write_beliefs_csv(std::io::BufWriter::new(f))?;
        }
        Ok(())
    }
}

/// Simulate `config.steps` steps of closed-loop control.
pub fn run_closed_loop(
    controller: &dyn Controller,
    problem: &DetectionProblem,
    config: &EpisodeConfig,
    seed: u64,
    run: u64,
) -> Result<Trace> {
    if config.steps == 0 {
        return Err(Error::InvalidConfig(
            "episode needs at least one step".into(),
        ));
    }
    let n = problem.num_states();
    let mut rng = episode_rng(seed, run);
    let mut belief = config
        .initial_belief
        .clone()
        .unwrap_or_else(|| Belief::uniform(n));
    problem.check_belief(&belief)?;
    let mut x = match config.initial_state {
        Some(x) if x < n => x,
        Some(x) => {
            return Err(Error::InvalidConfig(format!(
                "initial state {x} out of range"
            )))
        }
        None => sample(belief.as_slice(), &mut rng),
    };
    if belief.get(x) == 0.0 {
        warn!("initial belief assigns zero probability to the initial state {x}");
    }
    let meta = TraceMeta {
        seed,
        run,
        controller: controller.id(),
        model_hash: problem.fingerprint(),
        steps: config.steps,
        initial_state: x,
        initial_belief: belief.as_slice().to_vec(),
    };

    let mut records = Vec::with_capacity(config.steps);
    let mut observation = None;
    let (mut reward_sum, mut detection_sum) = (0.0, 0.0);
    for t in 0..config.steps {
        let at = |e| Error::AtStep {
            step: t,
            source: Box::new(e),
        };
        let u = controller.decide(x, &belief).map_err(at)?;
        let reward = problem.model().reward(x, u);
        let penalty = stage_penalty(x, &belief);
        reward_sum += reward;
        detection_sum += penalty;
        let count = (t + 1) as f64;
        records.push(TraceRecord {
            t,
            state: x,
            action: u,
            observation,
            belief: belief.clone(),
            reward,
            penalty,
            avg_reward: reward_sum / count,
            avg_detection: detection_sum / count,
        });
        if t + 1 < config.steps {
            let (nx, y, nb) = step(problem, x, &belief, u, &mut rng).map_err(at)?;
            x = nx;
            observation = Some(y);
            belief = nb;
        }
    }
    Ok(Trace { meta, records })
}

/// Runs `0..runs` of one experiment, in parallel, returned in run order.
pub fn run_many(
    controller: &dyn Controller,
    problem: &DetectionProblem,
    config: &EpisodeConfig,
    seed: u64,
    runs: u64,
) -> Result<Vec<Trace>> {
    (0..runs)
        .into_par_iter()
        .map(|run| run_closed_loop(controller, problem, config, seed, run))
        .collect()
}

/// Mean and standard error of the final running metrics across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub controller: String,
    pub model_hash: String,
    pub steps: usize,
    pub runs: usize,
    pub mean_avg_reward: f64,
    pub se_avg_reward: f64,
    pub mean_avg_detection: f64,
    pub se_avg_detection: f64,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn aggregate_runs(traces: &[Trace]) -> Result<Summary> {
    let first = traces
        .first()
        .ok_or_else(|| Error::MixedConfig("no traces to aggregate".into()))?;
    for t in traces {
        if t.meta.controller != first.meta.controller
            || t.meta.model_hash != first.meta.model_hash
            || t.meta.steps != first.meta.steps
        {
            return Err(Error::MixedConfig(format!(
                "run {} ({}, {} steps) differs from run {} ({}, {} steps)",
                t.meta.run,
                t.meta.controller,
                t.meta.steps,
                first.meta.run,
                first.meta.controller,
                first.meta.steps
            )));
        }
    }
    let rewards: Vec<f64> = traces.iter().map(Trace::final_avg_reward).collect();
    let detections: Vec<f64> = traces.iter().map(Trace::final_avg_detection).collect();
    let (mean_avg_reward, se_avg_reward) = mean_and_se(&rewards);
    let (mean_avg_detection, se_avg_detection) = mean_and_se(&detections);
    Ok(Summary {
        controller: first.meta.controller.clone(),
        model_hash: first.meta.model_hash.clone(),
        steps: first.meta.steps,
        runs: traces.len(),
        mean_avg_reward,
        se_avg_reward,
        mean_avg_detection,
        se_avg_detection,
    })
}
