//! Cooperative partially observable environments.
//!
//! Every observation handed to the agents has the layout
//! `[local features | one-hot last action | one-hot agent id]`, so
//! `EnvSpec::obs_dim = local_dim + n_actions + n_agents`. At reset the
//! last-action block is all zeros.

mod corridor;
mod matrix;
mod skirmish;
mod trace;

pub use corridor::{Corridor, CorridorConfig};
pub use matrix::{optimal_joint_actions, CooperativeMatrix, MatrixConfig};
pub use skirmish::{Skirmish, SkirmishConfig};
pub use trace::TracingEnv;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub episode_limit: usize,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0
            || self.n_actions == 0
            || self.obs_dim == 0
            || self.state_dim == 0
            || self.episode_limit == 0
        {
            return config_err(format!("every environment dimension must be ≥ 1: {self:?}"));
        }
        Ok(())
    }
}

/// What the environment reports after `reset` or `step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub obs: Vec<Vec<f64>>,
    pub state: Vec<f64>,
    /// Team reward for the transition that produced this result (0 at reset).
    pub reward: f64,
    pub done: bool,
    /// `done` was caused by the episode limit rather than a terminal state.
    pub timeout: bool,
    /// The environment's success predicate held when the episode ended.
    pub won: bool,
    pub avail: Vec<Vec<bool>>,
}

/// The decentralised POMDP contract every environment implements.
pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;
    /// Starts a new episode; the initial configuration depends only on `seed`.
    fn reset(&mut self, seed: u64) -> StepResult;
    /// Applies a joint action. Choosing an unavailable action is a contract
    /// violation: the serving side is responsible for masking.
    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult>;
    fn avail_actions(&self, agent: usize) -> Result<Vec<bool>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    CooperativeMatrix,
    SparseCorridor,
    Skirmish,
}

impl std::fmt::Display for EnvName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EnvName::CooperativeMatrix => "cooperative_matrix",
            EnvName::SparseCorridor => "sparse_corridor",
            EnvName::Skirmish => "skirmish",
        };
        f.write_str(s)
    }
}

/// `[env]` section: the selected environment plus per-environment parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: EnvName,
    #[serde(default)]
    pub matrix: MatrixConfig,
    #[serde(default)]
    pub corridor: CorridorConfig,
    #[serde(default)]
    pub skirmish: SkirmishConfig,
}

impl EnvConfig {
    pub fn named(name: EnvName) -> Self {
        Self {
            name,
            matrix: MatrixConfig::default(),
            corridor: CorridorConfig::default(),
            skirmish: SkirmishConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.name {
            EnvName::CooperativeMatrix => self.matrix.validate(),
            EnvName::SparseCorridor => self.corridor.validate(),
            EnvName::Skirmish => self.skirmish.validate(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Env>> {
        self.validate()?;
        Ok(match self.name {
            EnvName::CooperativeMatrix => Box::new(CooperativeMatrix::new(self.matrix.clone())?),
            EnvName::SparseCorridor => Box::new(Corridor::new(self.corridor.clone())?),
            EnvName::Skirmish => Box::new(Skirmish::new(self.skirmish.clone())?),
        })
    }

    pub fn spec(&self) -> Result<EnvSpec> {
        Ok(self.build()?.spec().clone())
    }
}

/// Appends the last-action and agent-id one-hots to local features.
pub fn compose_obs(local: &[f64], last_action: Option<usize>, agent: usize, n_actions: usize, n_agents: usize) -> Vec<f64> {
    let mut obs = Vec::with_capacity(local.len() + n_actions + n_agents);
    obs.extend_from_slice(local);
    let start = obs.len();
    obs.resize(start + n_actions + n_agents, 0.0);
    if let Some(a) = last_action {
        obs[start + a] = 1.0;
    }
    obs[start + n_actions + agent] = 1.0;
    obs
}

pub(crate) fn check_agent(agent: usize, n_agents: usize) -> Result<()> {
    if agent >= n_agents {
        return config_err(format!("agent index {agent} out of range (n_agents = {n_agents})"));
    }
    Ok(())
}

pub(crate) fn check_joint_action(joint_action: &[usize], avail: &[Vec<bool>]) -> Result<()> {
    if joint_action.len() != avail.len() {
        return crate::error::contract_err(format!(
            "joint action has {} entries for {} agents",
            joint_action.len(),
            avail.len()
        ));
    }
    for (i, (&a, mask)) in joint_action.iter().zip(avail).enumerate() {
        if !mask.get(a).copied().unwrap_or(false) {
            return crate::error::contract_err(format!("agent {i} chose unavailable action {a}"));
        }
    }
    Ok(())
}
