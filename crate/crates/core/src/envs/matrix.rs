use serde::{Deserialize, Serialize};

use super::{check_agent, check_joint_action, compose_obs, Env, EnvSpec, StepResult};
use crate::error::{config_err, contract_err, Result};

/// One-shot cooperative matrix game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatrixConfig {
    pub n_agents: usize,
    pub n_actions: usize,
    /// Payoff tensor flattened row-major: agent 0's action is the slowest index.
    pub payoff: Vec<f64>,
    pub reward_scale: f64,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            n_agents: 2,
            n_actions: 3,
            payoff: vec![11.0, -30.0, 0.0, -30.0, 7.0, 6.0, 0.0, 0.0, 5.0],
            reward_scale: 1.0,
        }
    }
}

impl MatrixConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.n_actions == 0 {
            return config_err("env.matrix: n_agents and n_actions must be ≥ 1");
        }
        let want = self
            .n_actions
            .checked_pow(self.n_agents as u32)
            .filter(|&n| n <= 1 << 20)
            .ok_or_else(|| crate::Error::Config("env.matrix: joint action space too large".into()))?;
        if self.payoff.len() != want {
            return config_err(format!(
                "env.matrix.payoff: expected {want} entries ({}^{}), got {}",
                self.n_actions,
                self.n_agents,
                self.payoff.len()
            ));
        }
        if self.payoff.iter().any(|p| !p.is_finite()) || !self.reward_scale.is_finite() {
            return config_err("env.matrix: payoff and reward_scale must be finite");
        }
        Ok(())
    }

    pub fn payoff_of(&self, joint: &[usize]) -> f64 {
        self.payoff[flat_index(joint, self.n_actions)]
    }
}

fn flat_index(joint: &[usize], n_actions: usize) -> usize {
    joint.iter().fold(0, |acc, &a| acc * n_actions + a)
}

/// Every joint action attaining the maximum payoff, by exhaustive enumeration.
pub fn optimal_joint_actions(cfg: &MatrixConfig) -> Vec<Vec<usize>> {
    let best = cfg.payoff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..cfg.payoff.len())
        .filter(|&k| cfg.payoff[k] == best)
        .map(|mut k| {
            let mut joint = vec![0; cfg.n_agents];
            for slot in joint.iter_mut().rev() {
                *slot = k % cfg.n_actions;
                k /= cfg.n_actions;
            }
            joint
        })
        .collect()
}

pub struct CooperativeMatrix {
    cfg: MatrixConfig,
    spec: EnvSpec,
    finished: bool,
}

impl CooperativeMatrix {
    /// Observations carry a single constant-zero local feature.
    pub const LOCAL_DIM: usize = 1;

    pub fn new(cfg: MatrixConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = EnvSpec {
            n_agents: cfg.n_agents,
            n_actions: cfg.n_actions,
            obs_dim: Self::LOCAL_DIM + cfg.n_actions + cfg.n_agents,
            state_dim: 1,
            episode_limit: 1,
        };
        Ok(Self {
            cfg,
            spec,
            finished: false,
        })
    }

    fn observe(&self, last: Option<&[usize]>, reward: f64, done: bool, won: bool) -> StepResult {
        let n = self.cfg.n_agents;
        StepResult {
            obs: (0..n)
                .map(|i| compose_obs(&[0.0], last.map(|a| a[i]), i, self.cfg.n_actions, n))
                .collect(),
            state: vec![1.0],
            reward,
            done,
            timeout: false,
            won,
            avail: vec![vec![true; self.cfg.n_actions]; n],
        }
    }
}

impl Env for CooperativeMatrix {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> StepResult {
        self.finished = false;
        self.observe(None, 0.0, false, false)
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        if self.finished {
            return contract_err("step called on a finished matrix game");
        }
        check_joint_action(joint_action, &vec![vec![true; self.cfg.n_actions]; self.cfg.n_agents])?;
        self.finished = true;
        let payoff = self.cfg.payoff_of(joint_action);
        let best = self.cfg.payoff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(self.observe(
            Some(joint_action),
            payoff * self.cfg.reward_scale,
            true,
            payoff == best,
        ))
    }

    fn avail_actions(&self, agent: usize) -> Result<Vec<bool>> {
        check_agent(agent, self.cfg.n_agents)?;
        Ok(vec![true; self.cfg.n_actions])
    }
}
