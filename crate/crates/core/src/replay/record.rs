use std::sync::Arc;

use crate::envs::{EnvSpec, StepResult};
use crate::error::{contract_err, Result};

/// One completed episode. Per-step arrays cover the valid steps only; the
/// observation-side arrays carry one extra entry for the final next-observation.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub id: u64,
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    /// `(len + 1) × n_agents × obs_dim`
    pub obs: Vec<f64>,
    /// `(len + 1) × state_dim`
    pub state: Vec<f64>,
    /// `(len + 1) × n_agents × n_actions`
    pub avail: Vec<bool>,
    /// `len × n_agents`
    pub actions: Vec<usize>,
    /// Team reward per step, `len`.
    pub reward: Vec<f64>,
    /// Normalised intrinsic reward per agent, `len × n_agents`.
    pub intrinsic: Vec<f64>,
    /// The last step reached a true terminal state (not the episode limit).
    pub terminal: bool,
    pub won: bool,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    /// Sum of team rewards over valid steps.
    pub fn external_return(&self) -> f64 {
        self.reward.iter().sum()
    }

    pub fn obs_at(&self, t: usize, agent: usize) -> &[f64] {
        let start = (t * self.n_agents + agent) * self.obs_dim;
        &self.obs[start..start + self.obs_dim]
    }

    pub fn state_at(&self, t: usize) -> &[f64] {
        &self.state[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn avail_at(&self, t: usize, agent: usize) -> &[bool] {
        let start = (t * self.n_agents + agent) * self.n_actions;
        &self.avail[start..start + self.n_actions]
    }

    /// Checks array lengths and the presence of at least one valid step.
    pub fn validate(&self) -> Result<()> {
        let l = self.len();
        if l == 0 {
            return contract_err(format!("episode {} has no valid steps", self.id));
        }
        let n = self.n_agents;
        let ok = self.obs.len() == (l + 1) * n * self.obs_dim
            && self.state.len() == (l + 1) * self.state_dim
            && self.avail.len() == (l + 1) * n * self.n_actions
            && self.actions.len() == l * n
            && self.intrinsic.len() == l * n;
        if !ok {
            return contract_err(format!("episode {} has inconsistent array lengths", self.id));
        }
        if self.actions.iter().any(|&a| a >= self.n_actions) {
            return contract_err(format!("episode {} holds an out-of-range action", self.id));
        }
        Ok(())
    }
}

/// Accumulates an episode step by step.
#[derive(Clone, Debug)]
pub struct EpisodeBuilder {
    rec: EpisodeRecord,
}

impl EpisodeBuilder {
    /// Starts from the reset observation.
    pub fn new(id: u64, spec: &EnvSpec, first: &StepResult) -> Self {
        let mut rec = EpisodeRecord {
            id,
            n_agents: spec.n_agents,
            n_actions: spec.n_actions,
            obs_dim: spec.obs_dim,
            state_dim: spec.state_dim,
            obs: Vec::new(),
            state: Vec::new(),
            avail: Vec::new(),
            actions: Vec::new(),
            reward: Vec::new(),
            intrinsic: Vec::new(),
            terminal: false,
            won: false,
        };
        Self::push_observation(&mut rec, first);
        Self { rec }
    }

    fn push_observation(rec: &mut EpisodeRecord, r: &StepResult) {
        r.obs.iter().for_each(|o| rec.obs.extend_from_slice(o));
        rec.state.extend_from_slice(&r.state);
        r.avail.iter().for_each(|a| rec.avail.extend_from_slice(a));
    }

    /// Records the joint action taken and the environment's response.
    pub fn push(&mut self, actions: &[usize], result: &StepResult) {
        self.rec.actions.extend_from_slice(actions);
        self.rec.reward.push(result.reward);
        Self::push_observation(&mut self.rec, result);
        if result.done {
            self.rec.terminal = !result.timeout;
            self.rec.won = result.won;
        }
    }

    /// Appends intrinsic rewards for the oldest step still missing them.
    pub fn push_intrinsic(&mut self, values: &[f64]) {
        self.rec.intrinsic.extend_from_slice(values);
    }

    pub fn steps(&self) -> usize {
        self.rec.len()
    }

    pub fn finish(self) -> Result<EpisodeRecord> {
        self.rec.validate()?;
        Ok(self.rec)
    }
}

/// Time-major, zero-padded view of a batch of episodes.
///
/// Row layout inside each time slice is episode-major: agent rows are
/// `episode · n_agents + agent`.
#[derive(Clone, Debug)]
pub struct EpisodeBatch {
    pub episodes: usize,
    pub steps: usize,
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub lengths: Vec<usize>,
    /// `steps + 1` slices of `episodes·n_agents × obs_dim`.
    pub obs: Vec<Vec<f64>>,
    /// `steps + 1` slices of `episodes × state_dim`.
    pub state: Vec<Vec<f64>>,
    /// `steps + 1` slices of `episodes·n_agents × n_actions`.
    pub avail: Vec<Vec<bool>>,
    /// `steps` slices of `episodes·n_agents`.
    pub actions: Vec<Vec<usize>>,
    /// `steps` slices of `episodes`.
    pub reward: Vec<Vec<f64>>,
    /// Mean over agents of the intrinsic reward; `steps` slices of `episodes`.
    pub intrinsic: Vec<Vec<f64>>,
    /// 1 where the bootstrap is cut; `steps` slices of `episodes`.
    pub terminal: Vec<Vec<f64>>,
    /// 1 on valid steps; `steps` slices of `episodes`.
    pub mask: Vec<Vec<f64>>,
}

impl EpisodeBatch {
    pub fn from_records(records: &[Arc<EpisodeRecord>]) -> Result<Self> {
        let Some(first) = records.first() else {
            return contract_err("cannot batch zero episodes");
        };
        let (n, na, od, sd) = (first.n_agents, first.n_actions, first.obs_dim, first.state_dim);
        if records
            .iter()
            .any(|r| (r.n_agents, r.n_actions, r.obs_dim, r.state_dim) != (n, na, od, sd))
        {
            return contract_err("episodes in one batch disagree on dimensions");
        }
        let b = records.len();
        let steps = records.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut batch = EpisodeBatch {
            episodes: b,
            steps,
            n_agents: n,
            n_actions: na,
            obs_dim: od,
            state_dim: sd,
            lengths: records.iter().map(|r| r.len()).collect(),
            obs: vec![vec![0.0; b * n * od]; steps + 1],
            state: vec![vec![0.0; b * sd]; steps + 1],
            avail: vec![vec![true; b * n * na]; steps + 1],
            actions: vec![vec![0; b * n]; steps],
            reward: vec![vec![0.0; b]; steps],
            intrinsic: vec![vec![0.0; b]; steps],
            terminal: vec![vec![0.0; b]; steps],
            mask: vec![vec![0.0; b]; steps],
        };
        for (j, r) in records.iter().enumerate() {
            let l = r.len();
            for t in 0..=l {
                let row = j * n * od;
                batch.obs[t][row..row + n * od].copy_from_slice(&r.obs[t * n * od..(t + 1) * n * od]);
                batch.state[t][j * sd..(j + 1) * sd].copy_from_slice(r.state_at(t));
                let row = j * n * na;
                batch.avail[t][row..row + n * na].copy_from_slice(&r.avail[t * n * na..(t + 1) * n * na]);
            }
            for t in 0..l {
                batch.actions[t][j * n..(j + 1) * n].copy_from_slice(&r.actions[t * n..(t + 1) * n]);
                batch.reward[t][j] = r.reward[t];
                batch.intrinsic[t][j] = r.intrinsic[t * n..(t + 1) * n].iter().sum::<f64>() / n as f64;
                batch.mask[t][j] = 1.0;
            }
            if r.terminal {
                batch.terminal[l - 1][j] = 1.0;
            }
        }
        Ok(batch)
    }
}
