use serde::{Deserialize, Serialize};

use super::{check_agent, check_joint_action, compose_obs, Env, EnvSpec, StepResult};
use crate::error::{config_err, contract_err, Result};

/// Sparse-reward grid corridor.
///
/// All agents start at the left end `(0, height / 2)`; the single goal cell
/// sits at the right end on the same row. Reaching it with any agent pays
/// `goal_reward` and ends the episode; every other transition pays zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorridorConfig {
    pub length: usize,
    pub height: usize,
    pub n_agents: usize,
    pub episode_limit: usize,
    pub goal_reward: f64,
}

impl Default for CorridorConfig {
    fn default() -> Self {
        Self {
            length: 12,
            height: 3,
            n_agents: 2,
            episode_limit: 30,
            goal_reward: 20.0,
        }
    }
}

impl CorridorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length < 2 || self.height == 0 || self.n_agents == 0 || self.episode_limit == 0 {
            return config_err("env.corridor: need length ≥ 2, height ≥ 1, n_agents ≥ 1, episode_limit ≥ 1");
        }
        if !self.goal_reward.is_finite() {
            return config_err("env.corridor.goal_reward must be finite");
        }
        Ok(())
    }
}

/// Actions: stay, up, down, left, right.
pub const CORRIDOR_ACTIONS: usize = 5;
const MOVES: [(i64, i64); CORRIDOR_ACTIONS] = [(0, 0), (0, -1), (0, 1), (-1, 0), (1, 0)];

pub struct Corridor {
    cfg: CorridorConfig,
    spec: EnvSpec,
    pos: Vec<(usize, usize)>,
    t: usize,
    finished: bool,
    goal_visited: bool,
}

impl Corridor {
    /// 3×3 wall window, 3×3 goal window, normalised (x, y).
    pub const LOCAL_DIM: usize = 9 + 9 + 2;

    pub fn new(cfg: CorridorConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = EnvSpec {
            n_agents: cfg.n_agents,
            n_actions: CORRIDOR_ACTIONS,
            obs_dim: Self::LOCAL_DIM + CORRIDOR_ACTIONS + cfg.n_agents,
            state_dim: 2 * cfg.n_agents + 2,
            episode_limit: cfg.episode_limit,
        };
        Ok(Self {
            pos: vec![(0, cfg.height / 2); cfg.n_agents],
            cfg,
            spec,
            t: 0,
            finished: true,
            goal_visited: false,
        })
    }

    pub fn goal(&self) -> (usize, usize) {
        (self.cfg.length - 1, self.cfg.height / 2)
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.pos
    }

    fn inside(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.cfg.length && (y as usize) < self.cfg.height
    }

    fn norm(v: usize, extent: usize) -> f64 {
        if extent <= 1 {
            0.0
        } else {
            v as f64 / (extent - 1) as f64
        }
    }

    fn local(&self, agent: usize) -> Vec<f64> {
        let (x, y) = self.pos[agent];
        let goal = self.goal();
        let mut walls = Vec::with_capacity(9);
        let mut goals = Vec::with_capacity(9);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (cx, cy) = (x as i64 + dx, y as i64 + dy);
                let inside = self.inside(cx, cy);
                walls.push(if inside { 0.0 } else { 1.0 });
                goals.push(if inside && (cx as usize, cy as usize) == goal { 1.0 } else { 0.0 });
            }
        }
        walls.extend(goals);
        walls.push(Self::norm(x, self.cfg.length));
        walls.push(Self::norm(y, self.cfg.height));
        walls
    }

    fn observe(&self, last: Option<&[usize]>, reward: f64, done: bool, timeout: bool, won: bool) -> StepResult {
        let n = self.cfg.n_agents;
        let mut state = Vec::with_capacity(self.spec.state_dim);
        for &(x, y) in &self.pos {
            state.push(Self::norm(x, self.cfg.length));
            state.push(Self::norm(y, self.cfg.height));
        }
        state.push(if self.goal_visited { 1.0 } else { 0.0 });
        state.push(self.t as f64 / self.cfg.episode_limit as f64);
        StepResult {
            obs: (0..n)
                .map(|i| compose_obs(&self.local(i), last.map(|a| a[i]), i, CORRIDOR_ACTIONS, n))
                .collect(),
            state,
            reward,
            done,
            timeout,
            won,
            avail: vec![vec![true; CORRIDOR_ACTIONS]; n],
        }
    }
}

impl Env for Corridor {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> StepResult {
        self.pos = vec![(0, self.cfg.height / 2); self.cfg.n_agents];
        self.t = 0;
        self.finished = false;
        self.goal_visited = false;
        self.observe(None, 0.0, false, false, false)
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        if self.finished {
            return contract_err("step called on a finished corridor episode");
        }
        check_joint_action(joint_action, &vec![vec![true; CORRIDOR_ACTIONS]; self.cfg.n_agents])?;
        for (p, &a) in self.pos.iter_mut().zip(joint_action) {
            let (dx, dy) = MOVES[a];
            let (nx, ny) = (p.0 as i64 + dx, p.1 as i64 + dy);
            if nx >= 0 && ny >= 0 && (nx as usize) < self.cfg.length && (ny as usize) < self.cfg.height {
                *p = (nx as usize, ny as usize);
            }
        }
        self.t += 1;
        let goal = self.goal();
        let reached = self.pos.iter().any(|&p| p == goal);
        if reached {
            self.goal_visited = true;
        }
        let timeout = !reached && self.t >= self.cfg.episode_limit;
        let done = reached || timeout;
        self.finished = done;
        let reward = if reached { self.cfg.goal_reward } else { 0.0 };
        Ok(self.observe(Some(joint_action), reward, done, timeout, reached))
    }

    fn avail_actions(&self, agent: usize) -> Result<Vec<bool>> {
        check_agent(agent, self.cfg.n_agents)?;
        Ok(vec![true; CORRIDOR_ACTIONS])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_puts_everyone_at_start() {
        let mut env = Corridor::new(CorridorConfig::default()).unwrap();
        let r = env.reset(9);
        assert!(env.positions().iter().all(|&p| p == (0, 1)));
        // goal-visited flag is unset
        assert_eq!(r.state[4], 0.0);
    }

    #[test]
    fn walking_into_a_wall_keeps_position() {
        let mut env = Corridor::new(CorridorConfig::default()).unwrap();
        env.reset(0);
        let r = env.step(&[3, 3]).unwrap();
        assert!(env.positions().iter().all(|&p| p == (0, 1)));
        assert_eq!(r.reward, 0.0);
        env.step(&[1, 1]).unwrap();
        env.step(&[1, 1]).unwrap();
        assert!(env.positions().iter().all(|&p| p == (0, 0)));
    }

    #[test]
    fn walking_right_reaches_the_goal() {
        let cfg = CorridorConfig::default();
        let mut env = Corridor::new(cfg.clone()).unwrap();
        env.reset(0);
        let mut total = 0.0;
        let mut last = None;
        for _ in 0..cfg.length - 1 {
            let r = env.step(&[4, 0]).unwrap();
            total += r.reward;
            last = Some(r);
        }
        let last = last.unwrap();
        assert!(last.done && last.won && !last.timeout);
        assert_eq!(total, 20.0);
    }

    #[test]
    fn episode_limit_times_out() {
        let cfg = CorridorConfig {
            episode_limit: 4,
            ..CorridorConfig::default()
        };
        let mut env = Corridor::new(cfg).unwrap();
        env.reset(0);
        for k in 0..4 {
            let r = env.step(&[0, 0]).unwrap();
            assert_eq!(r.done, k == 3);
            assert_eq!(r.timeout, k == 3);
        }
        assert!(env.step(&[0, 0]).is_err());
    }
}
