use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_agent, check_joint_action, compose_obs, Env, EnvSpec, StepResult};
use crate::error::{config_err, contract_err, Result};

/// Symmetric team battle on a small grid.
///
/// Both sides field `n_units` units with identical health, damage and ranges.
/// Allies are the learning agents; enemies follow a fixed script (shoot the
/// nearest ally in range, otherwise step towards it). A tick resolves
/// simultaneously: attacks are aimed from start-of-tick positions, moves are
/// applied, then damage lands and units at zero health die.
///
/// Team reward is damage dealt plus `kill_bonus` per kill plus `win_bonus` on
/// eliminating every enemy, scaled so a clean win totals `max_return`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkirmishConfig {
    pub n_units: usize,
    pub width: usize,
    pub height: usize,
    pub health: u32,
    pub damage: u32,
    pub shoot_range: f64,
    pub sight_range: f64,
    pub episode_limit: usize,
    pub kill_bonus: f64,
    pub win_bonus: f64,
    pub max_return: f64,
}

impl Default for SkirmishConfig {
    fn default() -> Self {
        Self {
            n_units: 3,
            width: 10,
            height: 6,
            health: 3,
            damage: 1,
            shoot_range: 2.0,
            sight_range: 4.0,
            episode_limit: 40,
            kill_bonus: 10.0,
            win_bonus: 200.0,
            max_return: 20.0,
        }
    }
}

impl SkirmishConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 || self.width < 4 || self.height == 0 || self.health == 0 || self.damage == 0 {
            return config_err("env.skirmish: need n_units ≥ 1, width ≥ 4, height ≥ 1, health ≥ 1, damage ≥ 1");
        }
        if self.n_units > self.height * 3 {
            return config_err("env.skirmish: too many units for the grid height");
        }
        if self.episode_limit == 0 {
            return config_err("env.skirmish.episode_limit must be ≥ 1");
        }
        let finite = [self.shoot_range, self.sight_range, self.kill_bonus, self.win_bonus, self.max_return];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return config_err("env.skirmish: ranges, bonuses and max_return must be finite and ≥ 0");
        }
        Ok(())
    }

    fn raw_max_return(&self) -> f64 {
        let n = self.n_units as f64;
        n * self.health as f64 + n * self.kill_bonus + self.win_bonus
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Unit {
    x: i64,
    y: i64,
    hp: u32,
}

impl Unit {
    fn alive(&self) -> bool {
        self.hp > 0
    }

    fn dist(&self, other: &Unit) -> f64 {
        (((self.x - other.x).pow(2) + (self.y - other.y).pow(2)) as f64).sqrt()
    }
}

pub const NOOP: usize = 0;
pub const STOP: usize = 1;
const MOVE_OFFSET: usize = 2;
const MOVES: [(i64, i64); 4] = [(0, -1), (0, 1), (1, 0), (-1, 0)];
pub const ATTACK_OFFSET: usize = 6;

pub struct Skirmish {
    cfg: SkirmishConfig,
    spec: EnvSpec,
    allies: Vec<Unit>,
    enemies: Vec<Unit>,
    t: usize,
    finished: bool,
    scale: f64,
}

impl Skirmish {
    pub fn new(cfg: SkirmishConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_units;
        let n_actions = ATTACK_OFFSET + n;
        let local = 3 + 4 * n + 4 * (n - 1);
        let spec = EnvSpec {
            n_agents: n,
            n_actions,
            obs_dim: local + n_actions + n,
            state_dim: 6 * n + 1,
            episode_limit: cfg.episode_limit,
        };
        let scale = cfg.max_return / cfg.raw_max_return();
        Ok(Self {
            cfg,
            spec,
            allies: Vec::new(),
            enemies: Vec::new(),
            t: 0,
            finished: true,
            scale,
        })
    }

    fn spawn_column(&self, x: i64, rng: &mut ChaCha8Rng) -> Vec<Unit> {
        let n = self.cfg.n_units as i64;
        let h = self.cfg.height as i64;
        let top = ((h - n) / 2).max(0);
        (0..n)
            .map(|i| {
                let y = ((top + i) % h + rng.gen_range(-1..=1)).clamp(0, h - 1);
                Unit { x, y, hp: self.cfg.health }
            })
            .collect()
    }

    fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.cfg.width as i64 && y < self.cfg.height as i64
    }

    fn mask(&self, agent: usize) -> Vec<bool> {
        let mut m = vec![false; self.spec.n_actions];
        let u = &self.allies[agent];
        if !u.alive() {
            m[NOOP] = true;
            return m;
        }
        m[STOP] = true;
        for (k, (dx, dy)) in MOVES.iter().enumerate() {
            m[MOVE_OFFSET + k] = self.in_bounds(u.x + dx, u.y + dy);
        }
        for (j, e) in self.enemies.iter().enumerate() {
            m[ATTACK_OFFSET + j] = e.alive() && u.dist(e) <= self.cfg.shoot_range;
        }
        m
    }

    fn nearest(from: &Unit, targets: &[Unit]) -> Option<usize> {
        targets
            .iter()
            .enumerate()
            .filter(|(_, t)| t.alive())
            .min_by(|(i, a), (j, b)| from.dist(a).total_cmp(&from.dist(b)).then(i.cmp(j)))
            .map(|(i, _)| i)
    }

    fn relative(&self, me: &Unit, other: &Unit) -> [f64; 4] {
        let visible = other.alive() && me.dist(other) <= self.cfg.sight_range;
        if !visible {
            return [0.0; 4];
        }
        let s = self.cfg.sight_range.max(1.0);
        [
            1.0,
            (other.x - me.x) as f64 / s,
            (other.y - me.y) as f64 / s,
            other.hp as f64 / self.cfg.health as f64,
        ]
    }

    fn local(&self, agent: usize) -> Vec<f64> {
        let n = self.cfg.n_units;
        let dim = 3 + 4 * n + 4 * (n - 1);
        let me = self.allies[agent];
        if !me.alive() {
            return vec![0.0; dim];
        }
        let mut v = Vec::with_capacity(dim);
        v.push(me.hp as f64 / self.cfg.health as f64);
        v.push(me.x as f64 / (self.cfg.width - 1) as f64);
        v.push(me.y as f64 / (self.cfg.height.max(2) - 1) as f64);
        for e in &self.enemies {
            v.extend(self.relative(&me, e));
        }
        for (j, a) in self.allies.iter().enumerate() {
            if j != agent {
                v.extend(self.relative(&me, a));
            }
        }
        v
    }

    fn global_state(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.spec.state_dim);
        for u in self.allies.iter().chain(&self.enemies) {
            s.push(u.hp as f64 / self.cfg.health as f64);
            s.push(u.x as f64 / (self.cfg.width - 1) as f64);
            s.push(u.y as f64 / (self.cfg.height.max(2) - 1) as f64);
        }
        s.push(self.t as f64 / self.cfg.episode_limit as f64);
        s
    }

    fn observe(&self, last: Option<&[usize]>, reward: f64, done: bool, timeout: bool, won: bool) -> StepResult {
        let n = self.cfg.n_units;
        StepResult {
            obs: (0..n)
                .map(|i| compose_obs(&self.local(i), last.map(|a| a[i]), i, self.spec.n_actions, n))
                .collect(),
            state: self.global_state(),
            reward,
            done,
            timeout,
            won,
            avail: (0..n).map(|i| self.mask(i)).collect(),
        }
    }
}

impl Env for Skirmish {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> StepResult {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.allies = self.spawn_column(1, &mut rng);
        self.enemies = self.spawn_column(self.cfg.width as i64 - 2, &mut rng);
        self.t = 0;
        self.finished = false;
        self.observe(None, 0.0, false, false, false)
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        if self.finished {
            return contract_err("step called on a finished skirmish episode");
        }
        let masks: Vec<Vec<bool>> = (0..self.cfg.n_units).map(|i| self.mask(i)).collect();
        check_joint_action(joint_action, &masks)?;

        let dmg = self.cfg.damage;
        let mut to_enemies = vec![0u32; self.enemies.len()];
        let mut to_allies = vec![0u32; self.allies.len()];

        for &a in joint_action {
            if a >= ATTACK_OFFSET {
                to_enemies[a - ATTACK_OFFSET] += dmg;
            }
        }
        let mut enemy_moves = vec![(0i64, 0i64); self.enemies.len()];
        for (j, e) in self.enemies.iter().enumerate() {
            if !e.alive() {
                continue;
            }
            if let Some(target) = Self::nearest(e, &self.allies) {
                let t = self.allies[target];
                if e.dist(&t) <= self.cfg.shoot_range {
                    to_allies[target] += dmg;
                } else {
                    let (dx, dy) = (t.x - e.x, t.y - e.y);
                    enemy_moves[j] = if dx.abs() >= dy.abs() {
                        (dx.signum(), 0)
                    } else {
                        (0, dy.signum())
                    };
                }
            }
        }

        for (u, &a) in self.allies.iter_mut().zip(joint_action) {
            if (MOVE_OFFSET..ATTACK_OFFSET).contains(&a) {
                let (dx, dy) = MOVES[a - MOVE_OFFSET];
                u.x += dx;
                u.y += dy;
            }
        }
        for (e, (dx, dy)) in self.enemies.iter_mut().zip(enemy_moves) {
            e.x += dx;
            e.y += dy;
        }

        let mut raw = 0.0;
        for (e, d) in self.enemies.iter_mut().zip(to_enemies) {
            if !e.alive() || d == 0 {
                continue;
            }
            let dealt = d.min(e.hp);
            e.hp -= dealt;
            raw += dealt as f64;
            if e.hp == 0 {
                raw += self.cfg.kill_bonus;
            }
        }
        for (a, d) in self.allies.iter_mut().zip(to_allies) {
            a.hp = a.hp.saturating_sub(d);
        }
        self.t += 1;
        let won = self.enemies.iter().all(|e| !e.alive());
        if won {
            raw += self.cfg.win_bonus;
        }
        let lost = self.allies.iter().all(|a| !a.alive());
        let timeout = !won && !lost && self.t >= self.cfg.episode_limit;
        let done = won || lost || timeout;
        self.finished = done;
        Ok(self.observe(Some(joint_action), raw * self.scale, done, timeout, won))
    }

    fn avail_actions(&self, agent: usize) -> Result<Vec<bool>> {
        check_agent(agent, self.cfg.n_units)?;
        if self.allies.is_empty() {
            return contract_err("avail_actions called before reset");
        }
        Ok(self.mask(agent))
    }
}
