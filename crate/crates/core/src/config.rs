//! Run configuration: TOML sections, `--set` overrides and validation.

use serde::{Deserialize, Serialize};

use crate::agent::{EpsilonSchedule, RNN_HIDDEN};
use crate::envs::{EnvConfig, EnvName};
use crate::error::{config_err, Error, Result};
use crate::mixer::{LossWeights, WeightConstraint, MIX_EMBED};
use crate::replay::{ReplayConfig, SamplingMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Width of the recurrent layer and the dense layer before it.
    pub rnn_hidden: usize,
    /// Width of the mixing embedding produced by the hypernetworks.
    pub mixing_embed: usize,
    pub weight_constraint: WeightConstraint,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            rnn_hidden: RNN_HIDDEN,
            mixing_embed: MIX_EMBED,
            weight_constraint: WeightConstraint::Softmax,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub lr: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub gamma_ext: f64,
    pub gamma_int: f64,
    pub beta_start: f64,
    pub beta_dec: f64,
    /// Training steps between β decrements.
    pub beta_every: u64,
    /// When false, β is held at 0.
    pub intrinsic: bool,
    pub epsilon_start: f64,
    pub epsilon_finish: f64,
    /// Environment steps over which ε anneals.
    pub epsilon_anneal_steps: u64,
    /// Training steps between target-network copies.
    pub target_update_interval: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            grad_clip: 10.0,
            gamma_ext: 0.99,
            gamma_int: 0.95,
            beta_start: 0.5,
            beta_dec: 1e-4,
            beta_every: 1000,
            intrinsic: true,
            epsilon_start: 1.0,
            epsilon_finish: 0.05,
            epsilon_anneal_steps: 50_000,
            target_update_interval: 200,
        }
    }
}

impl ScheduleConfig {
    /// `max(β₀ − ⌊k / every⌋·β_dec, 0)`, or 0 without intrinsic reward.
    pub fn beta_at(&self, train_steps: u64) -> f64 {
        if !self.intrinsic {
            return 0.0;
        }
        let decrements = (train_steps / self.beta_every.max(1)) as f64;
        (self.beta_start - decrements * self.beta_dec).max(0.0)
    }

    pub fn epsilon(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon_start,
            finish: self.epsilon_finish,
            anneal_steps: self.epsilon_anneal_steps,
        }
    }

    pub fn loss_weights(&self, train_steps: u64) -> LossWeights {
        LossWeights {
            gamma_ext: self.gamma_ext,
            gamma_int: self.gamma_int,
            beta: self.beta_at(train_steps),
        }
    }

    pub fn clip(&self) -> Option<f64> {
        (self.grad_clip > 0.0).then_some(self.grad_clip)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeConfig {
    pub workers: usize,
    /// Actors per worker.
    pub actors: usize,
    /// Episodes the sample queue holds before producers block.
    pub queue_bound: usize,
    /// Training steps between parameter snapshots.
    pub publish_interval: u64,
    /// Serving calls between normalizer merges.
    pub normalizer_interval: u64,
    /// False runs the single-threaded 1×1 driver.
    pub distributed: bool,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            workers: 3,
            actors: 4,
            queue_bound: 64,
            publish_interval: 100,
            normalizer_interval: 50,
            distributed: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetConfig {
    pub train_steps: u64,
    /// Hard cap on environment steps; 0 means no cap.
    pub max_env_steps: u64,
    /// Environment steps between evaluations.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Training steps between metric lines.
    pub log_interval: u64,
    /// Stop once an evaluation reaches this win rate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_win_rate: Option<f64>,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            train_steps: 1_000_000,
            max_env_steps: 0,
            eval_interval: 5000,
            eval_episodes: 32,
            log_interval: 100,
            stop_win_rate: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Run directory, relative to the output root.
    pub dir: String,
    /// Write the replay slot table at the end of the run.
    pub replay_dump: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "run".into(),
            replay_dump: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub env: EnvConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub replay: ReplayConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub runtime: RuntimeConfig,
    #[serde(default)]
    pub budget: BudgetConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_env(EnvName::CooperativeMatrix)
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

fn unit(name: &str, v: f64) -> Result<()> {
    check((0.0..=1.0).contains(&v), || format!("{name} = {v} is outside [0, 1]"))
}

impl RunConfig {
    pub fn for_env(name: EnvName) -> Self {
        Self {
            seeds: default_seeds(),
            env: EnvConfig::named(name),
            model: ModelConfig::default(),
            replay: ReplayConfig::default(),
            schedule: ScheduleConfig::default(),
            runtime: RuntimeConfig::default(),
            budget: BudgetConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// Parses TOML text, applies `section.key=value` overrides, validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("{}", e.message())))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// Applies ablation switches.
    pub fn apply_flags(&mut self, no_intrinsic: bool, uniform_replay: bool, no_distributed: bool) {
        if no_intrinsic {
            self.schedule.intrinsic = false;
        }
        if uniform_replay {
            self.replay.mode = SamplingMode::Uniform;
        }
        if no_distributed {
            self.runtime.distributed = false;
        }
    }

    pub fn validate(&self) -> Result<()> {
        check(!self.seeds.is_empty(), || "seeds must list at least one seed".into())?;
        self.env.validate()?;
        check(self.model.rnn_hidden > 0, || "model.rnn_hidden must be positive".into())?;
        check(self.model.mixing_embed > 0, || "model.mixing_embed must be positive".into())?;
        self.replay.validate()?;
        let s = &self.schedule;
        check(s.lr > 0.0 && s.lr.is_finite(), || format!("schedule.lr = {} must be positive", s.lr))?;
        check(s.grad_clip >= 0.0 && s.grad_clip.is_finite(), || {
            format!("schedule.grad_clip = {} must be ≥ 0", s.grad_clip)
        })?;
        unit("schedule.gamma_ext", s.gamma_ext)?;
        unit("schedule.gamma_int", s.gamma_int)?;
        unit("schedule.beta_start", s.beta_start)?;
        check(s.beta_dec >= 0.0 && s.beta_dec.is_finite(), || {
            format!("schedule.beta_dec = {} must be ≥ 0", s.beta_dec)
        })?;
        check(s.beta_every > 0, || "schedule.beta_every must be positive".into())?;
        unit("schedule.epsilon_start", s.epsilon_start)?;
        unit("schedule.epsilon_finish", s.epsilon_finish)?;
        check(s.epsilon_finish <= s.epsilon_start, || {
            "schedule.epsilon_finish must not exceed schedule.epsilon_start".into()
        })?;
        check(s.target_update_interval > 0, || "schedule.target_update_interval must be positive".into())?;
        let r = &self.runtime;
        check(r.workers > 0, || "runtime.workers must be positive".into())?;
        check(r.actors > 0, || "runtime.actors must be positive".into())?;
        check(r.queue_bound > 0, || "runtime.queue_bound must be positive".into())?;
        check(r.publish_interval > 0, || "runtime.publish_interval must be positive".into())?;
        check(r.normalizer_interval > 0, || "runtime.normalizer_interval must be positive".into())?;
        let b = &self.budget;
        check(b.eval_interval > 0, || "budget.eval_interval must be positive".into())?;
        check(b.eval_episodes > 0, || "budget.eval_episodes must be positive".into())?;
        check(b.log_interval > 0, || "budget.log_interval must be positive".into())?;
        if let Some(w) = b.stop_win_rate {
            unit("budget.stop_win_rate", w)?;
        }
        check(!self.output.dir.is_empty(), || "output.dir must not be empty".into())?;
        Ok(())
    }
}

/// Sets `path = value` inside a TOML table, creating intermediate tables.
/// The value is read as a TOML literal, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let Some((path, raw)) = assignment.split_once('=') else {
        return config_err(format!("override `{assignment}` is not of the form key=value"));
    };
    let path: Vec<&str> = path.trim().split('.').map(str::trim).collect();
    if path.iter().any(|p| p.is_empty()) {
        return config_err(format!("override `{assignment}` has an empty key segment"));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return config_err(format!("override `{assignment}`: `{p}` is not a section")),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

const DESCRIPTIONS: &[(&str, &str)] = &[
    ("seeds", "one run per seed"),
    ("name", "cooperative_matrix | sparse_corridor | skirmish"),
    ("n_agents", "number of agents"),
    ("n_actions", "actions per agent"),
    ("payoff", "joint payoff table, agent 0's action varies slowest"),
    ("reward_scale", "multiplies every payoff"),
    ("length", "corridor cells from start to goal"),
    ("width", "arena width in cells"),
    ("height", "grid height in cells"),
    ("episode_limit", "steps before an episode times out"),
    ("goal_reward", "team reward when any agent reaches the goal"),
    ("n_units", "units per side"),
    ("health", "hit points per unit"),
    ("damage", "hit points removed per shot"),
    ("shoot_range", "maximum firing distance"),
    ("sight_range", "observation radius"),
    ("kill_bonus", "raw reward per enemy eliminated"),
    ("win_bonus", "raw reward for eliminating every enemy"),
    ("max_return", "return of a clean win after scaling"),
    ("rnn_hidden", "GRU hidden width of the shared action network"),
    ("mixing_embed", "hypernetwork embedding width"),
    ("weight_constraint", "softmax | abs"),
    ("capacity", "episodes kept in replay"),
    ("batch_size", "episodes per training step"),
    ("alpha", "weight of priority against the importance factor"),
    ("staleness_coef", "importance-factor age coefficient"),
    ("p_min", "priority floor"),
    ("mode", "explorative | uniform"),
    ("lr", "Adam step size"),
    ("grad_clip", "global gradient-norm clip, 0 disables"),
    ("gamma_ext", "discount for the extrinsic head"),
    ("gamma_int", "discount for the intrinsic head"),
    ("beta_start", "initial intrinsic/extrinsic trade-off"),
    ("beta_dec", "β decrement"),
    ("beta_every", "training steps between β decrements"),
    ("intrinsic", "false holds β at 0"),
    ("epsilon_start", "initial exploration rate"),
    ("epsilon_finish", "final exploration rate"),
    ("epsilon_anneal_steps", "environment steps of linear ε decay"),
    ("target_update_interval", "training steps between target copies"),
    ("workers", "serving workers"),
    ("actors", "actors per worker"),
    ("queue_bound", "completed episodes buffered before actors block"),
    ("publish_interval", "training steps between parameter snapshots"),
    ("normalizer_interval", "serving calls between normalizer merges"),
    ("distributed", "false runs the single-threaded driver"),
    ("train_steps", "training-step budget"),
    ("max_env_steps", "environment-step cap, 0 for none"),
    ("eval_interval", "environment steps between evaluations"),
    ("eval_episodes", "greedy episodes per evaluation"),
    ("log_interval", "training steps between metric lines"),
    ("dir", "run directory under the output root"),
    ("replay_dump", "write the replay slot table at the end"),
];

/// Default configuration as TOML with a comment on every key.
pub fn annotated_defaults() -> String {
    let mut out = String::new();
    for line in RunConfig::default().to_toml().lines() {
        let key = line.split('=').next().unwrap_or("").trim();
        match DESCRIPTIONS.iter().find(|(k, _)| *k == key) {
            Some((_, d)) if line.contains('=') => out.push_str(&format!("{line}  # {d}\n")),
            _ => {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    out
}
