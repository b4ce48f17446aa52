use serde::{Deserialize, Serialize};

use crate::agent::{greedy, ActionNet};
use crate::envs::EnvConfig;
use crate::error::{contract_err, Result};
use crate::runtime::{checkpoint_config, Learner};
use crate::tensor::Checkpoint;

/// Counters at the time of a report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub env_steps: u64,
    pub episodes: u64,
    pub train_steps: u64,
}

/// Result of a greedy evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub step: u64,
    pub episodes: usize,
    pub win_rate: f64,
    pub mean_return: f64,
    pub mean_length: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub throughput: Throughput,
}

/// Runs `episodes` greedy episodes (ε = 0, no intrinsic reward) with the
/// given action network. Episode `k` resets with seed `seed + k`.
///
/// Only `step`, `episodes`, `win_rate`, `mean_return` and `mean_length` are
/// filled in; the caller supplies schedule values and counters.
pub fn evaluate(agent: &ActionNet, env_cfg: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalReport> {
    let mut env = env_cfg.build()?;
    let spec = env.spec().clone();
    if agent.obs_dim() != spec.obs_dim || agent.n_actions() != spec.n_actions {
        return contract_err("action network does not fit the evaluation environment");
    }
    let (n, hd, na) = (spec.n_agents, agent.hidden(), spec.n_actions);
    let (mut wins, mut total_return, mut total_len) = (0usize, 0.0, 0usize);
    for k in 0..episodes {
        let mut r = env.reset(seed.wrapping_add(k as u64));
        let mut h = vec![0.0; n * hd];
        let mut ret = 0.0;
        let mut len = 0;
        loop {
            let x: Vec<f64> = r.obs.concat();
            let (q, h_new) = agent.step(&x, &h, n);
            h = h_new;
            let actions: Vec<usize> = (0..n)
                .map(|i| greedy(&q[i * na..(i + 1) * na], &r.avail[i]).unwrap_or(0))
                .collect();
            r = env.step(&actions)?;
            ret += r.reward;
            len += 1;
            if r.done {
                break;
            }
        }
        wins += usize::from(r.won);
        total_return += ret;
        total_len += len;
    }
    let d = episodes.max(1) as f64;
    Ok(EvalReport {
        episodes,
        win_rate: wins as f64 / d,
        mean_return: total_return / d,
        mean_length: total_len as f64 / d,
        ..EvalReport::default()
    })
}

/// Greedy evaluation of a saved run. `env` replaces the environment the run
/// was trained on; its dimensions must fit the saved networks.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, env: Option<&EnvConfig>, episodes: usize, seed: u64) -> Result<EvalReport> {
    let cfg = checkpoint_config(ckpt)?;
    let mut learner = Learner::new(&cfg, 0)?;
    learner.restore(ckpt)?;
    let mut report = evaluate(&learner.nets.agent, env.unwrap_or(&cfg.env), episodes, seed)?;
    report.step = learner.train_steps();
    report.beta = cfg.schedule.beta_at(learner.train_steps());
    report.epsilon = cfg.schedule.epsilon().at(learner.env_steps());
    report.throughput = Throughput {
        env_steps: learner.env_steps(),
        episodes: learner.episodes(),
        train_steps: learner.train_steps(),
    };
    Ok(report)
}
