//! Schedules, greedy evaluation and the full training run.

mod eval;
mod run;

pub use eval::{evaluate, evaluate_checkpoint, EvalReport, Throughput};
pub use run::{train_run, RunArtifacts, RunSummary, TrainOptions};

use crate::config::{BudgetConfig, ScheduleConfig};

/// β and ε as functions of the run counters, plus evaluation cadence.
#[derive(Clone, Debug)]
pub struct Schedule {
    cfg: ScheduleConfig,
    eval_interval: u64,
    next_eval: u64,
    evals: u64,
}

impl Schedule {
    pub fn new(cfg: &ScheduleConfig, budget: &BudgetConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            eval_interval: budget.eval_interval.max(1),
            next_eval: budget.eval_interval.max(1),
            evals: 0,
        }
    }

    pub fn beta(&self, train_steps: u64) -> f64 {
        self.cfg.beta_at(train_steps)
    }

    pub fn epsilon(&self, env_steps: u64) -> f64 {
        self.cfg.epsilon().at(env_steps)
    }

    /// Target copies made after `train_steps` steps.
    pub fn target_syncs(&self, train_steps: u64) -> u64 {
        train_steps / self.cfg.target_update_interval.max(1)
    }

    /// True once per crossed evaluation boundary; several boundaries crossed
    /// at once yield a single evaluation.
    pub fn eval_due(&mut self, env_steps: u64) -> bool {
        if env_steps < self.next_eval {
            return false;
        }
        self.next_eval = (env_steps / self.eval_interval + 1) * self.eval_interval;
        self.evals += 1;
        true
    }

    pub fn evals(&self) -> u64 {
        self.evals
    }
}
