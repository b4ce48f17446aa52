use std::time::{Duration, Instant};

use serde::Serialize;

use super::actor::RolloutControl;
use super::driver::{run_distributed, Control, RunObserver};
use super::learner::{Learner, TrainStats};
use crate::config::RunConfig;
use crate::error::Result;

/// Throughput over one measurement window.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Rates {
    pub episodes_per_sec: f64,
    pub steps_per_sec: f64,
    pub train_steps_per_sec: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub workers: usize,
    pub actors: usize,
    /// Rollout only, parameters frozen.
    pub pure_rollout: Rates,
    /// Rollout while the learner trains.
    pub with_training: Rates,
    /// Pure-rollout episodes/sec relative to the first row of a grid.
    pub speedup: f64,
}

struct Deadline {
    start: Instant,
    duration: Duration,
}

impl Deadline {
    fn check(&self) -> Control {
        if self.start.elapsed() >= self.duration {
            Control::Stop
        } else {
            Control::Continue
        }
    }
}

impl RunObserver for Deadline {
    fn on_train(&mut self, _: &mut Learner, _: &TrainStats) -> Result<Control> {
        Ok(self.check())
    }
    fn on_episode(&mut self, _: &mut Learner) -> Result<Control> {
        Ok(self.check())
    }
}

fn measure(cfg: &RunConfig, seed: u64, duration: Duration, train: bool) -> Result<Rates> {
    let mut learner = Learner::new(cfg, seed)?;
    let mut deadline = Deadline {
        start: Instant::now(),
        duration,
    };
    run_distributed(&mut learner, seed, &mut deadline, RolloutControl::default(), train)?;
    let secs = deadline.start.elapsed().as_secs_f64().max(1e-9);
    Ok(Rates {
        episodes_per_sec: learner.episodes() as f64 / secs,
        steps_per_sec: learner.env_steps() as f64 / secs,
        train_steps_per_sec: learner.train_steps() as f64 / secs,
        seconds: secs,
    })
}

/// Measures rollout throughput for one `workers × actors` layout, first with
/// frozen parameters and then with training enabled.
pub fn throughput_bench(cfg: &RunConfig, workers: usize, actors: usize, duration: Duration, seed: u64) -> Result<BenchRow> {
    let mut cfg = cfg.clone();
    cfg.runtime.workers = workers;
    cfg.runtime.actors = actors;
    cfg.runtime.distributed = true;
    cfg.budget.train_steps = u64::MAX;
    cfg.budget.max_env_steps = 0;
    cfg.validate()?;
    Ok(BenchRow {
        workers,
        actors,
        pure_rollout: measure(&cfg, seed, duration, false)?,
        with_training: measure(&cfg, seed, duration, true)?,
        speedup: 1.0,
    })
}

/// Runs [`throughput_bench`] for every `(workers, actors)` pair; speedups are
/// relative to the first pair.
pub fn bench_grid(cfg: &RunConfig, grid: &[(usize, usize)], duration: Duration, seed: u64) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(grid.len());
    for &(w, a) in grid {
        rows.push(throughput_bench(cfg, w, a, duration, seed)?);
    }
    if let Some(base) = rows.first().map(|r| r.pure_rollout.episodes_per_sec) {
        for r in &mut rows {
            r.speedup = if base > 0.0 { r.pure_rollout.episodes_per_sec / base } else { 0.0 };
        }
    }
    Ok(rows)
}
