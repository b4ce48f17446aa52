use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use log::info;
use serde_json::json;

use super::eval::{evaluate, EvalReport, Throughput};
use super::Schedule;
use crate::config::RunConfig;
use crate::error::Result;
use crate::runtime::{run_distributed, run_sync, Control, Learner, RolloutControl, RunObserver, TrainStats};

/// Knobs that are not part of the run configuration.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Setting this ends the run gracefully (drain, final checkpoint).
    pub interrupt: Arc<AtomicBool>,
}

/// File layout of a run directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub metrics: PathBuf,
    pub timing: PathBuf,
    pub checkpoints: PathBuf,
    pub final_checkpoint: PathBuf,
    pub replay_csv: PathBuf,
}

impl RunArtifacts {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            config: dir.join("config.toml"),
            metrics: dir.join("metrics.jsonl"),
            timing: dir.join("timing.jsonl"),
            checkpoints: dir.join("checkpoints"),
            final_checkpoint: dir.join("final.ckpt"),
            replay_csv: dir.join("replay.csv"),
        }
    }
}

/// What a finished run produced.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub reports: Vec<EvalReport>,
    pub train_steps: u64,
    pub env_steps: u64,
    pub episodes: u64,
    pub target_syncs: u64,
    /// Episodes collected up to and including the first successful one.
    pub first_win_episode: Option<u64>,
    pub interrupted: bool,
    pub artifacts: RunArtifacts,
}

struct Recorder<'a> {
    schedule: Schedule,
    art: &'a RunArtifacts,
    metrics: BufWriter<File>,
    timing: BufWriter<File>,
    reports: Vec<EvalReport>,
    eval_seed: u64,
    start: Instant,
    interrupt: Arc<AtomicBool>,
    pause: Arc<AtomicBool>,
    interrupted: bool,
}

impl Recorder<'_> {
    fn throughput(learner: &Learner) -> Throughput {
        Throughput {
            env_steps: learner.env_steps(),
            episodes: learner.episodes(),
            train_steps: learner.train_steps(),
        }
    }

    fn write_timing(&mut self, kind: &str, learner: &Learner) -> Result<()> {
        let secs = self.start.elapsed().as_secs_f64();
        let line = json!({
            "kind": kind,
            "train_steps": learner.train_steps(),
            "env_steps": learner.env_steps(),
            "seconds": secs,
            "env_steps_per_sec": learner.env_steps() as f64 / secs.max(1e-9),
            "train_steps_per_sec": learner.train_steps() as f64 / secs.max(1e-9),
        });
        writeln!(self.timing, "{line}")?;
        Ok(())
    }

    fn run_eval(&mut self, learner: &mut Learner) -> Result<Control> {
        self.pause.store(true, Ordering::Release);
        let cfg = learner.config();
        let result = evaluate(&learner.nets.agent, &cfg.env, cfg.budget.eval_episodes, self.eval_seed);
        self.pause.store(false, Ordering::Release);
        let mut report = result?;
        report.step = learner.train_steps();
        report.beta = self.schedule.beta(learner.train_steps());
        report.epsilon = self.schedule.epsilon(learner.env_steps());
        report.throughput = Self::throughput(learner);
        let mut line = serde_json::to_value(&report).expect("report serialises");
        line["kind"] = json!("eval");
        writeln!(self.metrics, "{line}")?;
        self.metrics.flush()?;
        fs::create_dir_all(&self.art.checkpoints)?;
        let path = self.art.checkpoints.join(format!("env{:010}.ckpt", learner.env_steps()));
        learner.checkpoint().save(&path)?;
        self.write_timing("eval", learner)?;
        info!(
            "eval at {} env steps / {} train steps: win rate {:.3}, mean return {:.3}",
            learner.env_steps(),
            learner.train_steps(),
            report.win_rate,
            report.mean_return
        );
        let target = learner.config().budget.stop_win_rate;
        self.reports.push(report);
        match target {
            Some(t) if self.reports.last().is_some_and(|r| r.win_rate >= t) => Ok(Control::Stop),
            _ => Ok(Control::Continue),
        }
    }

    fn interrupted(&mut self) -> bool {
        if self.interrupt.load(Ordering::Acquire) {
            self.interrupted = true;
        }
        self.interrupted
    }
}

impl RunObserver for Recorder<'_> {
    fn on_train(&mut self, learner: &mut Learner, stats: &TrainStats) -> Result<Control> {
        if self.interrupted() {
            return Ok(Control::Stop);
        }
        if stats.train_step % learner.config().budget.log_interval == 0 {
            let line = json!({
                "kind": "train",
                "step": stats.train_step,
                "env_steps": learner.env_steps(),
                "episodes": learner.episodes(),
                "loss_total": stats.loss_total,
                "loss_mix": stats.loss_mix,
                "loss_inc": stats.loss_ird,
                "mean_abs_td_ext": stats.mean_abs_td,
                "mean_intrinsic": stats.mean_intrinsic,
                "beta": stats.beta,
                "epsilon": self.schedule.epsilon(learner.env_steps()),
                "grad_norm": stats.grad_norm,
                "replay_len": learner.replay.len(),
                "replay_total_priority": learner.replay.total_priority(),
                "target_syncs": learner.target_syncs(),
            });
            writeln!(self.metrics, "{line}")?;
        }
        Ok(Control::Continue)
    }

    fn on_episode(&mut self, learner: &mut Learner) -> Result<Control> {
        if self.interrupted() {
            return Ok(Control::Stop);
        }
        if self.schedule.eval_due(learner.env_steps()) {
            return self.run_eval(learner);
        }
        Ok(Control::Continue)
    }
}

fn eval_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ 0xE7A1
}

/// Trains one seed to budget, writing the resolved config, a JSON-lines
/// metrics stream, timing lines, checkpoints at every evaluation and at the
/// end, and the replay slot table into `dir`.
pub fn train_run(cfg: &RunConfig, seed: u64, dir: &Path, opts: &TrainOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let mut learner = Learner::new(cfg, seed)?;
    let art = RunArtifacts::in_dir(dir);
    fs::create_dir_all(dir)?;
    fs::write(&art.config, cfg.to_toml())?;
    let control = RolloutControl::default();
    let mut rec = Recorder {
        schedule: Schedule::new(&cfg.schedule, &cfg.budget),
        art: &art,
        metrics: BufWriter::new(File::create(&art.metrics)?),
        timing: BufWriter::new(File::create(&art.timing)?),
        reports: Vec::new(),
        eval_seed: eval_seed(seed),
        start: Instant::now(),
        interrupt: opts.interrupt.clone(),
        pause: control.pause.clone(),
        interrupted: false,
    };
    if cfg.runtime.distributed {
        run_distributed(&mut learner, seed, &mut rec, control, true)?;
    } else {
        run_sync(&mut learner, seed, &mut rec)?;
    }
    learner.checkpoint().save(&art.final_checkpoint)?;
    if cfg.output.replay_dump {
        let mut out = BufWriter::new(File::create(&art.replay_csv)?);
        learner.replay.write_csv(&mut out, learner.train_steps())?;
        out.flush()?;
    }
    rec.write_timing("final", &learner)?;
    rec.metrics.flush()?;
    rec.timing.flush()?;
    Ok(RunSummary {
        reports: std::mem::take(&mut rec.reports),
        train_steps: learner.train_steps(),
        env_steps: learner.env_steps(),
        episodes: learner.episodes(),
        target_syncs: learner.target_syncs(),
        first_win_episode: learner.first_win(),
        interrupted: rec.interrupted,
        artifacts: art.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvName;
    use crate::tensor::Checkpoint;

    fn small(name: EnvName) -> RunConfig {
        let mut cfg = RunConfig::for_env(name);
        cfg.model.rnn_hidden = 16;
        cfg.model.mixing_embed = 8;
        cfg.replay.batch_size = 4;
        cfg.runtime.distributed = false;
        cfg.budget.log_interval = 5;
        cfg
    }

    #[test]
    fn short_budget_gives_no_reports_and_one_checkpoint() {
        let mut cfg = small(EnvName::SparseCorridor);
        cfg.budget.train_steps = 10;
        let dir = tempfile::tempdir().unwrap();
        let s = train_run(&cfg, 1, dir.path(), &TrainOptions::default()).unwrap();
        assert!(s.reports.is_empty());
        assert_eq!(s.train_steps, 10);
        assert!(s.artifacts.final_checkpoint.exists());
        assert!(!s.artifacts.checkpoints.exists());
        let resolved = fs::read_to_string(&s.artifacts.config).unwrap();
        assert_eq!(RunConfig::parse(&resolved, &[]).unwrap(), cfg);
        let csv = fs::read_to_string(&s.artifacts.replay_csv).unwrap();
        assert_eq!(csv.lines().count(), 1 + s.episodes as usize);
    }

    #[test]
    fn evaluations_follow_env_steps() {
        let mut cfg = small(EnvName::CooperativeMatrix);
        cfg.budget.train_steps = 60;
        cfg.budget.eval_interval = 20;
        cfg.budget.eval_episodes = 3;
        let dir = tempfile::tempdir().unwrap();
        let s = train_run(&cfg, 2, dir.path(), &TrainOptions::default()).unwrap();
        // One matrix episode is one environment step and one training step
        // follows every episode once four episodes exist.
        assert_eq!(s.env_steps, 63);
        assert_eq!(s.reports.len(), 3);
        for (k, r) in s.reports.iter().enumerate() {
            assert_eq!(r.throughput.env_steps, 20 * (k as u64 + 1));
            assert_eq!(r.episodes, 3);
        }
        assert_eq!(fs::read_dir(&s.artifacts.checkpoints).unwrap().count(), 3);
        let metrics = fs::read_to_string(&s.artifacts.metrics).unwrap();
        let kinds: Vec<String> = metrics
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(kinds.iter().filter(|k| *k == "eval").count(), 3);
        assert_eq!(kinds.iter().filter(|k| *k == "train").count(), 12);
    }

    #[test]
    fn interrupt_still_writes_final_checkpoint() {
        let mut cfg = small(EnvName::SparseCorridor);
        cfg.budget.train_steps = 1_000_000;
        let opts = TrainOptions::default();
        opts.interrupt.store(true, Ordering::Release);
        let dir = tempfile::tempdir().unwrap();
        let s = train_run(&cfg, 3, dir.path(), &opts).unwrap();
        assert!(s.interrupted);
        assert_eq!(s.episodes, 1);
        let ck = Checkpoint::load(&s.artifacts.final_checkpoint).unwrap();
        assert_eq!(ck.step, s.train_steps);
    }

    #[test]
    fn invalid_config_writes_nothing() {
        let mut cfg = small(EnvName::SparseCorridor);
        cfg.runtime.workers = 0;
        let dir = tempfile::tempdir().unwrap();
        let run_dir = dir.path().join("run");
        assert!(train_run(&cfg, 1, &run_dir, &TrainOptions::default()).is_err());
        assert!(!run_dir.exists());
    }
}
