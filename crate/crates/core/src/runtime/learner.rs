use std::sync::Arc;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::snapshot::{ParamSnapshot, SnapshotMailbox};
use crate::agent::RunningGaussian;
use crate::config::RunConfig;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::mixer::{total_loss, NetShape, Networks};
use crate::replay::{EpisodeBatch, EpisodeRecord, ReplayBuffer};
use crate::tensor::{Adam, Checkpoint};

/// Consecutive non-finite steps tolerated before the run aborts.
pub const MAX_NONFINITE_STREAK: u32 = 3;

/// Summary of one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainStats {
    pub train_step: u64,
    pub loss_total: f64,
    pub loss_mix: f64,
    pub loss_ird: f64,
    pub mean_abs_td: f64,
    pub mean_intrinsic: f64,
    pub beta: f64,
    pub grad_norm: f64,
}

/// What a call to [`Learner::train_step`] did.
#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Trained(TrainStats),
    /// Not enough episodes in replay yet.
    Waiting,
    /// The loss or gradient was non-finite; parameters are unchanged.
    Skipped,
}

/// Owns the networks, optimizer, replay and normalizers.
pub struct Learner {
    cfg: RunConfig,
    spec: EnvSpec,
    pub nets: Networks,
    adam: Adam,
    pub replay: ReplayBuffer,
    pub obs_norm: RunningGaussian,
    pub rw_norm: RunningGaussian,
    train_steps: u64,
    env_steps: u64,
    episodes: u64,
    target_syncs: u64,
    first_win: Option<u64>,
    nonfinite_streak: u32,
    mailbox: Arc<SnapshotMailbox>,
}

impl Learner {
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.env.spec()?;
        let shape = NetShape {
            obs_dim: spec.obs_dim,
            n_actions: spec.n_actions,
            n_agents: spec.n_agents,
            state_dim: spec.state_dim,
            rnn_hidden: cfg.model.rnn_hidden,
            embed: cfg.model.mixing_embed,
            constraint: cfg.model.weight_constraint,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nets = Networks::new(&shape, &mut rng);
        let replay = ReplayBuffer::new(cfg.replay.clone(), seed ^ 0x5eed_5eed)?;
        let obs_norm = RunningGaussian::new(spec.obs_dim);
        let rw_norm = RunningGaussian::new(1);
        let mailbox = Arc::new(SnapshotMailbox::new(ParamSnapshot {
            version: 0,
            agent: nets.agent.clone(),
            ird: nets.ird.clone(),
            obs_norm: obs_norm.clone(),
            rw_norm: rw_norm.clone(),
        }));
        Ok(Self {
            adam: Adam::new(cfg.schedule.lr),
            cfg: cfg.clone(),
            spec,
            nets,
            replay,
            obs_norm,
            rw_norm,
            train_steps: 0,
            env_steps: 0,
            episodes: 0,
            target_syncs: 0,
            first_win: None,
            nonfinite_streak: 0,
            mailbox,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    /// 1-based index of the first stored episode that met the success predicate.
    pub fn first_win(&self) -> Option<u64> {
        self.first_win
    }

    /// Target copies made after initialisation.
    pub fn target_syncs(&self) -> u64 {
        self.target_syncs
    }

    pub fn mailbox(&self) -> &Arc<SnapshotMailbox> {
        &self.mailbox
    }

    pub fn version(&self) -> u64 {
        self.mailbox.version()
    }

    /// Stores a completed episode. Invalid episodes are dropped with a warning.
    pub fn ingest(&mut self, record: EpisodeRecord) {
        let (len, won) = (record.len() as u64, record.won);
        if self.replay.insert(record, self.train_steps).is_ok() {
            self.env_steps += len;
            self.episodes += 1;
            if won && self.first_win.is_none() {
                self.first_win = Some(self.episodes);
            }
        }
    }

    /// Folds worker-local normalizer statistics into the canonical copies.
    pub fn merge_stats(&mut self, obs: &RunningGaussian, rw: &RunningGaussian) {
        if obs.dim() == self.obs_norm.dim() {
            self.obs_norm.merge(obs);
        }
        if rw.dim() == 1 {
            self.rw_norm.merge(rw);
        }
    }

    pub fn snapshot(&self, version: u64) -> ParamSnapshot {
        ParamSnapshot {
            version,
            agent: self.nets.agent.clone(),
            ird: self.nets.ird.clone(),
            obs_norm: self.obs_norm.clone(),
            rw_norm: self.rw_norm.clone(),
        }
    }

    /// Publishes the current parameters under the next version number.
    pub fn publish(&mut self) {
        let v = self.mailbox.version() + 1;
        self.mailbox.publish(self.snapshot(v));
    }

    /// Samples a batch and takes one optimizer step on the total loss.
    pub fn train_step(&mut self) -> Result<StepOutcome> {
        let bs = self.cfg.replay.batch_size;
        let sample = match self.replay.sample(bs, self.train_steps) {
            Ok(s) => s,
            Err(Error::InsufficientSamples { .. }) => return Ok(StepOutcome::Waiting),
            Err(e) => return Err(e),
        };
        let batch = EpisodeBatch::from_records(&sample.records)?;
        let weights = self.cfg.schedule.loss_weights(self.train_steps);
        self.nets.zero_grad();
        let out = total_loss(
            &mut self.nets,
            &batch,
            &sample.is_weights,
            &self.obs_norm,
            &weights,
            true,
        )?;
        let grad_norm = self
            .nets
            .trainable()
            .iter()
            .map(|b| b.grad_norm().powi(2))
            .sum::<f64>()
            .sqrt();
        if !out.total.is_finite() || !grad_norm.is_finite() {
            self.nets.zero_grad();
            self.nonfinite_streak += 1;
            warn!(
                "non-finite loss or gradient at training step {} ({} in a row); step skipped",
                self.train_steps, self.nonfinite_streak
            );
            if self.nonfinite_streak >= MAX_NONFINITE_STREAK {
                return Err(Error::NonFinite(format!(
                    "{MAX_NONFINITE_STREAK} consecutive training steps"
                )));
            }
            return Ok(StepOutcome::Skipped);
        }
        self.nonfinite_streak = 0;
        if let Some(clip) = self.cfg.schedule.clip() {
            if grad_norm > clip {
                let scale = clip / grad_norm;
                for block in self.nets.trainable() {
                    for id in block.ids().collect::<Vec<_>>() {
                        block.grad_mut(id).data_mut().iter_mut().for_each(|g| *g *= scale);
                    }
                }
            }
        }
        for block in self.nets.trainable() {
            self.adam.step(block)?;
        }
        self.replay.update_after_train(&sample, &out.td_ext);
        self.train_steps += 1;
        if self.train_steps % self.cfg.schedule.target_update_interval == 0 {
            self.nets.sync_targets();
            self.target_syncs += 1;
        }
        if self.train_steps % self.cfg.runtime.publish_interval == 0 {
            self.publish();
        }
        Ok(StepOutcome::Trained(TrainStats {
            train_step: self.train_steps,
            loss_total: out.total,
            loss_mix: out.mix,
            loss_ird: out.ird,
            mean_abs_td: out.mean_abs_td,
            mean_intrinsic: out.mean_intrinsic,
            beta: weights.beta,
            grad_norm,
        }))
    }

    /// Parameters, normalizers and counters. Optimizer state and replay
    /// contents are not included.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.train_steps);
        c.metadata = serde_json::json!({
            "config": self.cfg.to_toml(),
            "train_steps": self.train_steps,
            "env_steps": self.env_steps,
            "episodes": self.episodes,
        })
        .to_string();
        self.nets.export_to(&mut c);
        self.obs_norm.export_to("normalizer/obs", &mut c);
        self.rw_norm.export_to("normalizer/rw", &mut c);
        c
    }

    /// Loads parameters and normalizers saved by [`Learner::checkpoint`].
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        self.nets.import_from(ckpt)?;
        self.obs_norm = RunningGaussian::import_from("normalizer/obs", ckpt)?;
        self.rw_norm = RunningGaussian::import_from("normalizer/rw", ckpt)?;
        self.train_steps = ckpt.step;
        if let Ok(meta) = serde_json::from_str::<serde_json::Value>(&ckpt.metadata) {
            self.env_steps = meta["env_steps"].as_u64().unwrap_or(0);
            self.episodes = meta["episodes"].as_u64().unwrap_or(0);
        }
        self.publish();
        Ok(())
    }
}

/// Run configuration embedded in a checkpoint's metadata.
pub fn checkpoint_config(ckpt: &Checkpoint) -> Result<RunConfig> {
    let meta: serde_json::Value =
        serde_json::from_str(&ckpt.metadata).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
    let text = meta["config"]
        .as_str()
        .ok_or_else(|| Error::Format("checkpoint metadata has no config".into()))?;
    RunConfig::parse(text, &[]).map_err(|e| Error::Format(format!("embedded config: {e}")))
}
