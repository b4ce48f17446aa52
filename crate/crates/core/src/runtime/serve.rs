use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::messages::{ActResponse, ObsRequest};
use super::snapshot::{ParamSnapshot, SnapshotMailbox};
use crate::agent::{intrinsic_reward, select_action, EpsilonSchedule, RunningGaussian};
use crate::error::{contract_err, Result};

/// Decision making for a group of actors from one parameter snapshot.
///
/// Keeps each actor's recurrent state, explores ε-greedily, computes
/// intrinsic rewards and accumulates normalizer statistics locally.
#[derive(Debug)]
pub struct Server {
    snapshot: Arc<ParamSnapshot>,
    hidden: Vec<Vec<f64>>,
    obs_delta: RunningGaussian,
    rw_delta: RunningGaussian,
    rng: ChaCha8Rng,
    epsilon: EpsilonSchedule,
    /// Multiplies locally served steps to estimate global environment steps.
    step_scale: u64,
    served_steps: u64,
    calls: u64,
    stats_interval: u64,
    fixed_epsilon: Option<f64>,
}

impl Server {
    pub fn new(
        snapshot: Arc<ParamSnapshot>,
        actors: usize,
        epsilon: EpsilonSchedule,
        step_scale: u64,
        stats_interval: u64,
        seed: u64,
    ) -> Self {
        let obs_dim = snapshot.agent.obs_dim();
        Self {
            hidden: vec![Vec::new(); actors],
            obs_delta: RunningGaussian::new(obs_dim),
            rw_delta: RunningGaussian::new(1),
            rng: ChaCha8Rng::seed_from_u64(seed),
            epsilon,
            step_scale: step_scale.max(1),
            served_steps: 0,
            calls: 0,
            stats_interval: stats_interval.max(1),
            fixed_epsilon: None,
            snapshot,
        }
    }

    /// Overrides the exploration schedule with a constant.
    pub fn with_fixed_epsilon(mut self, eps: f64) -> Self {
        self.fixed_epsilon = Some(eps);
        self
    }

    pub fn version(&self) -> u64 {
        self.snapshot.version
    }

    pub fn snapshot(&self) -> &Arc<ParamSnapshot> {
        &self.snapshot
    }

    pub fn set_snapshot(&mut self, snapshot: Arc<ParamSnapshot>) {
        if snapshot.version >= self.snapshot.version {
            self.snapshot = snapshot;
        }
    }

    /// Picks up a newer snapshot if one has been published.
    pub fn refresh(&mut self, mailbox: &SnapshotMailbox) {
        if mailbox.version() > self.snapshot.version {
            self.snapshot = mailbox.latest();
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.fixed_epsilon
            .unwrap_or_else(|| self.epsilon.at(self.served_steps * self.step_scale))
    }

    pub fn served_steps(&self) -> u64 {
        self.served_steps
    }

    /// Answers a group of pending requests.
    pub fn serve(&mut self, requests: &[ObsRequest]) -> Result<Vec<ActResponse>> {
        let snap = self.snapshot.clone();
        let (n_actions, hd) = (snap.agent.n_actions(), snap.agent.hidden());
        let eps = self.epsilon();
        let mut x = Vec::new();
        let mut h = Vec::new();
        let mut acting = Vec::new();
        let mut responses = Vec::with_capacity(requests.len());
        for (k, req) in requests.iter().enumerate() {
            if req.actor >= self.hidden.len() {
                return contract_err(format!("request from unknown actor {}", req.actor));
            }
            if req.obs.len() != req.avail.len() {
                return contract_err("observation and availability counts differ");
            }
            for o in &req.obs {
                // Rejected samples are logged by the normalizer and skipped.
                let _ = self.obs_delta.update(o);
            }
            let intrinsic = if req.step == 0 {
                vec![0.0; req.obs.len()]
            } else {
                req.obs
                    .iter()
                    .map(|o| {
                        let (raw, norm) = intrinsic_reward(&snap.ird, &snap.obs_norm, &snap.rw_norm, o);
                        let _ = self.rw_delta.update(&[raw]);
                        norm
                    })
                    .collect()
            };
            responses.push(ActResponse {
                actor: req.actor,
                step: req.step,
                actions: Vec::new(),
                intrinsic,
                version: snap.version,
            });
            if req.last {
                continue;
            }
            let state = &mut self.hidden[req.actor];
            if req.step == 0 || state.len() != req.obs.len() * hd {
                *state = vec![0.0; req.obs.len() * hd];
            }
            for o in &req.obs {
                x.extend_from_slice(o);
            }
            h.extend_from_slice(state);
            acting.push(k);
        }
        if !acting.is_empty() {
            let rows = h.len() / hd;
            let (q, h_new) = snap.agent.step(&x, &h, rows);
            let mut row = 0;
            for &k in &acting {
                let req = &requests[k];
                let n = req.obs.len();
                let mut actions = Vec::with_capacity(n);
                for i in 0..n {
                    let r = row + i;
                    actions.push(select_action(
                        &q[r * n_actions..(r + 1) * n_actions],
                        &req.avail[i],
                        eps,
                        &mut self.rng,
                    )?);
                }
                self.hidden[req.actor].copy_from_slice(&h_new[row * hd..(row + n) * hd]);
                responses[k].actions = actions;
                row += n;
            }
            self.served_steps += acting.len() as u64;
        }
        self.calls += requests.len() as u64;
        Ok(responses)
    }

    /// Local statistics, if a report is due; resets the local accumulators.
    pub fn take_stats_if_due(&mut self) -> Option<(RunningGaussian, RunningGaussian)> {
        if self.calls >= self.stats_interval {
            self.calls = 0;
            self.take_stats()
        } else {
            None
        }
    }

    /// Local statistics gathered so far, if any.
    pub fn take_stats(&mut self) -> Option<(RunningGaussian, RunningGaussian)> {
        if self.obs_delta.count() == 0 && self.rw_delta.count() == 0 {
            return None;
        }
        let dim = self.obs_delta.dim();
        let obs = std::mem::replace(&mut self.obs_delta, RunningGaussian::new(dim));
        let rw = std::mem::replace(&mut self.rw_delta, RunningGaussian::new(1));
        Some((obs, rw))
    }
}
