use std::io::Write;
use std::sync::Arc;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::EpisodeRecord;
use super::sumtree::SumTree;
use crate::error::{config_err, contract_err, Error, Result};

/// How episodes are drawn for training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Priority-proportional stratified sampling with importance weighting.
    #[default]
    Explorative,
    /// Uniform over occupied slots, all weights 1.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    /// Episodes kept before the oldest is overwritten.
    pub capacity: usize,
    pub batch_size: usize,
    /// Weight of priority against the importance factor.
    pub alpha: f64,
    /// Staleness coefficient of the importance factor (negative).
    pub staleness_coef: f64,
    pub p_min: f64,
    pub mode: SamplingMode,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 5000,
            batch_size: 32,
            alpha: 0.5,
            staleness_coef: -1e-4,
            p_min: 1e-3,
            mode: SamplingMode::Explorative,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return config_err("replay.capacity must be positive");
        }
        if self.batch_size == 0 || self.batch_size > self.capacity {
            return config_err(format!(
                "replay.batch_size must be in 1..={} (replay.capacity)",
                self.capacity
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return config_err(format!("replay.alpha = {} is outside [0, 1]", self.alpha));
        }
        if !self.staleness_coef.is_finite() {
            return config_err("replay.staleness_coef must be finite");
        }
        if !(self.p_min > 0.0 && self.p_min.is_finite()) {
            return config_err(format!("replay.p_min = {} must be positive", self.p_min));
        }
        Ok(())
    }
}

/// Mean absolute TD error over valid steps plus the floor `p_min`.
pub fn priority(td_errors: &[f64], p_min: f64) -> f64 {
    if td_errors.is_empty() {
        return p_min;
    }
    td_errors.iter().map(|d| d.abs()).sum::<f64>() / td_errors.len() as f64 + p_min
}

/// `max(R/l + c·age·√ln(max(visits, 1)), 0)`.
pub fn importance_factor(ret: f64, length: usize, age: u64, visits: u64, c: f64) -> Result<f64> {
    if length == 0 {
        return contract_err("importance factor of an empty episode");
    }
    let ln_n = (visits.max(1) as f64).ln();
    Ok((ret / length as f64 + c * age as f64 * ln_n.sqrt()).max(0.0))
}

/// Convex combination `α·priority + (1 − α)·factor`.
pub fn isweight(priority: f64, factor: f64, alpha: f64) -> f64 {
    alpha * priority + (1.0 - alpha) * factor
}

#[derive(Clone, Debug)]
struct Slot {
    record: Arc<EpisodeRecord>,
    /// Insertion sequence number; identifies the occupant of a slot.
    seq: u64,
    visits: u64,
    t_gen: u64,
    priority: f64,
}

/// Per-slot metadata for inspection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotInfo {
    pub slot: usize,
    pub episode_id: u64,
    pub t_gen: u64,
    pub visits: u64,
    pub priority: f64,
    pub factor: f64,
    pub external_return: f64,
    pub length: usize,
    /// Draws made since this occupant was inserted.
    pub draws_since_insert: u64,
}

impl SlotInfo {
    /// Column names of the per-slot table.
    pub const COLUMNS: [&'static str; 9] = [
        "slot",
        "episode_id",
        "t_gen",
        "visits",
        "priority",
        "factor",
        "external_return",
        "length",
        "draws_since_insert",
    ];
}

/// A training batch drawn from the buffer.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub records: Vec<Arc<EpisodeRecord>>,
    pub slots: Vec<usize>,
    seqs: Vec<u64>,
    /// Max-normalised importance weights.
    pub is_weights: Vec<f64>,
}

/// Episode replay over a sum tree.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    cfg: ReplayConfig,
    tree: SumTree,
    slots: Vec<Option<Slot>>,
    cursor: usize,
    occupied: usize,
    inserted: u64,
    draws: u64,
    draw_mark: Vec<u64>,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(cfg: ReplayConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            tree: SumTree::new(cfg.capacity),
            slots: vec![None; cfg.capacity],
            draw_mark: vec![0; cfg.capacity],
            cursor: 0,
            occupied: 0,
            inserted: 0,
            draws: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cfg,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.occupied
    }

    pub fn is_empty(&self) -> bool {
        self.occupied == 0
    }

    pub fn total_priority(&self) -> f64 {
        self.tree.total()
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    /// Total records ever inserted.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Stores an episode at the ring cursor with the current maximum priority.
    pub fn insert(&mut self, record: EpisodeRecord, now: u64) -> Result<usize> {
        if let Err(e) = record.validate() {
            warn!("episode rejected by replay: {e}");
            return Err(e);
        }
        let p = if self.occupied == 0 { 1.0 } else { self.tree.max_leaf() };
        let slot = self.cursor;
        if self.slots[slot].is_none() {
            self.occupied += 1;
        }
        self.slots[slot] = Some(Slot {
            record: Arc::new(record),
            seq: self.inserted,
            visits: 0,
            t_gen: now,
            priority: p,
        });
        self.draw_mark[slot] = self.draws;
        self.tree.set(slot, p);
        self.inserted += 1;
        self.cursor = (self.cursor + 1) % self.cfg.capacity;
        Ok(slot)
    }

    /// Writes a new priority for an occupied slot, clamped to `p_min`.
    pub fn set_priority(&mut self, slot: usize, p: f64) {
        let p = if p.is_finite() && p >= self.cfg.p_min {
            p
        } else {
            warn!("priority {p} for slot {slot} clamped to {}", self.cfg.p_min);
            self.cfg.p_min
        };
        if let Some(s) = self.slots.get_mut(slot).and_then(|s| s.as_mut()) {
            s.priority = p;
            self.tree.set(slot, p);
        }
    }

    fn factor_of(&self, s: &Slot, now: u64) -> f64 {
        importance_factor(
            s.record.external_return(),
            s.record.len(),
            now.saturating_sub(s.t_gen),
            s.visits,
            self.cfg.staleness_coef,
        )
        .unwrap_or(0.0)
    }

    /// Draws `batch_size` episodes, counting a visit for each draw.
    pub fn sample(&mut self, batch_size: usize, now: u64) -> Result<SampleBatch> {
        if batch_size == 0 || self.occupied < batch_size {
            return Err(Error::InsufficientSamples {
                have: self.occupied,
                need: batch_size.max(1),
            });
        }
        let slots: Vec<usize> = match self.cfg.mode {
            SamplingMode::Explorative => {
                let segment = self.tree.total() / batch_size as f64;
                (0..batch_size)
                    .map(|k| {
                        let prefix = (k as f64 + self.rng.gen::<f64>()) * segment;
                        self.tree.get(prefix.min(self.tree.total() * (1.0 - f64::EPSILON)))
                    })
                    .collect()
            }
            SamplingMode::Uniform => {
                let live: Vec<usize> = (0..self.slots.len()).filter(|&i| self.slots[i].is_some()).collect();
                rand::seq::index::sample(&mut self.rng, live.len(), batch_size)
                    .into_iter()
                    .map(|i| live[i])
                    .collect()
            }
        };
        self.draws += batch_size as u64;
        let mut records = Vec::with_capacity(batch_size);
        let mut seqs = Vec::with_capacity(batch_size);
        let mut raw = Vec::with_capacity(batch_size);
        for &i in &slots {
            let s = self.slots[i].as_mut().expect("sampled slot is occupied");
            s.visits += 1;
            let (rec, seq, p) = (s.record.clone(), s.seq, s.priority);
            let s = self.slots[i].as_ref().unwrap();
            raw.push(isweight(p, self.factor_of(s, now), self.cfg.alpha));
            records.push(rec);
            seqs.push(seq);
        }
        let is_weights = match self.cfg.mode {
            SamplingMode::Uniform => vec![1.0; batch_size],
            SamplingMode::Explorative => {
                let max = raw.iter().copied().fold(0.0, f64::max);
                if max > 0.0 {
                    raw.iter().map(|w| w / max).collect()
                } else {
                    vec![1.0; batch_size]
                }
            }
        };
        Ok(SampleBatch {
            records,
            slots,
            seqs,
            is_weights,
        })
    }

    /// Recomputes priorities from fresh per-episode TD errors. Slots that were
    /// overwritten since sampling are skipped.
    pub fn update_after_train(&mut self, batch: &SampleBatch, td_errors: &[Vec<f64>]) {
        if self.cfg.mode == SamplingMode::Uniform {
            return;
        }
        for ((&slot, &seq), td) in batch.slots.iter().zip(&batch.seqs).zip(td_errors) {
            match &self.slots[slot] {
                Some(s) if s.seq == seq => {
                    let p = priority(td, self.cfg.p_min);
                    self.set_priority(slot, p);
                }
                _ => warn!("slot {slot} was overwritten after sampling; priority update skipped"),
            }
        }
    }

    pub fn slot_info(&self, now: u64) -> Vec<SlotInfo> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| {
                s.as_ref().map(|s| SlotInfo {
                    slot: i,
                    episode_id: s.record.id,
                    t_gen: s.t_gen,
                    visits: s.visits,
                    priority: s.priority,
                    factor: self.factor_of(s, now),
                    external_return: s.record.external_return(),
                    length: s.record.len(),
                    draws_since_insert: self.draws - self.draw_mark[i],
                })
            })
            .collect()
    }

    /// Per-slot table in the format read by [`read_slot_csv`](super::read_slot_csv).
    pub fn write_csv<W: Write>(&self, out: &mut W, now: u64) -> std::io::Result<()> {
        super::write_slot_csv(&self.slot_info(now), out)
    }
}
