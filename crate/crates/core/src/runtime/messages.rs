use crate::agent::RunningGaussian;
use crate::replay::EpisodeRecord;

/// An actor's per-step call to its worker.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsRequest {
    pub actor: usize,
    /// Step index within the episode; 0 right after reset.
    pub step: usize,
    pub obs: Vec<Vec<f64>>,
    pub avail: Vec<Vec<bool>>,
    /// The episode has ended: only intrinsic rewards for `obs` are wanted.
    pub last: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActResponse {
    pub actor: usize,
    pub step: usize,
    /// One action per agent; empty for a `last` request.
    pub actions: Vec<usize>,
    /// Normalised intrinsic reward per agent for the request's observations.
    pub intrinsic: Vec<f64>,
    /// Snapshot version that produced the response.
    pub version: u64,
}

/// Traffic from rollout to the learner.
#[derive(Clone, Debug)]
pub enum LearnerMsg {
    Episode(EpisodeRecord),
    /// Worker-local normalizer statistics gathered since the last report.
    Stats { obs: RunningGaussian, rw: RunningGaussian },
}
