use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{Receiver, Sender};
use log::warn;

use super::messages::{ActResponse, LearnerMsg, ObsRequest};
use crate::envs::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::replay::{EpisodeBuilder, EpisodeRecord};

/// Outcome of one rollout attempt.
#[derive(Debug)]
pub enum EpisodeOutcome {
    Done(EpisodeRecord),
    /// The environment rejected a step; the partial episode is dropped.
    Abandoned(Error),
}

/// Plays one episode, asking `serve` for every decision.
///
/// Errors from `serve` end the rollout and are returned; environment
/// errors abandon only this episode.
pub fn run_episode<F>(env: &mut dyn Env, actor: usize, id: u64, seed: u64, mut serve: F) -> Result<EpisodeOutcome>
where
    F: FnMut(ObsRequest) -> Result<ActResponse>,
{
    let spec = env.spec().clone();
    let first = env.reset(seed);
    let mut builder = EpisodeBuilder::new(id, &spec, &first);
    let mut resp = serve(ObsRequest {
        actor,
        step: 0,
        obs: first.obs,
        avail: first.avail,
        last: false,
    })?;
    let mut step = 0;
    loop {
        let actions = resp.actions;
        let result = match env.step(&actions) {
            Ok(r) => r,
            Err(e) => return Ok(EpisodeOutcome::Abandoned(e)),
        };
        step += 1;
        builder.push(&actions, &result);
        let done = result.done;
        resp = serve(ObsRequest {
            actor,
            step,
            obs: result.obs,
            avail: result.avail,
            last: done,
        })?;
        builder.push_intrinsic(&resp.intrinsic);
        if done {
            break;
        }
    }
    match builder.finish() {
        Ok(rec) => Ok(EpisodeOutcome::Done(rec)),
        Err(e) => Ok(EpisodeOutcome::Abandoned(e)),
    }
}

/// Channels tying an actor to its worker.
pub struct ActorPipe {
    pub requests: Sender<ObsRequest>,
    pub responses: Receiver<ActResponse>,
}

/// Run-wide switches observed by actors.
#[derive(Clone, Debug, Default)]
pub struct RolloutControl {
    /// Set to end rollout after the current episode.
    pub stop: Arc<AtomicBool>,
    /// While set, actors wait before starting their next step.
    pub pause: Arc<AtomicBool>,
}

impl RolloutControl {
    fn wait_while_paused(&self) {
        while self.pause.load(Ordering::Acquire) && !self.stop.load(Ordering::Acquire) {
            std::thread::sleep(Duration::from_millis(5));
        }
    }
}

/// Unique episode id for an actor's `k`-th episode.
pub fn episode_id(global_actor: usize, k: u64) -> u64 {
    ((global_actor as u64) << 40) | k
}

/// Rolls out up to `episodes` episodes (or until stopped), pushing each
/// completed one to `queue`. `local_actor` indexes the actor within its
/// worker. Dropping the pipe on return closes the endpoint.
pub fn actor_loop(
    env_cfg: &EnvConfig,
    global_actor: usize,
    local_actor: usize,
    episodes: Option<u64>,
    seed: u64,
    pipe: ActorPipe,
    queue: Sender<LearnerMsg>,
    control: RolloutControl,
) -> Result<u64> {
    let mut env = env_cfg.build()?;
    let mut k = 0u64;
    while episodes.map_or(true, |n| k < n) && !control.stop.load(Ordering::Acquire) {
        let id = episode_id(global_actor, k);
        let ep_seed = seed.wrapping_add(k);
        let outcome = run_episode(env.as_mut(), local_actor, id, ep_seed, |req| {
            control.wait_while_paused();
            pipe.requests
                .send(req)
                .map_err(|_| Error::Runtime("worker hung up".into()))?;
            pipe.responses
                .recv()
                .map_err(|_| Error::Runtime("worker hung up".into()))
        });
        k += 1;
        match outcome {
            Ok(EpisodeOutcome::Done(rec)) => {
                if queue.send(LearnerMsg::Episode(rec)).is_err() {
                    break;
                }
            }
            Ok(EpisodeOutcome::Abandoned(e)) => warn!("actor {global_actor}: episode {id} abandoned: {e}"),
            Err(e) => {
                warn!("actor {global_actor} stopping: {e}");
                break;
            }
        }
    }
    Ok(k)
}
