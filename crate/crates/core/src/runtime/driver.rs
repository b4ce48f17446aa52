use std::sync::atomic::Ordering;
use std::time::Duration;

use crossbeam_channel::{bounded, unbounded, RecvTimeoutError};
use log::warn;

use super::actor::{actor_loop, episode_id, run_episode, ActorPipe, EpisodeOutcome, RolloutControl};
use super::learner::{Learner, StepOutcome, TrainStats};
use super::messages::LearnerMsg;
use super::serve::Server;
use super::worker::worker_loop;
use crate::error::{Error, Result};

/// Whether a run should keep going after an observer callback.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Hooks invoked from the learner's context.
pub trait RunObserver {
    /// After every completed training step.
    fn on_train(&mut self, _learner: &mut Learner, _stats: &TrainStats) -> Result<Control> {
        Ok(Control::Continue)
    }
    /// After every episode stored in replay.
    fn on_episode(&mut self, _learner: &mut Learner) -> Result<Control> {
        Ok(Control::Continue)
    }
}

/// Observer that never intervenes.
pub struct NoObserver;

impl RunObserver for NoObserver {}

fn budget_reached(learner: &Learner) -> bool {
    let b = &learner.config().budget;
    learner.train_steps() >= b.train_steps || (b.max_env_steps > 0 && learner.env_steps() >= b.max_env_steps)
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Single-threaded driver: one actor served inline, one training step after
/// every completed episode. Deterministic for a given seed.
pub fn run_sync(learner: &mut Learner, seed: u64, observer: &mut dyn RunObserver) -> Result<()> {
    let cfg = learner.config().clone();
    let mut env = cfg.env.build()?;
    let mut server = Server::new(
        learner.mailbox().latest(),
        1,
        cfg.schedule.epsilon(),
        1,
        cfg.runtime.normalizer_interval,
        mix_seed(seed, 1),
    );
    let env_seed = mix_seed(seed, 2);
    let mut k = 0u64;
    while !budget_reached(learner) {
        let outcome = run_episode(env.as_mut(), 0, episode_id(0, k), env_seed.wrapping_add(k), |req| {
            server.refresh(learner.mailbox());
            let resp = server.serve(std::slice::from_ref(&req))?.pop().expect("one response per request");
            if let Some((obs, rw)) = server.take_stats_if_due() {
                learner.merge_stats(&obs, &rw);
            }
            Ok(resp)
        })?;
        k += 1;
        match outcome {
            EpisodeOutcome::Done(rec) => {
                learner.ingest(rec);
                if observer.on_episode(learner)? == Control::Stop {
                    break;
                }
            }
            EpisodeOutcome::Abandoned(e) => warn!("episode abandoned: {e}"),
        }
        if let StepOutcome::Trained(stats) = learner.train_step()? {
            if observer.on_train(learner, &stats)? == Control::Stop {
                break;
            }
        }
    }
    Ok(())
}

fn handle(learner: &mut Learner, msg: LearnerMsg, observer: &mut dyn RunObserver) -> Result<Control> {
    match msg {
        LearnerMsg::Episode(rec) => {
            learner.ingest(rec);
            observer.on_episode(learner)
        }
        LearnerMsg::Stats { obs, rw } => {
            learner.merge_stats(&obs, &rw);
            Ok(Control::Continue)
        }
    }
}

/// Multi-threaded driver: `workers × actors` rollout threads feed the learner
/// through a bounded queue while it trains (when `train` is set).
///
/// On return every rollout thread has finished and the queue is drained.
pub fn run_distributed(
    learner: &mut Learner,
    seed: u64,
    observer: &mut dyn RunObserver,
    control: RolloutControl,
    train: bool,
) -> Result<()> {
    let cfg = learner.config().clone();
    let (workers, actors) = (cfg.runtime.workers, cfg.runtime.actors);
    let mailbox = learner.mailbox().clone();
    let (queue_tx, queue_rx) = bounded::<LearnerMsg>(cfg.runtime.queue_bound);

    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            let (req_tx, req_rx) = unbounded();
            let mut resp_txs = Vec::with_capacity(actors);
            for a in 0..actors {
                let (resp_tx, resp_rx) = bounded(1);
                resp_txs.push(resp_tx);
                let global = w * actors + a;
                let pipe = ActorPipe {
                    requests: req_tx.clone(),
                    responses: resp_rx,
                };
                let (q, c, env) = (queue_tx.clone(), control.clone(), &cfg.env);
                let actor_seed = mix_seed(seed, 1000 + global as u64);
                handles.push(scope.spawn(move || {
                    actor_loop(env, global, a, None, actor_seed, pipe, q, c).map(|_| ())
                }));
            }
            drop(req_tx);
            let server = Server::new(
                mailbox.latest(),
                actors,
                cfg.schedule.epsilon(),
                workers as u64,
                cfg.runtime.normalizer_interval,
                mix_seed(seed, 100 + w as u64),
            );
            let (q, mb) = (queue_tx.clone(), &mailbox);
            handles.push(scope.spawn(move || worker_loop(server, req_rx, resp_txs, mb, q).map(|_| ())));
        }
        drop(queue_tx);

        let result = (|| -> Result<()> {
            let mut rollout_alive = true;
            loop {
                for msg in queue_rx.try_iter() {
                    if handle(learner, msg, observer)? == Control::Stop {
                        return Ok(());
                    }
                }
                if budget_reached(learner) {
                    return Ok(());
                }
                let outcome = if train { learner.train_step()? } else { StepOutcome::Waiting };
                match outcome {
                    StepOutcome::Trained(stats) => {
                        if observer.on_train(learner, &stats)? == Control::Stop {
                            return Ok(());
                        }
                    }
                    StepOutcome::Skipped => {}
                    StepOutcome::Waiting => {
                        if !rollout_alive {
                            return Ok(());
                        }
                        match queue_rx.recv_timeout(Duration::from_millis(20)) {
                            Ok(msg) => {
                                if handle(learner, msg, observer)? == Control::Stop {
                                    return Ok(());
                                }
                            }
                            Err(RecvTimeoutError::Timeout) => {}
                            Err(RecvTimeoutError::Disconnected) => rollout_alive = false,
                        }
                    }
                }
            }
        })();

        control.stop.store(true, Ordering::Release);
        control.pause.store(false, Ordering::Release);
        for msg in queue_rx.iter() {
            if let LearnerMsg::Episode(rec) = msg {
                learner.ingest(rec);
            }
        }
        let mut thread_err = None;
        for h in handles {
            match h.join() {
                Ok(Ok(())) => {}
                Ok(Err(e)) => thread_err = Some(e),
                Err(_) => thread_err = Some(Error::Runtime("a rollout thread panicked".into())),
            }
        }
        result?;
        thread_err.map_or(Ok(()), Err)
    })
}
