use std::collections::HashSet;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver};
use duomix::agent::EpsilonSchedule;
use duomix::config::RunConfig;
use duomix::envs::{EnvConfig, EnvName};
use duomix::runtime::{
    actor_loop, run_distributed, run_sync, worker_loop, ActResponse, ActorPipe, Control, Learner, LearnerMsg,
    NoObserver, ObsRequest, ParamSnapshot, RolloutControl, RunObserver, Server, SnapshotMailbox, StepOutcome,
    TrainStats,
};
use duomix::Error;

fn small(name: EnvName) -> RunConfig {
    let mut cfg = RunConfig::for_env(name);
    cfg.model.rnn_hidden = 16;
    cfg.model.mixing_embed = 8;
    cfg
}

fn snapshot(cfg: &RunConfig, seed: u64) -> ParamSnapshot {
    Learner::new(cfg, seed).unwrap().snapshot(0)
}

fn server(snap: ParamSnapshot, actors: usize) -> Server {
    Server::new(Arc::new(snap), actors, EpsilonSchedule::default(), 1, 50, 7).with_fixed_epsilon(0.0)
}

/// One worker with `actors` actors, each running `episodes` episodes.
fn rollout(env: &EnvConfig, snap: ParamSnapshot, actors: usize, episodes: u64) -> (Vec<LearnerMsg>, Vec<u64>) {
    let mailbox = SnapshotMailbox::new(snap.clone());
    let (queue_tx, queue_rx) = unbounded();
    let counts = thread::scope(|s| {
        let (req_tx, req_rx) = unbounded();
        let mut resp_txs = Vec::new();
        let mut handles = Vec::new();
        for a in 0..actors {
            let (resp_tx, resp_rx) = bounded(1);
            resp_txs.push(resp_tx);
            let pipe = ActorPipe {
                requests: req_tx.clone(),
                responses: resp_rx,
            };
            let q = queue_tx.clone();
            handles.push(s.spawn(move || {
                actor_loop(env, a, a, Some(episodes), 100 + a as u64, pipe, q, RolloutControl::default()).unwrap()
            }));
        }
        drop(req_tx);
        let q = queue_tx.clone();
        let mb = &mailbox;
        let worker = s.spawn(move || worker_loop(server(snap, actors), req_rx, resp_txs, mb, q));
        let counts: Vec<u64> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        worker.join().unwrap().unwrap();
        counts
    });
    drop(queue_tx);
    (queue_rx.iter().collect(), counts)
}

fn episodes(msgs: Vec<LearnerMsg>) -> Vec<duomix::replay::EpisodeRecord> {
    msgs.into_iter()
        .filter_map(|m| match m {
            LearnerMsg::Episode(r) => Some(r),
            LearnerMsg::Stats { .. } => None,
        })
        .collect()
}

#[test]
fn zero_interactions_emit_nothing() {
    let cfg = small(EnvName::SparseCorridor);
    let (msgs, counts) = rollout(&cfg.env, snapshot(&cfg, 1), 1, 0);
    assert_eq!(counts, vec![0]);
    assert!(episodes(msgs).is_empty());
}

#[test]
fn four_actors_ten_episodes_each() {
    let cfg = small(EnvName::SparseCorridor);
    let (msgs, counts) = rollout(&cfg.env, snapshot(&cfg, 1), 4, 10);
    assert_eq!(counts, vec![10; 4]);
    let eps = episodes(msgs);
    assert_eq!(eps.len(), 40);
    let ids: HashSet<u64> = eps.iter().map(|e| e.id).collect();
    assert_eq!(ids.len(), 40);
    for e in &eps {
        e.validate().unwrap();
        for t in 0..e.len() {
            for i in 0..e.n_agents {
                let a = e.actions[t * e.n_agents + i];
                assert!(e.avail_at(t, i)[a], "served action violates the mask");
            }
        }
    }
}

#[test]
fn greedy_rollouts_repeat_exactly() {
    let cfg = small(EnvName::Skirmish);
    let snap = snapshot(&cfg, 4);
    let (a, _) = rollout(&cfg.env, snap.clone(), 1, 3);
    let (b, _) = rollout(&cfg.env, snap, 1, 3);
    let (a, b) = (episodes(a), episodes(b));
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.obs, y.obs);
        assert_eq!(x.actions, y.actions);
        assert_eq!(x.reward, y.reward);
        assert_eq!(x.intrinsic, y.intrinsic);
    }
}

#[test]
fn worker_returns_once_every_actor_hangs_up() {
    let cfg = small(EnvName::SparseCorridor);
    let snap = snapshot(&cfg, 1);
    let mailbox = SnapshotMailbox::new(snap.clone());
    let (req_tx, req_rx) = unbounded::<ObsRequest>();
    let (resp_tx, _resp_rx) = bounded(1);
    let (queue_tx, _queue_rx) = unbounded();
    let req_tx2 = req_tx.clone();
    drop(req_tx);
    drop(req_tx2);
    let out = worker_loop(server(snap, 1), req_rx, vec![resp_tx], &mailbox, queue_tx).unwrap();
    assert_eq!(out.served_steps(), 0);
}

fn ask(tx: &crossbeam_channel::Sender<ObsRequest>, rx: &Receiver<ActResponse>, env: &EnvConfig, step: usize) -> ActResponse {
    let mut e = env.build().unwrap();
    let r = e.reset(3);
    tx.send(ObsRequest {
        actor: 0,
        step,
        obs: r.obs,
        avail: r.avail,
        last: false,
    })
    .unwrap();
    rx.recv().unwrap()
}

#[test]
fn newer_snapshot_changes_served_actions() {
    let cfg = small(EnvName::SparseCorridor);
    let snap = snapshot(&cfg, 2);
    let mailbox = SnapshotMailbox::new(snap.clone());
    let (req_tx, req_rx) = unbounded();
    let (resp_tx, resp_rx) = bounded(1);
    let (queue_tx, _queue_rx) = unbounded();
    thread::scope(|s| {
        let mb = &mailbox;
        let w = s.spawn(move || worker_loop(server(snap.clone(), 1), req_rx, vec![resp_tx], mb, queue_tx));
        let before = ask(&req_tx, &resp_rx, &cfg.env, 0);
        assert_eq!(before.version, 0);
        let greedy = before.actions[0];
        let avail = cfg.env.build().unwrap().reset(3).avail;
        let sentinel = (0..avail[0].len())
            .find(|&a| a != greedy && avail.iter().all(|m| m[a]))
            .expect("a second action is available to every agent");
        let mut flipped = mailbox.latest().as_ref().clone();
        flipped.version = 1;
        let b = flipped.agent.block.id("fc2/b").unwrap();
        flipped.agent.block.value_mut(b).data_mut()[sentinel] = 1e6;
        mailbox.publish(flipped);
        let after = ask(&req_tx, &resp_rx, &cfg.env, 0);
        assert_eq!(after.version, 1);
        assert!(after.actions.iter().all(|&a| a == sentinel));
        drop(req_tx);
        w.join().unwrap().unwrap();
    });
}

#[test]
fn served_versions_never_run_ahead_or_backwards() {
    let cfg = small(EnvName::SparseCorridor);
    let snap = snapshot(&cfg, 2);
    let mailbox = SnapshotMailbox::new(snap.clone());
    let (req_tx, req_rx) = unbounded();
    let (resp_tx, resp_rx) = bounded(1);
    let (queue_tx, _queue_rx) = unbounded();
    thread::scope(|s| {
        let mb = &mailbox;
        let w = s.spawn(move || worker_loop(server(snap.clone(), 1), req_rx, vec![resp_tx], mb, queue_tx));
        let publisher = s.spawn(|| {
            for v in 1..=200 {
                let mut next = mailbox.latest().as_ref().clone();
                next.version = v;
                mailbox.publish(next);
                if v % 10 == 0 {
                    thread::yield_now();
                }
            }
        });
        let mut last = 0;
        for _ in 0..300 {
            let r = ask(&req_tx, &resp_rx, &cfg.env, 1);
            assert!(r.version >= last);
            assert!(r.version <= mailbox.version());
            last = r.version;
        }
        publisher.join().unwrap();
        let r = ask(&req_tx, &resp_rx, &cfg.env, 1);
        assert_eq!(r.version, 200);
        drop(req_tx);
        w.join().unwrap().unwrap();
    });
}

#[test]
fn learner_waits_for_a_full_batch() {
    let cfg = small(EnvName::CooperativeMatrix);
    let mut learner = Learner::new(&cfg, 1).unwrap();
    assert_eq!(learner.train_step().unwrap(), StepOutcome::Waiting);
    let (msgs, _) = rollout(&cfg.env, learner.snapshot(0), 1, 32);
    let mut eps = episodes(msgs).into_iter();
    for e in eps.by_ref().take(31) {
        learner.ingest(e);
    }
    assert_eq!(learner.train_step().unwrap(), StepOutcome::Waiting);
    assert_eq!(learner.train_steps(), 0);
    learner.ingest(eps.next().unwrap());
    assert!(matches!(learner.train_step().unwrap(), StepOutcome::Trained(_)));
    assert_eq!(learner.train_steps(), 1);
}

#[test]
fn hundred_step_budget_makes_no_target_sync() {
    let mut cfg = small(EnvName::CooperativeMatrix);
    cfg.runtime.distributed = false;
    cfg.budget.train_steps = 100;
    let mut learner = Learner::new(&cfg, 1).unwrap();
    run_sync(&mut learner, 1, &mut NoObserver).unwrap();
    assert_eq!(learner.train_steps(), 100);
    assert_eq!(learner.target_syncs(), 0);
    assert_eq!(learner.version(), 1);
}

#[derive(Default)]
struct Trace(Vec<TrainStats>);

impl RunObserver for Trace {
    fn on_train(&mut self, _: &mut Learner, stats: &TrainStats) -> duomix::Result<Control> {
        self.0.push(stats.clone());
        Ok(Control::Continue)
    }
}

#[test]
fn synchronous_runs_are_reproducible() {
    let mut cfg = small(EnvName::SparseCorridor);
    cfg.runtime.distributed = false;
    cfg.replay.batch_size = 8;
    cfg.budget.train_steps = 30;
    let run = |seed| {
        let mut learner = Learner::new(&cfg, seed).unwrap();
        let mut trace = Trace::default();
        run_sync(&mut learner, seed, &mut trace).unwrap();
        (trace.0, learner)
    };
    let (a, la) = run(5);
    let (b, lb) = run(5);
    let (c, _) = run(6);
    assert_eq!(a.len(), 30);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(la.nets.agent.block.values_equal(&lb.nets.agent.block));
    assert!(la.nets.mixer.block.values_equal(&lb.nets.mixer.block));
    assert_eq!(la.env_steps(), lb.env_steps());
}

#[test]
fn non_finite_losses_skip_then_abort() {
    let cfg = small(EnvName::CooperativeMatrix);
    let mut learner = Learner::new(&cfg, 1).unwrap();
    let (msgs, _) = rollout(&cfg.env, learner.snapshot(0), 1, 32);
    for e in episodes(msgs) {
        learner.ingest(e);
    }
    let id = learner.nets.mixer.block.id("hyper_w1/w").unwrap();
    learner.nets.mixer.block.value_mut(id).data_mut()[0] = f64::NAN;
    let agent_before = learner.nets.agent.block.clone();
    assert_eq!(learner.train_step().unwrap(), StepOutcome::Skipped);
    assert_eq!(learner.train_step().unwrap(), StepOutcome::Skipped);
    assert!(learner.nets.agent.block.values_equal(&agent_before));
    assert_eq!(learner.train_steps(), 0);
    assert!(matches!(learner.train_step(), Err(Error::NonFinite(_))));
}

struct StopAfter(u64);

impl RunObserver for StopAfter {
    fn on_episode(&mut self, learner: &mut Learner) -> duomix::Result<Control> {
        Ok(if learner.episodes() >= self.0 {
            Control::Stop
        } else {
            Control::Continue
        })
    }
}

#[test]
fn every_episode_arrives_once() {
    let mut cfg = small(EnvName::SparseCorridor);
    cfg.runtime.workers = 2;
    cfg.runtime.actors = 3;
    cfg.runtime.queue_bound = 4;
    let mut learner = Learner::new(&cfg, 1).unwrap();
    run_distributed(&mut learner, 1, &mut StopAfter(60), RolloutControl::default(), false).unwrap();
    let slots = learner.replay.slot_info(0);
    assert!(slots.len() >= 60);
    assert_eq!(slots.len() as u64, learner.episodes());
    let ids: HashSet<u64> = slots.iter().map(|s| s.episode_id).collect();
    assert_eq!(ids.len(), slots.len());
}

#[test]
fn distributed_training_reaches_its_budget() {
    let mut cfg = small(EnvName::CooperativeMatrix);
    cfg.runtime.workers = 2;
    cfg.runtime.actors = 2;
    cfg.runtime.publish_interval = 5;
    cfg.budget.train_steps = 25;
    let mut learner = Learner::new(&cfg, 1).unwrap();
    run_distributed(&mut learner, 1, &mut NoObserver, RolloutControl::default(), true).unwrap();
    assert_eq!(learner.train_steps(), 25);
    assert_eq!(learner.version(), 5);
}

/// Pauses rollout once training has started and stops after training for
/// `hold` with rollout paused.
struct Stall {
    pause: Arc<std::sync::atomic::AtomicBool>,
    hold: Duration,
    since: Option<(Instant, u64, u64)>,
    during: Option<(u64, u64)>,
}

impl RunObserver for Stall {
    fn on_train(&mut self, learner: &mut Learner, _: &TrainStats) -> duomix::Result<Control> {
        match self.since {
            None => {
                self.pause.store(true, Ordering::Release);
                self.since = Some((Instant::now(), learner.train_steps(), learner.episodes()));
                Ok(Control::Continue)
            }
            Some((t, steps, _)) if t.elapsed() >= self.hold => {
                self.during = Some((learner.train_steps() - steps, learner.episodes()));
                Ok(Control::Stop)
            }
            Some(_) => Ok(Control::Continue),
        }
    }
}

#[test]
fn training_continues_while_rollout_is_stalled() {
    let mut cfg = small(EnvName::SparseCorridor);
    cfg.runtime.workers = 1;
    cfg.runtime.actors = 2;
    cfg.replay.batch_size = 4;
    let control = RolloutControl::default();
    let mut obs = Stall {
        pause: control.pause.clone(),
        hold: Duration::from_millis(500),
        since: None,
        during: None,
    };
    let (done_tx, done_rx) = bounded(1);
    thread::scope(|s| {
        s.spawn(|| {
            let mut learner = Learner::new(&cfg, 1).unwrap();
            run_distributed(&mut learner, 1, &mut obs, control, true).unwrap();
            done_tx.send(()).unwrap();
        });
        done_rx
            .recv_timeout(Duration::from_secs(60))
            .expect("run finished without deadlock");
    });
    let (_, _, episodes_at_pause) = obs.since.unwrap();
    let (trained, episodes_at_stop) = obs.during.unwrap();
    assert!(trained > 0);
    // At most the episodes already queued arrive while paused.
    assert!(episodes_at_stop <= episodes_at_pause + cfg.runtime.queue_bound as u64);
}
