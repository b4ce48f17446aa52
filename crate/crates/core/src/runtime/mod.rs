//! Actor / worker / learner execution: rollout threads feed a bounded sample
//! queue, workers serve decisions from versioned parameter snapshots, and the
//! learner trains, publishes snapshots and syncs targets.

mod actor;
mod bench;
mod driver;
mod learner;
mod messages;
mod serve;
mod snapshot;
mod worker;

pub use actor::{actor_loop, episode_id, run_episode, ActorPipe, EpisodeOutcome, RolloutControl};
pub use bench::{bench_grid, throughput_bench, BenchRow, Rates};
pub use driver::{run_distributed, run_sync, Control, NoObserver, RunObserver};
pub use learner::{checkpoint_config, Learner, StepOutcome, TrainStats, MAX_NONFINITE_STREAK};
pub use messages::{ActResponse, LearnerMsg, ObsRequest};
pub use serve::Server;
pub use snapshot::{ParamSnapshot, SnapshotMailbox};
pub use worker::worker_loop;
