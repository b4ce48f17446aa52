//! Shared per-agent networks and exploration.

mod action_net;
mod ird;
mod normalizer;
mod policy;

pub use action_net::{ActionNet, Unrolled};
pub use ird::{intrinsic_reward, prepare_obs, IrdNet, EMBED_DIM, IRD_HIDDEN, OBS_CLIP};
pub use normalizer::{RunningGaussian, STD_FLOOR};
pub use policy::{greedy, select_action, EpsilonSchedule};

/// Hidden width of the recurrent layer.
pub const RNN_HIDDEN: usize = 64;
