//! State-conditioned double monotonic mixing and the training losses.

mod loss;
mod net;

pub use loss::{
    ird_inputs, ird_loss, masked_max, mixing_loss, td_targets, total_loss, LossOutput, LossWeights, NetShape,
    Networks,
};
pub use net::{MixCache, MixOutput, MixerNet, WeightConstraint};

/// Width of the mixing embedding.
pub const MIX_EMBED: usize = 32;
