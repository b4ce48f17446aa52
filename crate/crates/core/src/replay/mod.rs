//! Episode replay with priority-proportional stratified sampling.

mod buffer;
mod inspect;
mod record;
mod sumtree;

pub use buffer::{
    importance_factor, isweight, priority, ReplayBuffer, ReplayConfig, SampleBatch, SamplingMode, SlotInfo,
};
pub use inspect::{read_slot_csv, write_slot_csv, VisitSummary};
pub use record::{EpisodeBatch, EpisodeBuilder, EpisodeRecord};
pub use sumtree::SumTree;
