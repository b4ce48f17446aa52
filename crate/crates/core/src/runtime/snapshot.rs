use std::sync::Arc;

use parking_lot::RwLock;

use crate::agent::{ActionNet, IrdNet, RunningGaussian};

/// Frozen parameters served to workers.
#[derive(Clone, Debug)]
pub struct ParamSnapshot {
    pub version: u64,
    pub agent: ActionNet,
    pub ird: IrdNet,
    pub obs_norm: RunningGaussian,
    pub rw_norm: RunningGaussian,
}

/// Latest-value slot: one writer publishes, any number of readers fetch.
#[derive(Debug)]
pub struct SnapshotMailbox {
    slot: RwLock<Arc<ParamSnapshot>>,
}

impl SnapshotMailbox {
    pub fn new(initial: ParamSnapshot) -> Self {
        Self {
            slot: RwLock::new(Arc::new(initial)),
        }
    }

    /// Replaces the held snapshot. Older versions are ignored.
    pub fn publish(&self, snapshot: ParamSnapshot) {
        let mut slot = self.slot.write();
        if snapshot.version >= slot.version {
            *slot = Arc::new(snapshot);
        }
    }

    pub fn latest(&self) -> Arc<ParamSnapshot> {
        self.slot.read().clone()
    }

    pub fn version(&self) -> u64 {
        self.slot.read().version
    }
}
