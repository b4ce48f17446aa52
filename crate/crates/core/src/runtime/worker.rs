use crossbeam_channel::{Receiver, Sender};
use log::warn;

use super::messages::{ActResponse, LearnerMsg, ObsRequest};
use super::serve::Server;
use super::snapshot::SnapshotMailbox;
use crate::error::Result;

/// Serves a fixed set of actors until every actor endpoint has closed.
///
/// Each cycle blocks for one request, then takes whatever else is pending,
/// refreshes the snapshot if a newer one exists and answers the group.
/// Normalizer statistics go to the learner through `queue`.
pub fn worker_loop(
    mut server: Server,
    requests: Receiver<ObsRequest>,
    responses: Vec<Sender<ActResponse>>,
    mailbox: &SnapshotMailbox,
    queue: Sender<LearnerMsg>,
) -> Result<Server> {
    let mut pending = Vec::new();
    while let Ok(first) = requests.recv() {
        pending.clear();
        pending.push(first);
        pending.extend(requests.try_iter());
        server.refresh(mailbox);
        for resp in server.serve(&pending)? {
            let actor = resp.actor;
            if responses[actor].send(resp).is_err() {
                warn!("actor {actor} left before its response arrived");
            }
        }
        if let Some((obs, rw)) = server.take_stats_if_due() {
            let _ = queue.send(LearnerMsg::Stats { obs, rw });
        }
    }
    if let Some((obs, rw)) = server.take_stats() {
        let _ = queue.send(LearnerMsg::Stats { obs, rw });
    }
    Ok(server)
}
