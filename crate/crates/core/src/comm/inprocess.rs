//! In-process transport: p ranks as p threads sharing ordered queues.

use std::sync::Arc;
use std::thread;

use super::mailbox::Mailbox;
use super::{dispatch, CommConfig, CommError, Communicator, Frame, Transport, TransportKind};

struct InProcessTransport {
    rank: usize,
    mailboxes: Vec<Arc<Mailbox>>,
}

impl Transport for InProcessTransport {
    fn send(&self, dest: usize, frame: Frame) -> Result<(), CommError> {
        dispatch(&self.mailboxes[dest], frame);
        Ok(())
    }

    fn kind(&self) -> TransportKind {
        TransportKind::InProcess
    }
}

impl Drop for InProcessTransport {
    fn drop(&mut self) {
        for (r, mb) in self.mailboxes.iter().enumerate() {
            if r != self.rank {
                mb.disconnect(self.rank);
            }
        }
    }
}

/// Creates the `size` communicators of one group, indexed by rank.
pub fn create(size: usize, config: CommConfig) -> Vec<Communicator> {
    assert!(size >= 1, "group size must be positive");
    let mailboxes: Vec<Arc<Mailbox>> = (0..size).map(|_| Arc::new(Mailbox::new(size))).collect();
    (0..size)
        .map(|rank| {
            let transport = InProcessTransport {
                rank,
                mailboxes: mailboxes.clone(),
            };
            Communicator::from_parts(
                rank,
                size,
                Box::new(transport),
                Arc::clone(&mailboxes[rank]),
                config,
            )
        })
        .collect()
}

/// Runs `f` on `size` scoped threads, one per rank, and returns the results
/// in rank order. A panic on any rank is re-raised after all ranks finish.
pub fn launch<R, F>(size: usize, config: CommConfig, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(Communicator) -> R + Sync,
{
    let comms = create(size, config);
    let f = &f;
    let joined: Vec<thread::Result<R>> = thread::scope(|s| {
        let handles: Vec<_> = comms
            .into_iter()
            .map(|comm| {
                thread::Builder::new()
                    .name(format!("rank-{}", comm.rank()))
                    .spawn_scoped(s, move || f(comm))
                    .expect("spawn rank thread")
            })
            .collect();
        handles.into_iter().map(|h| h.join()).collect()
    });
    joined
        .into_iter()
        .map(|r| r.unwrap_or_else(|e| std::panic::resume_unwind(e)))
        .collect()
}
