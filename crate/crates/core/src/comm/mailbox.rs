use std::collections::{HashMap, VecDeque};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use super::wire::Payload;
use super::CommError;

/// Per-rank inbox. Messages are queued per `(source, tag)` so delivery is
/// FIFO for each pair and tag.
#[derive(Debug)]
pub(crate) struct Mailbox {
    state: Mutex<State>,
    ready: Condvar,
}

#[derive(Debug)]
struct State {
    queues: HashMap<(usize, u32), VecDeque<Payload>>,
    disconnected: Vec<bool>,
    aborted_by: Option<usize>,
}

impl Mailbox {
    pub(crate) fn new(size: usize) -> Self {
        Self {
            state: Mutex::new(State {
                queues: HashMap::new(),
                disconnected: vec![false; size],
                aborted_by: None,
            }),
            ready: Condvar::new(),
        }
    }

    pub(crate) fn deliver(&self, source: usize, tag: u32, payload: Payload) {
        let mut st = self.state.lock().unwrap();
        st.queues
            .entry((source, tag))
            .or_default()
            .push_back(payload);
        drop(st);
        self.ready.notify_all();
    }

    pub(crate) fn disconnect(&self, source: usize) {
        let mut st = self.state.lock().unwrap();
        if let Some(flag) = st.disconnected.get_mut(source) {
            *flag = true;
        }
        drop(st);
        self.ready.notify_all();
    }

    pub(crate) fn abort(&self, source: usize) {
        let mut st = self.state.lock().unwrap();
        st.aborted_by.get_or_insert(source);
        drop(st);
        self.ready.notify_all();
    }

    /// Blocks until a message from `source` with `tag` arrives.
    ///
    /// Queued messages are always returned before a disconnect is reported.
    pub(crate) fn recv(
        &self,
        source: usize,
        tag: u32,
        timeout: Duration,
    ) -> Result<Payload, CommError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(p) = st
                .queues
                .get_mut(&(source, tag))
                .and_then(VecDeque::pop_front)
            {
                return Ok(p);
            }
            if let Some(rank) = st.aborted_by {
                return Err(CommError::Aborted { rank });
            }
            if st.disconnected[source] {
                return Err(CommError::PeerDisconnected { rank: source });
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(CommError::Timeout {
                    peer: source,
                    tag,
                    after: timeout,
                });
            }
            st = self.ready.wait_timeout(st, deadline - now).unwrap().0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifo_per_source_and_tag() {
        let mb = Mailbox::new(2);
        mb.deliver(1, 5, Payload::U8(vec![1]));
        mb.deliver(1, 6, Payload::U8(vec![9]));
        mb.deliver(1, 5, Payload::U8(vec![2]));
        let t = Duration::from_millis(10);
        assert_eq!(mb.recv(1, 5, t).unwrap(), Payload::U8(vec![1]));
        assert_eq!(mb.recv(1, 5, t).unwrap(), Payload::U8(vec![2]));
        assert_eq!(mb.recv(1, 6, t).unwrap(), Payload::U8(vec![9]));
    }

    #[test]
    fn timeout_and_disconnect() {
        let mb = Mailbox::new(2);
        let t = Duration::from_millis(20);
        assert!(matches!(
            mb.recv(1, 1, t),
            Err(CommError::Timeout { peer: 1, .. })
        ));
        mb.deliver(1, 1, Payload::U8(vec![]));
        mb.disconnect(1);
        assert!(mb.recv(1, 1, t).is_ok());
        assert!(matches!(
            mb.recv(1, 1, t),
            Err(CommError::PeerDisconnected { rank: 1 })
        ));
    }
}
