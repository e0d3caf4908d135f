//! Message-passing substrate: ranks, point-to-point messaging and the
//! collectives used for parameter averaging and data distribution.
//!
//! A [`Communicator`] is one rank of a fixed-size group. It is `Send` but not
//! `Sync`: each rank owns its communicator on one thread of control. Every
//! rank must call the same collectives in the same order.

mod collectives;
pub mod inprocess;
mod mailbox;
mod scatter;
pub mod tcp;
pub mod wire;

use std::cell::Cell;
use std::io;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

pub use wire::{ElemType, Frame, Payload, WireElement, WireError};

use mailbox::Mailbox;

/// Tags at or above this value are used by collectives and the runtime.
pub const RESERVED_TAG_BASE: u32 = 0xFFFF_0000;
pub(crate) const TAG_HELLO: u32 = 0;
pub(crate) const TAG_ABORT: u32 = u32::MAX;

pub(crate) mod tags {
    use super::RESERVED_TAG_BASE as B;
    pub const REDUCE: u32 = B + 1;
    pub const BCAST: u32 = B + 2;
    pub const RD_EXCHANGE: u32 = B + 3;
    pub const RD_FOLD: u32 = B + 4;
    pub const RD_UNFOLD: u32 = B + 5;
    pub const GATHER: u32 = B + 6;
    pub const SCATTER_META: u32 = B + 7;
    pub const SCATTER_SAMPLES: u32 = B + 8;
    pub const SCATTER_LABELS: u32 = B + 9;
    pub const BARRIER: u32 = B + 0x100;
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum CommError {
    #[error("rank {rank} is outside a group of size {size}")]
    InvalidRank { rank: usize, size: usize },
    #[error("rank {0} cannot message itself")]
    SelfMessage(usize),
    #[error("tag {0:#x} is reserved")]
    ReservedTag(u32),
    #[error("peer rank {rank} disconnected")]
    PeerDisconnected { rank: usize },
    #[error("timed out after {after:?} waiting for rank {peer} (tag {tag:#x})")]
    Timeout {
        peer: usize,
        tag: u32,
        after: Duration,
    },
    #[error("job aborted by rank {rank}")]
    Aborted { rank: usize },
    #[error("rank {peer} contributed {got} elements, expected {expected}")]
    LengthMismatch {
        peer: usize,
        expected: usize,
        got: usize,
    },
    #[error("rank {peer} sent {got:?} elements, expected {expected:?}")]
    TypeMismatch {
        peer: usize,
        expected: ElemType,
        got: ElemType,
    },
    #[error("dataset of {samples} samples cannot be split across {ranks} ranks")]
    DatasetTooSmall { samples: usize, ranks: usize },
    #[error("malformed scatter message: {0}")]
    BadScatter(String),
    #[error("rendezvous failed: {0}")]
    Rendezvous(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Allreduce algorithm selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AllreduceAlgorithm {
    /// Binomial-tree reduce to rank 0 followed by a binomial broadcast.
    /// Every rank receives the bit-identical result.
    #[default]
    Deterministic,
    /// Pairwise exchange in log2(p) rounds; non-power-of-two groups fold the
    /// excess ranks into the nearest lower power of two first.
    RecursiveDoubling,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransportKind {
    InProcess,
    Tcp,
}

#[derive(Clone, Copy, Debug)]
pub struct CommConfig {
    /// Deadline for every blocking receive.
    pub timeout: Duration,
    pub algorithm: AllreduceAlgorithm,
}

impl Default for CommConfig {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            algorithm: AllreduceAlgorithm::Deterministic,
        }
    }
}

/// Counters kept by each communicator. Bytes count payload only, not frame
/// headers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CommStats {
    pub messages_sent: u64,
    pub bytes_sent: u64,
    /// Pairwise-exchange rounds performed by recursive doubling.
    pub exchange_rounds: u64,
    /// Pre/post steps folding non-power-of-two groups.
    pub fold_steps: u64,
}

pub(crate) trait Transport: Send {
    fn send(&self, dest: usize, frame: Frame) -> Result<(), CommError>;
    fn kind(&self) -> TransportKind;
}

pub struct Communicator {
    rank: usize,
    size: usize,
    transport: Box<dyn Transport>,
    mailbox: Arc<Mailbox>,
    config: CommConfig,
    stats: Cell<CommStats>,
}

impl std::fmt::Debug for Communicator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Communicator")
            .field("rank", &self.rank)
            .field("size", &self.size)
            .field("transport", &self.transport.kind())
            .finish()
    }
}

impl Communicator {
    pub(crate) fn from_parts(
        rank: usize,
        size: usize,
        transport: Box<dyn Transport>,
        mailbox: Arc<Mailbox>,
        config: CommConfig,
    ) -> Self {
        Self {
            rank,
            size,
            transport,
            mailbox,
            config,
            stats: Cell::new(CommStats::default()),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_root(&self) -> bool {
        self.rank == 0
    }

    pub fn config(&self) -> CommConfig {
        self.config
    }

    pub fn set_algorithm(&mut self, algorithm: AllreduceAlgorithm) {
        self.config.algorithm = algorithm;
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.config.timeout = timeout;
    }

    pub fn transport_kind(&self) -> TransportKind {
        self.transport.kind()
    }

    pub fn stats(&self) -> CommStats {
        self.stats.get()
    }

    fn bump(&self, f: impl FnOnce(&mut CommStats)) {
        let mut s = self.stats.get();
        f(&mut s);
        self.stats.set(s);
    }

    fn check_peer(&self, peer: usize) -> Result<(), CommError> {
        if peer >= self.size {
            return Err(CommError::InvalidRank {
                rank: peer,
                size: self.size,
            });
        }
        if peer == self.rank {
            return Err(CommError::SelfMessage(peer));
        }
        Ok(())
    }

    fn check_user_tag(tag: u32) -> Result<(), CommError> {
        if tag == TAG_HELLO || tag >= RESERVED_TAG_BASE {
            return Err(CommError::ReservedTag(tag));
        }
        Ok(())
    }

    /// Sends `values` to `dest`. Tags 0 and `>= RESERVED_TAG_BASE` are reserved.
    pub fn send<W: WireElement>(
        &self,
        dest: usize,
        tag: u32,
        values: &[W],
    ) -> Result<(), CommError> {
        Self::check_user_tag(tag)?;
        self.send_tagged(dest, tag, values.to_vec())
    }

    /// Receives the next array sent by `source` with `tag`.
    pub fn recv<W: WireElement>(&self, source: usize, tag: u32) -> Result<Vec<W>, CommError> {
        Self::check_user_tag(tag)?;
        self.recv_tagged(source, tag)
    }

    pub(crate) fn send_tagged<W: WireElement>(
        &self,
        dest: usize,
        tag: u32,
        values: Vec<W>,
    ) -> Result<(), CommError> {
        self.check_peer(dest)?;
        let payload = W::wrap(values);
        let bytes = payload.byte_len() as u64;
        self.transport.send(
            dest,
            Frame {
                tag,
                source: self.rank as u32,
                payload,
            },
        )?;
        self.bump(|s| {
            s.messages_sent += 1;
            s.bytes_sent += bytes;
        });
        Ok(())
    }

    pub(crate) fn recv_tagged<W: WireElement>(
        &self,
        source: usize,
        tag: u32,
    ) -> Result<Vec<W>, CommError> {
        self.check_peer(source)?;
        let payload = self.mailbox.recv(source, tag, self.config.timeout)?;
        W::unwrap(payload).map_err(|p| CommError::TypeMismatch {
            peer: source,
            expected: W::ELEM,
            got: p.elem_type(),
        })
    }

    /// Tells every peer to fail its pending and future receives.
    pub fn abort(&self) {
        for peer in (0..self.size).filter(|&r| r != self.rank) {
            let _ = self.transport.send(
                peer,
                Frame {
                    tag: TAG_ABORT,
                    source: self.rank as u32,
                    payload: Payload::U8(Vec::new()),
                },
            );
        }
    }
}

/// Routes one incoming frame into a mailbox, honoring abort frames.
pub(crate) fn dispatch(mailbox: &Mailbox, frame: Frame) {
    let source = frame.source as usize;
    if frame.tag == TAG_ABORT {
        mailbox.abort(source);
    } else {
        mailbox.deliver(source, frame.tag, frame.payload);
    }
}
