//! TCP transport with a rank-0 rendezvous.
//!
//! Rank 0 listens on a known address. Every other rank binds its own
//! listener, connects to rank 0 and sends a HELLO frame (tag 0) carrying its
//! listener address; rank 0 replies with the full address table. Ranks then
//! build a full mesh: rank `j` dials every rank `0 < i < j` and identifies
//! itself with another HELLO. One reader thread per connection feeds the
//! local mailbox.

use std::io::{self, ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::mailbox::Mailbox;
use super::wire::{Frame, Payload};
use super::{dispatch, CommConfig, CommError, Communicator, Transport, TransportKind, TAG_HELLO};

struct TcpTransport {
    streams: Vec<Option<TcpStream>>,
}

impl Transport for TcpTransport {
    fn send(&self, dest: usize, frame: Frame) -> Result<(), CommError> {
        let stream = self.streams[dest]
            .as_ref()
            .ok_or(CommError::PeerDisconnected { rank: dest })?;
        let mut w: &TcpStream = stream;
        w.write_all(&frame.encode()).map_err(|e| match e.kind() {
            ErrorKind::BrokenPipe
            | ErrorKind::ConnectionReset
            | ErrorKind::ConnectionAborted
            | ErrorKind::NotConnected => CommError::PeerDisconnected { rank: dest },
            _ => CommError::Io(e),
        })
    }

    fn kind(&self) -> TransportKind {
        TransportKind::Tcp
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        for s in self.streams.iter().flatten() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

fn hello(source: usize, payload: Vec<u8>) -> Frame {
    Frame {
        tag: TAG_HELLO,
        source: source as u32,
        payload: Payload::U8(payload),
    }
}

fn write_frame(stream: &TcpStream, frame: &Frame) -> Result<(), CommError> {
    let mut w: &TcpStream = stream;
    w.write_all(&frame.encode())?;
    Ok(())
}

fn read_hello(stream: &TcpStream) -> Result<(usize, Vec<u8>), CommError> {
    let mut r: &TcpStream = stream;
    match Frame::read_from(&mut r)? {
        Some(Frame {
            tag: TAG_HELLO,
            source,
            payload: Payload::U8(bytes),
        }) => Ok((source as usize, bytes)),
        Some(f) => Err(CommError::Rendezvous(format!(
            "expected HELLO, got tag {:#x} from {}",
            f.tag, f.source
        ))),
        None => Err(CommError::Rendezvous(
            "connection closed during handshake".into(),
        )),
    }
}

fn accept_until(listener: &TcpListener, deadline: Instant) -> Result<TcpStream, CommError> {
    listener.set_nonblocking(true)?;
    loop {
        match listener.accept() {
            Ok((s, _)) => {
                s.set_nonblocking(false)?;
                return Ok(s);
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(CommError::Rendezvous("timed out waiting for peers".into()));
                }
                thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

fn connect_until(addr: SocketAddr, deadline: Instant) -> Result<TcpStream, CommError> {
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() < deadline && is_retryable(&e) => {
                thread::sleep(Duration::from_millis(20));
            }
            Err(e) => {
                return Err(CommError::Rendezvous(format!("cannot reach {addr}: {e}")));
            }
        }
    }
}

fn is_retryable(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        ErrorKind::ConnectionRefused | ErrorKind::ConnectionReset | ErrorKind::TimedOut
    )
}

fn prepare(stream: &TcpStream, timeout: Duration) -> io::Result<()> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(timeout))
}

fn finish(
    rank: usize,
    size: usize,
    streams: Vec<Option<TcpStream>>,
    config: CommConfig,
) -> Result<Communicator, CommError> {
    let mailbox = Arc::new(Mailbox::new(size));
    for (peer, s) in streams.iter().enumerate() {
        let Some(s) = s else { continue };
        s.set_read_timeout(None)?;
        let mut reader = s.try_clone()?;
        let mb = Arc::clone(&mailbox);
        thread::Builder::new()
            .name(format!("rank-{rank}-rx-{peer}"))
            .spawn(move || {
                while let Ok(Some(frame)) = Frame::read_from(&mut reader) {
                    dispatch(&mb, frame);
                }
                mb.disconnect(peer);
            })?;
    }
    Ok(Communicator::from_parts(
        rank,
        size,
        Box::new(TcpTransport { streams }),
        mailbox,
        config,
    ))
}

/// Rank 0 side of the rendezvous on an already-bound listener.
pub fn accept_peers(
    listener: TcpListener,
    size: usize,
    config: CommConfig,
) -> Result<Communicator, CommError> {
    let deadline = Instant::now() + config.timeout;
    let mut streams: Vec<Option<TcpStream>> = (0..size).map(|_| None).collect();
    let mut table = vec![listener.local_addr()?.to_string(); size];
    for _ in 1..size {
        let s = accept_until(&listener, deadline)?;
        prepare(&s, config.timeout)?;
        let (peer, addr) = read_hello(&s)?;
        if peer == 0 || peer >= size || streams[peer].is_some() {
            return Err(CommError::Rendezvous(format!(
                "unexpected HELLO from rank {peer}"
            )));
        }
        table[peer] = String::from_utf8(addr)
            .map_err(|_| CommError::Rendezvous(format!("rank {peer} sent a non-UTF-8 address")))?;
        streams[peer] = Some(s);
    }
    let encoded = table.join("\n").into_bytes();
    for s in streams.iter().flatten() {
        write_frame(s, &hello(0, encoded.clone()))?;
    }
    finish(0, size, streams, config)
}

/// Non-root side of the rendezvous.
pub fn connect_peer(
    rank: usize,
    size: usize,
    root: SocketAddr,
    config: CommConfig,
) -> Result<Communicator, CommError> {
    if rank == 0 || rank >= size {
        return Err(CommError::InvalidRank { rank, size });
    }
    let deadline = Instant::now() + config.timeout;
    let root_stream = connect_until(root, deadline)?;
    prepare(&root_stream, config.timeout)?;
    let listener = TcpListener::bind((root_stream.local_addr()?.ip(), 0))?;
    let my_addr = listener.local_addr()?.to_string();
    write_frame(&root_stream, &hello(rank, my_addr.into_bytes()))?;

    let (from, table) = read_hello(&root_stream)?;
    if from != 0 {
        return Err(CommError::Rendezvous(format!(
            "address table came from rank {from}"
        )));
    }
    let table = String::from_utf8(table)
        .map_err(|_| CommError::Rendezvous("address table is not UTF-8".into()))?;
    let addrs: Vec<&str> = table.split('\n').collect();
    if addrs.len() != size {
        return Err(CommError::Rendezvous(format!(
            "address table has {} entries for a group of {size}",
            addrs.len()
        )));
    }

    let mut streams: Vec<Option<TcpStream>> = (0..size).map(|_| None).collect();
    streams[0] = Some(root_stream);
    for (peer, addr) in addrs.iter().enumerate().take(rank).skip(1) {
        let addr: SocketAddr = addr
            .parse()
            .map_err(|_| CommError::Rendezvous(format!("bad address for rank {peer}: {addr}")))?;
        let s = connect_until(addr, deadline)?;
        prepare(&s, config.timeout)?;
        write_frame(&s, &hello(rank, Vec::new()))?;
        streams[peer] = Some(s);
    }
    for _ in rank + 1..size {
        let s = accept_until(&listener, deadline)?;
        prepare(&s, config.timeout)?;
        let (peer, _) = read_hello(&s)?;
        if peer <= rank || peer >= size || streams[peer].is_some() {
            return Err(CommError::Rendezvous(format!(
                "unexpected HELLO from rank {peer}"
            )));
        }
        streams[peer] = Some(s);
    }
    finish(rank, size, streams, config)
}

/// Joins a group: rank 0 listens on `rendezvous`, other ranks dial it.
pub fn join(
    rank: usize,
    size: usize,
    rendezvous: &str,
    config: CommConfig,
) -> Result<Communicator, CommError> {
    let addr = rendezvous
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| CommError::Rendezvous(format!("cannot resolve {rendezvous}")))?;
    if rank == 0 {
        let listener = TcpListener::bind(addr)?;
        accept_peers(listener, size, config)
    } else {
        connect_peer(rank, size, addr, config)
    }
}

/// Runs `size` ranks as threads of this process, connected through real
/// loopback sockets.
pub fn launch_local<R, F>(size: usize, config: CommConfig, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(Communicator) -> R + Sync,
{
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback rendezvous");
    let root = listener.local_addr().expect("listener address");
    let mut listener = Some(listener);
    let f = &f;
    let joined: Vec<thread::Result<R>> = thread::scope(|s| {
        let handles: Vec<_> = (0..size)
            .map(|rank| {
                let l = if rank == 0 { listener.take() } else { None };
                s.spawn(move || {
                    let comm = match l {
                        Some(l) => accept_peers(l, size, config),
                        None => connect_peer(rank, size, root, config),
                    }
                    .unwrap_or_else(|e| panic!("rank {rank} rendezvous: {e}"));
                    f(comm)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join()).collect()
    });
    joined
        .into_iter()
        .map(|r| r.unwrap_or_else(|e| std::panic::resume_unwind(e)))
        .collect()
}
