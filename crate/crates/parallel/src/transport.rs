//! Point-to-point message transports between slab workers.
//!
//! Two implementations share one message schema: in-process channels and
//! loopback TCP. On the wire a message is a 16-byte header of four
//! little-endian `u32` (sender, iteration, kind, payload bytes) followed by
//! the payload as little-endian `f64`.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

pub const HEADER_BYTES: usize = 16;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("worker {worker}: no message from worker {from} within {timeout:?}")]
    Timeout { worker: usize, from: usize, timeout: Duration },
    #[error("worker {worker}: peer {from} disconnected")]
    Disconnected { worker: usize, from: usize },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("socket error: {0}")]
    Io(#[from] std::io::Error),
}

/// What a message carries; encoded in the header's third word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    /// Sender's last plane, for the receiver's lower halo.
    HaloLower,
    /// Sender's first plane, for the receiver's upper halo.
    HaloUpper,
    /// Per-slice scalars on their way to the root.
    Gather,
    /// The concatenated scalars from the root.
    Broadcast,
}

impl MessageKind {
    fn code(self) -> u32 {
        match self {
            Self::HaloLower => 0,
            Self::HaloUpper => 1,
            Self::Gather => 2,
            Self::Broadcast => 3,
        }
    }

    fn from_code(c: u32) -> Result<Self, TransportError> {
        Ok(match c {
            0 => Self::HaloLower,
            1 => Self::HaloUpper,
            2 => Self::Gather,
            3 => Self::Broadcast,
            _ => return Err(TransportError::Protocol(format!("unknown message kind {c}"))),
        })
    }

    pub fn is_halo(self) -> bool {
        matches!(self, Self::HaloLower | Self::HaloUpper)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub from: usize,
    pub iteration: usize,
    pub kind: MessageKind,
    pub payload: Vec<f64>,
}

impl Message {
    pub fn encode(&self) -> Result<Vec<u8>, TransportError> {
        let bytes = self.payload.len() * 8;
        let word = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| TransportError::Protocol(format!("{what} {v} does not fit the header")))
        };
        let mut out = Vec::with_capacity(HEADER_BYTES + bytes);
        out.extend(word(self.from, "worker id")?.to_le_bytes());
        out.extend(word(self.iteration, "iteration")?.to_le_bytes());
        out.extend(self.kind.code().to_le_bytes());
        out.extend(word(bytes, "payload length")?.to_le_bytes());
        for v in &self.payload {
            out.extend(v.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses a header; returns the message with an empty payload and the
    /// payload length in bytes.
    pub fn decode_header(h: &[u8; HEADER_BYTES]) -> Result<(Message, usize), TransportError> {
        let word = |i: usize| u32::from_le_bytes(h[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let bytes = word(3);
        if bytes % 8 != 0 {
            return Err(TransportError::Protocol(format!("payload of {bytes} bytes is not a whole number of f64")));
        }
        let msg = Message {
            from: word(0),
            iteration: word(1),
            kind: MessageKind::from_code(word(2) as u32)?,
            payload: Vec::new(),
        };
        Ok((msg, bytes))
    }

    pub fn decode(buf: &[u8]) -> Result<Message, TransportError> {
        if buf.len() < HEADER_BYTES {
            return Err(TransportError::Protocol(format!("{} bytes is shorter than a header", buf.len())));
        }
        let (mut msg, bytes) = Self::decode_header(buf[..HEADER_BYTES].try_into().unwrap())?;
        if buf.len() != HEADER_BYTES + bytes {
            return Err(TransportError::Protocol(format!(
                "header announces {bytes} payload bytes, frame has {}",
                buf.len() - HEADER_BYTES
            )));
        }
        msg.payload = decode_payload(&buf[HEADER_BYTES..]);
        Ok(msg)
    }
}

fn decode_payload(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

/// Message counters shared by all endpoints of one run.
#[derive(Debug, Default)]
pub struct TransportStats {
    inner: Mutex<StatsInner>,
}

#[derive(Debug, Default, Clone)]
struct StatsInner {
    by_kind: BTreeMap<MessageKind, (u64, u64)>,
    halo_by_iteration: BTreeMap<usize, u64>,
}

impl TransportStats {
    fn record(&self, msg: &Message) {
        let mut s = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let e = s.by_kind.entry(msg.kind).or_default();
        e.0 += 1;
        e.1 += (msg.payload.len() * 8) as u64;
        if msg.kind.is_halo() {
            *s.halo_by_iteration.entry(msg.iteration).or_default() += 1;
        }
    }

    pub fn messages(&self, kind: MessageKind) -> u64 {
        self.inner.lock().unwrap().by_kind.get(&kind).map_or(0, |e| e.0)
    }

    pub fn bytes(&self, kind: MessageKind) -> u64 {
        self.inner.lock().unwrap().by_kind.get(&kind).map_or(0, |e| e.1)
    }

    pub fn total_messages(&self) -> u64 {
        self.inner.lock().unwrap().by_kind.values().map(|e| e.0).sum()
    }

    pub fn halo_messages(&self) -> u64 {
        self.messages(MessageKind::HaloLower) + self.messages(MessageKind::HaloUpper)
    }

    /// Collective (gather + broadcast) messages.
    pub fn reduction_messages(&self) -> u64 {
        self.messages(MessageKind::Gather) + self.messages(MessageKind::Broadcast)
    }

    /// Halo messages sent per iteration tag.
    pub fn halo_by_iteration(&self) -> BTreeMap<usize, u64> {
        self.inner.lock().unwrap().halo_by_iteration.clone()
    }
}

/// One worker's view of the transport.
pub trait Endpoint: Send {
    fn worker(&self) -> usize;
    fn workers(&self) -> usize;
    fn send(&mut self, to: usize, msg: Message) -> Result<(), TransportError>;
    /// Next message from `from`, waiting at most the endpoint's timeout.
    fn recv(&mut self, from: usize) -> Result<Message, TransportError>;
    fn stats(&self) -> &Arc<TransportStats>;
}

pub struct ChannelEndpoint {
    worker: usize,
    senders: Vec<Option<Sender<Message>>>,
    receivers: Vec<Option<Receiver<Message>>>,
    timeout: Duration,
    stats: Arc<TransportStats>,
}

/// Fully connected in-process channels, one endpoint per worker.
pub fn channel_mesh(workers: usize, timeout: Duration) -> Vec<ChannelEndpoint> {
    let stats = Arc::new(TransportStats::default());
    let mut senders: Vec<Vec<Option<Sender<Message>>>> = (0..workers).map(|_| (0..workers).map(|_| None).collect()).collect();
    let mut receivers: Vec<Vec<Option<Receiver<Message>>>> = (0..workers).map(|_| (0..workers).map(|_| None).collect()).collect();
    for from in 0..workers {
        for to in 0..workers {
            if from != to {
                let (tx, rx) = mpsc::channel();
                senders[from][to] = Some(tx);
                receivers[to][from] = Some(rx);
            }
        }
    }
    senders
        .into_iter()
        .zip(receivers)
        .enumerate()
        .map(|(worker, (senders, receivers))| ChannelEndpoint {
            worker,
            senders,
            receivers,
            timeout,
            stats: Arc::clone(&stats),
        })
        .collect()
}

impl Endpoint for ChannelEndpoint {
    fn worker(&self) -> usize {
        self.worker
    }

    fn workers(&self) -> usize {
        self.senders.len()
    }

    fn send(&mut self, to: usize, msg: Message) -> Result<(), TransportError> {
        let tx = self
            .senders
            .get(to)
            .and_then(Option::as_ref)
            .ok_or_else(|| TransportError::Protocol(format!("worker {} has no link to {to}", self.worker)))?;
        self.stats.record(&msg);
        tx.send(msg).map_err(|_| TransportError::Disconnected {
            worker: self.worker,
            from: to,
        })
    }

    fn recv(&mut self, from: usize) -> Result<Message, TransportError> {
        let rx = self
            .receivers
            .get(from)
            .and_then(Option::as_ref)
            .ok_or_else(|| TransportError::Protocol(format!("worker {} has no link from {from}", self.worker)))?;
        rx.recv_timeout(self.timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => TransportError::Timeout {
                worker: self.worker,
                from,
                timeout: self.timeout,
            },
            RecvTimeoutError::Disconnected => TransportError::Disconnected { worker: self.worker, from },
        })
    }

    fn stats(&self) -> &Arc<TransportStats> {
        &self.stats
    }
}

pub struct TcpEndpoint {
    worker: usize,
    workers: usize,
    streams: HashMap<usize, TcpStream>,
    timeout: Duration,
    stats: Arc<TransportStats>,
}

/// Fully connected loopback sockets. Every pair `i < j` shares one stream,
/// opened by `j` towards `i`'s listener; the connector announces itself with
/// a 4-byte id.
pub fn tcp_mesh(workers: usize, timeout: Duration) -> Result<Vec<TcpEndpoint>, TransportError> {
    let stats = Arc::new(TransportStats::default());
    let listeners: Vec<TcpListener> = (0..workers)
        .map(|_| TcpListener::bind(("127.0.0.1", 0)))
        .collect::<std::io::Result<_>>()?;
    let addrs: Vec<_> = listeners.iter().map(|l| l.local_addr()).collect::<std::io::Result<_>>()?;
    let mut streams: Vec<HashMap<usize, TcpStream>> = (0..workers).map(|_| HashMap::new()).collect();
    for j in 0..workers {
        for (i, addr) in addrs.iter().enumerate().take(j) {
            let mut s = TcpStream::connect(addr)?;
            s.write_all(&(j as u32).to_le_bytes())?;
            streams[j].insert(i, s);
        }
    }
    for (i, l) in listeners.iter().enumerate() {
        for _ in i + 1..workers {
            let (mut s, _) = l.accept()?;
            let mut id = [0u8; 4];
            s.read_exact(&mut id)?;
            let j = u32::from_le_bytes(id) as usize;
            if j <= i || j >= workers || streams[i].contains_key(&j) {
                return Err(TransportError::Protocol(format!("unexpected peer id {j} at worker {i}")));
            }
            streams[i].insert(j, s);
        }
    }
    streams
        .into_iter()
        .enumerate()
        .map(|(worker, streams)| {
            for s in streams.values() {
                s.set_nodelay(true)?;
                s.set_read_timeout(Some(timeout))?;
            }
            Ok(TcpEndpoint {
                worker,
                workers,
                streams,
                timeout,
                stats: Arc::clone(&stats),
            })
        })
        .collect()
}

impl TcpEndpoint {
    fn stream(&mut self, peer: usize) -> Result<&mut TcpStream, TransportError> {
        let w = self.worker;
        self.streams
            .get_mut(&peer)
            .ok_or_else(|| TransportError::Protocol(format!("worker {w} has no socket to {peer}")))
    }

    fn map_read(&self, from: usize, e: std::io::Error) -> TransportError {
        use std::io::ErrorKind::*;
        match e.kind() {
            WouldBlock | TimedOut => TransportError::Timeout {
                worker: self.worker,
                from,
                timeout: self.timeout,
            },
            UnexpectedEof | ConnectionReset | ConnectionAborted => TransportError::Disconnected { worker: self.worker, from },
            _ => TransportError::Io(e),
        }
    }
}

impl Endpoint for TcpEndpoint {
    fn worker(&self) -> usize {
        self.worker
    }

    fn workers(&self) -> usize {
        self.workers
    }

    fn send(&mut self, to: usize, msg: Message) -> Result<(), TransportError> {
        let frame = msg.encode()?;
        self.stats.record(&msg);
        self.stream(to)?.write_all(&frame)?;
        Ok(())
    }

    fn recv(&mut self, from: usize) -> Result<Message, TransportError> {
        let mut header = [0u8; HEADER_BYTES];
        let r = self.stream(from)?.read_exact(&mut header);
        r.map_err(|e| self.map_read(from, e))?;
        let (mut msg, bytes) = Message::decode_header(&header)?;
        let mut payload = vec![0u8; bytes];
        let r = self.stream(from)?.read_exact(&mut payload);
        r.map_err(|e| self.map_read(from, e))?;
        msg.payload = decode_payload(&payload);
        if msg.from != from {
            return Err(TransportError::Protocol(format!(
                "socket of worker {from} delivered a message signed by {}",
                msg.from
            )));
        }
        Ok(msg)
    }

    fn stats(&self) -> &Arc<TransportStats> {
        &self.stats
    }
}

impl Drop for TcpEndpoint {
    fn drop(&mut self) {
        for s in self.streams.values() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}
