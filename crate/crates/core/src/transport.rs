//! Message fabric between parties with round and byte metering.
//!
//! Two implementations share the [`Transport`] trait: an in-process network of
//! FIFO channels (one endpoint per party thread) and a TCP mesh with
//! length-prefixed framing.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numeric::FieldElement;

pub type PartyId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("session closed")]
    Closed,
    #[error("peer {0} disconnected")]
    Disconnected(PartyId),
    #[error("timed out waiting for peer {0}")]
    Timeout(PartyId),
    #[error("invalid peer {0}")]
    InvalidPeer(PartyId),
    #[error("io error: {0}")]
    Io(String),
    #[error("protocol desynchronised with peer {peer}: {detail}")]
    Desync { peer: PartyId, detail: String },
    #[error("invalid session configuration: {0}")]
    Config(String),
}

impl From<std::io::Error> for TransportError {
    fn from(e: std::io::Error) -> Self {
        TransportError::Io(e.to_string())
    }
}

/// Counters for one session. `bytes_sent[i][j]` counts payload bytes from
/// party `i` to party `j`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChannelMetrics {
    pub rounds: u64,
    pub bytes_sent: Vec<Vec<u64>>,
    pub messages: Vec<Vec<u64>>,
    /// SHA-256 of every payload per ordered pair, when recording is enabled.
    pub transcript: Option<Vec<Vec<[u8; 32]>>>,
}

impl ChannelMetrics {
    pub fn new(parties: usize) -> Self {
        ChannelMetrics {
            rounds: 0,
            bytes_sent: vec![vec![0; parties]; parties],
            messages: vec![vec![0; parties]; parties],
            transcript: None,
        }
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes_sent.iter().flatten().sum()
    }

    pub fn total_messages(&self) -> u64 {
        self.messages.iter().flatten().sum()
    }

    /// Counter differences `self - earlier`.
    pub fn since(&self, earlier: &ChannelMetrics) -> ChannelMetrics {
        let diff = |a: &Vec<Vec<u64>>, b: &Vec<Vec<u64>>| {
            a.iter()
                .zip(b)
                .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x - y).collect())
                .collect()
        };
        ChannelMetrics {
            rounds: self.rounds - earlier.rounds,
            bytes_sent: diff(&self.bytes_sent, &earlier.bytes_sent),
            messages: diff(&self.messages, &earlier.messages),
            transcript: None,
        }
    }
}

/// Running counters plus optional per-pair hash state.
struct Meter {
    metrics: ChannelMetrics,
    hashers: Option<Vec<Vec<Sha256>>>,
}

impl Meter {
    fn new(parties: usize, record_transcript: bool) -> Self {
        let hashers = record_transcript.then(|| vec![vec![Sha256::new(); parties]; parties]);
        Meter { metrics: ChannelMetrics::new(parties), hashers }
    }

    fn record(&mut self, from: PartyId, to: PartyId, payload: &[u8]) {
        self.metrics.bytes_sent[from][to] += payload.len() as u64;
        self.metrics.messages[from][to] += 1;
        if let Some(h) = self.hashers.as_mut() {
            h[from][to].update((payload.len() as u64).to_le_bytes());
            h[from][to].update(payload);
        }
    }

    fn snapshot(&self) -> ChannelMetrics {
        let mut m = self.metrics.clone();
        m.transcript = self.hashers.as_ref().map(|hs| {
            hs.iter()
                .map(|row| row.iter().map(|h| h.clone().finalize().into()).collect())
                .collect()
        });
        m
    }
}

pub trait Transport: Send {
    fn party(&self) -> PartyId;
    fn parties(&self) -> usize;
    fn send(&mut self, to: PartyId, payload: Vec<u8>) -> Result<(), TransportError>;
    fn receive(&mut self, from: PartyId) -> Result<Vec<u8>, TransportError>;
    /// Every party calls this between communication rounds.
    fn round_barrier(&mut self) -> Result<(), TransportError>;
    fn metrics_snapshot(&self) -> ChannelMetrics;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransportMode {
    InProcess,
    Socket,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionConfig {
    pub parties: usize,
    pub mode: TransportMode,
    pub endpoints: Vec<String>,
    pub seed: u64,
    pub record_transcript: bool,
}

impl SessionConfig {
    pub fn in_process(parties: usize, seed: u64) -> Self {
        SessionConfig { parties, mode: TransportMode::InProcess, endpoints: Vec::new(), seed, record_transcript: false }
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        if self.parties < 3 {
            return Err(TransportError::Config(format!("need at least 3 parties, got {}", self.parties)));
        }
        if self.mode == TransportMode::Socket && self.endpoints.len() != self.parties {
            return Err(TransportError::Config(format!(
                "{} endpoints for {} parties",
                self.endpoints.len(),
                self.parties
            )));
        }
        Ok(())
    }
}

struct BarrierState {
    arrived: usize,
    generation: u64,
    aborted: bool,
}

struct SharedBarrier {
    state: Mutex<BarrierState>,
    cv: Condvar,
}

/// Read-only view of an in-process network's shared counters.
#[derive(Clone)]
pub struct MetricsHandle(Arc<Mutex<Meter>>);

impl MetricsHandle {
    pub fn snapshot(&self) -> ChannelMetrics {
        self.0.lock().unwrap().snapshot()
    }
}

/// One party's handle on an in-process network.
pub struct InProcessEndpoint {
    id: PartyId,
    parties: usize,
    senders: Vec<Option<Sender<Vec<u8>>>>,
    receivers: Vec<Option<Receiver<Vec<u8>>>>,
    barrier: Arc<SharedBarrier>,
    meter: Arc<Mutex<Meter>>,
}

/// Builds `parties` connected endpoints sharing one metrics collector.
pub fn in_process_network(parties: usize, record_transcript: bool) -> Vec<InProcessEndpoint> {
    let meter = Arc::new(Mutex::new(Meter::new(parties, record_transcript)));
    let barrier = Arc::new(SharedBarrier {
        state: Mutex::new(BarrierState { arrived: 0, generation: 0, aborted: false }),
        cv: Condvar::new(),
    });
    let mut senders: Vec<Vec<Option<Sender<Vec<u8>>>>> = (0..parties).map(|_| vec![None; parties]).collect();
    let mut receivers: Vec<Vec<Option<Receiver<Vec<u8>>>>> =
        (0..parties).map(|_| (0..parties).map(|_| None).collect()).collect();
    for from in 0..parties {
        for to in 0..parties {
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
        .map(|(id, (s, r))| InProcessEndpoint {
            id,
            parties,
            senders: s,
            receivers: r,
            barrier: barrier.clone(),
            meter: meter.clone(),
        })
        .collect()
}

impl InProcessEndpoint {
    pub fn metrics_handle(&self) -> MetricsHandle {
        MetricsHandle(self.meter.clone())
    }
}

impl Transport for InProcessEndpoint {
    fn party(&self) -> PartyId {
        self.id
    }

    fn parties(&self) -> usize {
        self.parties
    }

    fn send(&mut self, to: PartyId, payload: Vec<u8>) -> Result<(), TransportError> {
        let tx = self.senders.get(to).and_then(|s| s.as_ref()).ok_or(TransportError::InvalidPeer(to))?;
        self.meter.lock().unwrap().record(self.id, to, &payload);
        tx.send(payload).map_err(|_| TransportError::Disconnected(to))
    }

    fn receive(&mut self, from: PartyId) -> Result<Vec<u8>, TransportError> {
        let rx = self.receivers.get(from).and_then(|r| r.as_ref()).ok_or(TransportError::InvalidPeer(from))?;
        rx.recv().map_err(|_| TransportError::Disconnected(from))
    }

    fn round_barrier(&mut self) -> Result<(), TransportError> {
        let mut st = self.barrier.state.lock().unwrap();
        if st.aborted {
            return Err(TransportError::Closed);
        }
        let generation = st.generation;
        st.arrived += 1;
        if st.arrived == self.parties {
            st.arrived = 0;
            st.generation += 1;
            self.meter.lock().unwrap().metrics.rounds += 1;
            self.barrier.cv.notify_all();
            return Ok(());
        }
        while st.generation == generation {
            if st.aborted {
                return Err(TransportError::Closed);
            }
            st = self.barrier.cv.wait(st).unwrap();
        }
        Ok(())
    }

    fn metrics_snapshot(&self) -> ChannelMetrics {
        self.meter.lock().unwrap().snapshot()
    }
}

impl Drop for InProcessEndpoint {
    fn drop(&mut self) {
        // wake anyone stuck at a barrier this party will never reach
        if let Ok(mut st) = self.barrier.state.lock() {
            st.aborted = true;
            self.barrier.cv.notify_all();
        }
    }
}

const BARRIER_FRAME: u32 = u32::MAX;

enum Frame {
    Data(Vec<u8>),
    Barrier,
}

/// One party of a TCP mesh. Each peer gets a dedicated reader thread so that
/// large simultaneous sends cannot deadlock on full socket buffers.
pub struct TcpTransport {
    id: PartyId,
    parties: usize,
    writers: Vec<Option<BufWriter<TcpStream>>>,
    inbox: Vec<Option<Receiver<Result<Frame, TransportError>>>>,
    timeout: Duration,
    meter: Meter,
}

impl TcpTransport {
    /// Binds `endpoints[party]` and connects to every other endpoint.
    pub fn connect(party: PartyId, endpoints: &[String], timeout: Duration) -> Result<Self, TransportError> {
        let addr = endpoints.get(party).ok_or(TransportError::InvalidPeer(party))?;
        let listener = TcpListener::bind(addr.as_str())?;
        Self::from_listener(party, listener, endpoints, timeout)
    }

    /// Like [`TcpTransport::connect`] with a pre-bound listener (useful with port 0).
    pub fn from_listener(
        party: PartyId,
        listener: TcpListener,
        endpoints: &[String],
        timeout: Duration,
    ) -> Result<Self, TransportError> {
        let parties = endpoints.len();
        if party >= parties {
            return Err(TransportError::InvalidPeer(party));
        }
        let mut streams: Vec<Option<TcpStream>> = (0..parties).map(|_| None).collect();
        let deadline = Instant::now() + timeout;
        // dial lower ids, accept higher ids
        for (peer, ep) in endpoints.iter().enumerate().take(party) {
            let addr = resolve(ep)?;
            let mut stream = loop {
                match TcpStream::connect_timeout(&addr, Duration::from_millis(500)) {
                    Ok(s) => break s,
                    Err(e) if Instant::now() < deadline => {
                        let _ = e;
                        thread::sleep(Duration::from_millis(50));
                    }
                    Err(_) => return Err(TransportError::Timeout(peer)),
                }
            };
            stream.write_all(&(party as u32).to_be_bytes())?;
            streams[peer] = Some(stream);
        }
        listener.set_nonblocking(true)?;
        let mut pending = parties - party - 1;
        while pending > 0 {
            match listener.accept() {
                Ok((mut stream, _)) => {
                    stream.set_nonblocking(false)?;
                    stream.set_read_timeout(Some(timeout))?;
                    let mut id = [0u8; 4];
                    stream.read_exact(&mut id)?;
                    stream.set_read_timeout(None)?;
                    let peer = u32::from_be_bytes(id) as usize;
                    if peer <= party || peer >= parties || streams[peer].is_some() {
                        return Err(TransportError::InvalidPeer(peer));
                    }
                    streams[peer] = Some(stream);
                    pending -= 1;
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        let missing = (party + 1..parties).find(|&p| streams[p].is_none()).unwrap_or(party);
                        return Err(TransportError::Timeout(missing));
                    }
                    thread::sleep(Duration::from_millis(10));
                }
                Err(e) => return Err(e.into()),
            }
        }

        let mut writers: Vec<Option<BufWriter<TcpStream>>> = (0..parties).map(|_| None).collect();
        let mut inbox: Vec<Option<Receiver<Result<Frame, TransportError>>>> = (0..parties).map(|_| None).collect();
        for (peer, slot) in streams.into_iter().enumerate() {
            let Some(stream) = slot else { continue };
            stream.set_nodelay(true)?;
            let reader = stream.try_clone()?;
            let (tx, rx) = mpsc::channel();
            thread::spawn(move || read_frames(peer, reader, tx));
            writers[peer] = Some(BufWriter::new(stream));
            inbox[peer] = Some(rx);
        }
        Ok(TcpTransport { id: party, parties, writers, inbox, timeout, meter: Meter::new(parties, false) })
    }

    pub fn record_transcript(&mut self) {
        self.meter.hashers = Some(vec![vec![Sha256::new(); self.parties]; self.parties]);
    }

    fn write_frame(&mut self, to: PartyId, header: u32, payload: &[u8]) -> Result<(), TransportError> {
        let w = self.writers.get_mut(to).and_then(|w| w.as_mut()).ok_or(TransportError::InvalidPeer(to))?;
        w.write_all(&header.to_be_bytes())
            .and_then(|_| w.write_all(payload))
            .and_then(|_| w.flush())
            .map_err(|_| TransportError::Disconnected(to))
    }

    fn next_frame(&mut self, from: PartyId) -> Result<Frame, TransportError> {
        let rx = self.inbox.get(from).and_then(|r| r.as_ref()).ok_or(TransportError::InvalidPeer(from))?;
        match rx.recv_timeout(self.timeout) {
            Ok(frame) => frame,
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout(from)),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Disconnected(from)),
        }
    }
}

fn resolve(ep: &str) -> Result<SocketAddr, TransportError> {
    ep.to_socket_addrs()?
        .next()
        .ok_or_else(|| TransportError::Config(format!("cannot resolve endpoint `{ep}`")))
}

fn read_frames(peer: PartyId, stream: TcpStream, tx: Sender<Result<Frame, TransportError>>) {
    let mut r = BufReader::new(stream);
    loop {
        let mut len = [0u8; 4];
        if r.read_exact(&mut len).is_err() {
            let _ = tx.send(Err(TransportError::Disconnected(peer)));
            return;
        }
        let len = u32::from_be_bytes(len);
        let frame = if len == BARRIER_FRAME {
            Frame::Barrier
        } else {
            let mut buf = vec![0u8; len as usize];
            if r.read_exact(&mut buf).is_err() {
                let _ = tx.send(Err(TransportError::Disconnected(peer)));
                return;
            }
            Frame::Data(buf)
        };
        if tx.send(Ok(frame)).is_err() {
            return;
        }
    }
}

impl Transport for TcpTransport {
    fn party(&self) -> PartyId {
        self.id
    }

    fn parties(&self) -> usize {
        self.parties
    }

    fn send(&mut self, to: PartyId, payload: Vec<u8>) -> Result<(), TransportError> {
        if payload.len() >= BARRIER_FRAME as usize {
            return Err(TransportError::Io("payload too large for one frame".into()));
        }
        self.write_frame(to, payload.len() as u32, &payload)?;
        self.meter.record(self.id, to, &payload);
        Ok(())
    }

    fn receive(&mut self, from: PartyId) -> Result<Vec<u8>, TransportError> {
        match self.next_frame(from)? {
            Frame::Data(d) => Ok(d),
            Frame::Barrier => Err(TransportError::Desync { peer: from, detail: "barrier where data expected".into() }),
        }
    }

    fn round_barrier(&mut self) -> Result<(), TransportError> {
        for peer in 0..self.parties {
            if peer != self.id {
                self.write_frame(peer, BARRIER_FRAME, &[])?;
            }
        }
        for peer in 0..self.parties {
            if peer != self.id {
                match self.next_frame(peer)? {
                    Frame::Barrier => {}
                    Frame::Data(_) => {
                        return Err(TransportError::Desync { peer, detail: "data where barrier expected".into() })
                    }
                }
            }
        }
        self.meter.metrics.rounds += 1;
        Ok(())
    }

    fn metrics_snapshot(&self) -> ChannelMetrics {
        self.meter.snapshot()
    }
}

/// Serialises residues as 16-byte little-endian words.
pub fn encode_elements(values: &[FieldElement]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 16);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_elements(bytes: &[u8]) -> Result<Vec<FieldElement>, TransportError> {
    if bytes.len() % 16 != 0 {
        return Err(TransportError::Io(format!("payload length {} is not a multiple of 16", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| FieldElement::from_le_bytes(c.try_into().expect("chunk of 16")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loopback_fifo_and_bytes() {
        let mut eps = in_process_network(3, false);
        let mut b = eps.remove(1);
        let mut a = eps.remove(0);
        assert_eq!(a.metrics_snapshot().total_bytes(), 0);
        a.send(1, vec![1; 16]).unwrap();
        a.send(1, vec![2, 3]).unwrap();
        assert_eq!(b.receive(0).unwrap(), vec![1; 16]);
        assert_eq!(b.receive(0).unwrap(), vec![2, 3]);
        let m = a.metrics_snapshot();
        assert_eq!(m.bytes_sent[0][1], 18);
        assert_eq!(m.messages[0][1], 2);
        assert!(a.send(0, vec![]).is_err());
    }

    #[test]
    fn element_codec_round_trip() {
        let v = vec![FieldElement(0), FieldElement(u128::MAX >> 1), FieldElement(42)];
        assert_eq!(decode_elements(&encode_elements(&v)).unwrap(), v);
        assert!(decode_elements(&[0u8; 15]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SessionConfig::in_process(2, 0).validate().is_err());
        assert!(SessionConfig::in_process(3, 0).validate().is_ok());
        let mut c = SessionConfig::in_process(3, 0);
        c.mode = TransportMode::Socket;
        assert!(c.validate().is_err());
    }

    #[test]
    fn snapshot_is_a_copy() {
        let mut eps = in_process_network(3, false);
        let snap = eps[0].metrics_snapshot();
        eps[0].send(2, vec![0; 5]).unwrap();
        assert_eq!(snap.total_bytes(), 0);
        assert_eq!(eps[0].metrics_snapshot().total_bytes(), 5);
        assert_eq!(eps[2].receive(0).unwrap().len(), 5);
    }
}
