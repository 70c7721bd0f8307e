//! Batched inference server for parameter-less actors.
//!
//! Requests queue on a channel. The server thread takes the first pending
//! request, keeps collecting until `max_batch` requests are in hand or
//! `flush_timeout` has passed, then answers the whole batch from the
//! freshest [`ParamStore`] snapshot.
//!
//! The action for request `id` is drawn from a ChaCha8 stream keyed by
//! `(seed, id)`, so every response can be recomputed offline.

use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::{decode_agent_bytes, encode_agent};
use crate::nn::{forward, sample_action, NnError, Params};
use crate::trajectory::{put_f32s, Reader};
use crate::wire::{
    read_frame, write_frame, ErrorCode, Frame, WireError, MSG_ERROR, MSG_GET_PARAMS_REQ, MSG_INFER_REQ, MSG_INFER_RESP,
    MSG_PARAMS_RESP,
};

use super::collect::AuditRecord;
use super::ParamStore;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InferError {
    #[error("inference timed out")]
    Timeout,
    #[error("observation has {got} values, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("unknown agent {0}")]
    UnknownAgent(u32),
    #[error("inference server is gone")]
    ServerGone,
    #[error("response for request {got} delivered to request {expected}")]
    Misrouted { expected: u64, got: u64 },
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferResponse {
    pub request_id: u64,
    pub action: usize,
    pub log_prob: f32,
    pub value: f32,
    pub param_version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    pub max_batch: usize,
    pub flush_timeout: Duration,
    pub seed: u64,
    /// How many responses to keep as [`AuditRecord`]s.
    pub audit_cap: usize,
}

struct Reply {
    request_id: u64,
    result: Result<InferResponse, InferError>,
}

struct Request {
    id: u64,
    agent_id: u32,
    observation: Vec<f32>,
    reply: Sender<Reply>,
}

enum Msg {
    Infer(Request),
    Stop,
}

#[derive(Default)]
struct Observed {
    batch_sizes: Vec<usize>,
    audit: Vec<AuditRecord>,
}

/// The action the server serves for request `request_id`.
pub fn served_action(logits: &[f32], seed: u64, request_id: u64) -> (usize, f32) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(request_id);
    sample_action(logits, &mut rng)
}

fn answer(
    store: &ParamStore,
    snapshots: &mut [Option<Arc<Params>>],
    req: &Request,
    seed: u64,
) -> Result<(InferResponse, Arc<Params>), InferError> {
    let agent = req.agent_id as usize;
    let slot = snapshots.get_mut(agent).ok_or(InferError::UnknownAgent(req.agent_id))?;
    let params = slot
        .get_or_insert_with(|| store.get(agent).expect("agent checked").0)
        .clone();
    let (logits, value) = forward(&params, &req.observation).map_err(|e| match e {
        NnError::ShapeMismatch { expected, got } => InferError::ShapeMismatch { expected, got },
        other => InferError::Protocol(other.to_string()),
    })?;
    let (action, log_prob) = served_action(&logits, seed, req.id);
    Ok((
        InferResponse {
            request_id: req.id,
            action,
            log_prob,
            value,
            param_version: params.version,
        },
        params,
    ))
}

fn serve_loop(store: Arc<ParamStore>, rx: Receiver<Msg>, config: InferenceConfig, observed: Arc<Mutex<Observed>>) {
    let mut batch: Vec<Request> = Vec::with_capacity(config.max_batch);
    loop {
        match rx.recv() {
            Ok(Msg::Infer(req)) => batch.push(req),
            Ok(Msg::Stop) | Err(_) => return,
        }
        let deadline = Instant::now() + config.flush_timeout;
        let mut stopping = false;
        while batch.len() < config.max_batch {
            match rx.recv_deadline(deadline) {
                Ok(Msg::Infer(req)) => batch.push(req),
                Ok(Msg::Stop) => {
                    stopping = true;
                    break;
                }
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) => {
                    stopping = true;
                    break;
                }
            }
        }

        let mut snapshots = vec![None; store.len()];
        let mut obs = observed.lock().unwrap_or_else(|p| p.into_inner());
        obs.batch_sizes.push(batch.len());
        for req in batch.drain(..) {
            let result = answer(&store, &mut snapshots, &req, config.seed).map(|(resp, params)| {
                if obs.audit.len() < config.audit_cap {
                    obs.audit.push(AuditRecord {
                        agent_id: req.agent_id as usize,
                        version: resp.param_version,
                        params,
                        observation: req.observation.clone(),
                        action: resp.action,
                        log_prob: resp.log_prob,
                        value: resp.value,
                    });
                }
                resp
            });
            let _ = req.reply.send(Reply {
                request_id: req.id,
                result,
            });
        }
        drop(obs);
        if stopping {
            return;
        }
    }
}

pub struct InferenceServer {
    tx: Sender<Msg>,
    next_id: Arc<AtomicU64>,
    observed: Arc<Mutex<Observed>>,
    thread: Option<JoinHandle<()>>,
}

impl InferenceServer {
    pub fn start(store: Arc<ParamStore>, config: InferenceConfig) -> Self {
        assert!(config.max_batch >= 1, "max_batch must be at least 1");
        let (tx, rx) = unbounded();
        let observed = Arc::new(Mutex::new(Observed::default()));
        let thread = {
            let observed = observed.clone();
            thread::Builder::new()
                .name("inference".into())
                .spawn(move || serve_loop(store, rx, config, observed))
                .expect("spawn inference thread")
        };
        Self {
            tx,
            next_id: Arc::new(AtomicU64::new(0)),
            observed,
            thread: Some(thread),
        }
    }

    pub fn client(&self, timeout: Duration) -> InferenceClient {
        let (reply_tx, reply_rx) = unbounded();
        InferenceClient {
            tx: self.tx.clone(),
            next_id: self.next_id.clone(),
            reply_tx,
            reply_rx,
            timeout,
        }
    }

    pub fn batch_sizes(&self) -> Vec<usize> {
        self.observed
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .batch_sizes
            .clone()
    }

    pub fn audit(&self) -> Vec<AuditRecord> {
        self.observed.lock().unwrap_or_else(|p| p.into_inner()).audit.clone()
    }

    /// Stops the server thread after it answers what it already dequeued.
    pub fn shutdown(&mut self) {
        if let Some(handle) = self.thread.take() {
            let _ = self.tx.send(Msg::Stop);
            let _ = handle.join();
        }
    }
}

impl Drop for InferenceServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// A caller's handle. Each client has its own reply channel, and responses
/// are matched to requests by id.
pub struct InferenceClient {
    tx: Sender<Msg>,
    next_id: Arc<AtomicU64>,
    reply_tx: Sender<Reply>,
    reply_rx: Receiver<Reply>,
    timeout: Duration,
}

impl InferenceClient {
    /// Queues a request and returns its id.
    pub fn submit(&self, agent_id: u32, observation: &[f32]) -> Result<u64, InferError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.tx
            .send(Msg::Infer(Request {
                id,
                agent_id,
                observation: observation.to_vec(),
                reply: self.reply_tx.clone(),
            }))
            .map_err(|_| InferError::ServerGone)?;
        Ok(id)
    }

    /// Waits for the response to `request_id`. Late replies to earlier,
    /// timed-out requests are discarded.
    pub fn receive(&self, request_id: u64) -> Result<InferResponse, InferError> {
        let deadline = Instant::now() + self.timeout;
        loop {
            let reply = self.reply_rx.recv_deadline(deadline).map_err(|e| match e {
                RecvTimeoutError::Timeout => InferError::Timeout,
                RecvTimeoutError::Disconnected => InferError::ServerGone,
            })?;
            if reply.request_id < request_id {
                continue;
            }
            if reply.request_id != request_id {
                return Err(InferError::Misrouted {
                    expected: request_id,
                    got: reply.request_id,
                });
            }
            return reply.result;
        }
    }

    pub fn infer(&self, agent_id: u32, observation: &[f32]) -> Result<InferResponse, InferError> {
        let id = self.submit(agent_id, observation)?;
        self.receive(id)
    }
}

fn error_code(e: &InferError) -> ErrorCode {
    match e {
        InferError::Timeout => ErrorCode::InferenceTimeout,
        InferError::ShapeMismatch { .. } => ErrorCode::ShapeMismatch,
        InferError::UnknownAgent(_) => ErrorCode::UnknownAgent,
        _ => ErrorCode::Internal,
    }
}

fn handle_frame(client: &InferenceClient, store: &ParamStore, frame: &Frame) -> Result<Frame, Frame> {
    let protocol = |msg: &str| Frame::error(ErrorCode::Protocol, msg);
    let mut r = Reader::new(&frame.payload);
    match frame.msg_type {
        MSG_INFER_REQ => {
            let parse = |r: &mut Reader| -> Result<(u32, u32, Vec<f32>), crate::trajectory::CodecError> {
                let id = r.u32()?;
                let agent = r.u32()?;
                let n = r.u32()? as usize;
                Ok((id, agent, r.f32s(n)?))
            };
            let (wire_id, agent, obs) = parse(&mut r).map_err(|e| protocol(&e.to_string()))?;
            if r.remaining() != 0 {
                return Err(protocol("trailing bytes in INFER_REQ"));
            }
            Ok(match client.infer(agent, &obs) {
                Ok(resp) => {
                    let mut out = Vec::with_capacity(24);
                    out.extend_from_slice(&wire_id.to_le_bytes());
                    out.extend_from_slice(&(resp.action as u32).to_le_bytes());
                    out.extend_from_slice(&resp.log_prob.to_le_bytes());
                    out.extend_from_slice(&resp.value.to_le_bytes());
                    out.extend_from_slice(&resp.param_version.to_le_bytes());
                    Frame::new(MSG_INFER_RESP, out)
                }
                Err(e) => Frame::error(error_code(&e), &e.to_string()),
            })
        }
        MSG_GET_PARAMS_REQ => {
            let agent = r.u32().map_err(|e| protocol(&e.to_string()))?;
            if r.remaining() != 0 {
                return Err(protocol("trailing bytes in GET_PARAMS_REQ"));
            }
            Ok(match store.get(agent as usize) {
                Ok((params, version)) => {
                    let mut out = version.to_le_bytes().to_vec();
                    encode_agent(&params, &mut out);
                    Frame::new(MSG_PARAMS_RESP, out)
                }
                Err(e) => Frame::error(ErrorCode::UnknownAgent, &e.to_string()),
            })
        }
        other => Err(protocol(&format!("unexpected message type {other}"))),
    }
}

fn serve_connection(client: InferenceClient, store: Arc<ParamStore>, stream: TcpStream) {
    let Ok(read_half) = stream.try_clone() else { return };
    let mut reader = BufReader::new(read_half);
    let mut writer = BufWriter::new(stream);
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(f) => f,
            Err(WireError::BadMagic(_)) | Err(WireError::Oversized(_)) => {
                let _ = write_frame(&mut writer, &Frame::error(ErrorCode::Protocol, "malformed frame"));
                break;
            }
            Err(_) => break,
        };
        match handle_frame(&client, &store, &frame) {
            Ok(reply) => {
                if write_frame(&mut writer, &reply).is_err() {
                    break;
                }
            }
            Err(reply) => {
                let _ = write_frame(&mut writer, &reply);
                break;
            }
        }
    }
    if let Ok(stream) = writer.into_inner() {
        let _ = stream.shutdown(Shutdown::Both);
    }
}

/// Exposes an [`InferenceServer`] and its [`ParamStore`] over TCP.
pub struct InferenceService {
    addr: SocketAddr,
    stopping: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<TcpStream>>>,
    accept_thread: Option<JoinHandle<()>>,
}

impl InferenceService {
    pub fn serve<A: ToSocketAddrs>(
        server: &InferenceServer,
        store: Arc<ParamStore>,
        addr: A,
        timeout: Duration,
    ) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stopping = Arc::new(AtomicBool::new(false));
        let connections = Arc::new(Mutex::new(Vec::new()));
        // One spare client is cloned into every connection.
        let factory = server.client(timeout);
        let accept_thread = {
            let stopping = stopping.clone();
            let connections = connections.clone();
            thread::Builder::new().name("inference-accept".into()).spawn(move || {
                for stream in listener.incoming() {
                    if stopping.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let _ = stream.set_nodelay(true);
                    if let Ok(clone) = stream.try_clone() {
                        connections.lock().unwrap_or_else(|p| p.into_inner()).push(clone);
                    }
                    let (reply_tx, reply_rx) = unbounded();
                    let client = InferenceClient {
                        tx: factory.tx.clone(),
                        next_id: factory.next_id.clone(),
                        reply_tx,
                        reply_rx,
                        timeout: factory.timeout,
                    };
                    let store = store.clone();
                    let _ = thread::Builder::new()
                        .name("inference-conn".into())
                        .spawn(move || serve_connection(client, store, stream));
                }
            })?
        };
        Ok(Self {
            addr,
            stopping,
            connections,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(&mut self) {
        if self.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
        for stream in self.connections.lock().unwrap_or_else(|p| p.into_inner()).drain(..) {
            let _ = stream.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for InferenceService {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// TCP client for an [`InferenceService`].
pub struct RemoteInference {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    next_id: u32,
}

fn wire_err(e: WireError) -> InferError {
    match e {
        WireError::Timeout => InferError::Timeout,
        WireError::Eof => InferError::ServerGone,
        other => InferError::Protocol(other.to_string()),
    }
}

impl RemoteInference {
    pub fn connect<A: ToSocketAddrs>(addr: A, timeout: Option<Duration>) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(timeout)?;
        stream.set_write_timeout(timeout)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            next_id: 0,
        })
    }

    fn request(&mut self, frame: &Frame, expected: u8) -> Result<Frame, InferError> {
        write_frame(&mut self.writer, frame).map_err(wire_err)?;
        let reply = read_frame(&mut self.reader).map_err(wire_err)?;
        if reply.msg_type == MSG_ERROR {
            let (code, message) = reply
                .parse_error()
                .ok_or_else(|| InferError::Protocol("short error frame".into()))?;
            return Err(match ErrorCode::from_u16(code) {
                Some(ErrorCode::InferenceTimeout) => InferError::Timeout,
                Some(ErrorCode::UnknownAgent) => InferError::UnknownAgent(u32::MAX),
                _ => InferError::Protocol(message),
            });
        }
        if reply.msg_type != expected {
            return Err(InferError::Protocol(format!(
                "unexpected message type {}",
                reply.msg_type
            )));
        }
        Ok(reply)
    }

    /// `request_id` in the response is the per-connection wire id.
    pub fn infer(&mut self, agent_id: u32, observation: &[f32]) -> Result<InferResponse, InferError> {
        let id = self.next_id;
        self.next_id = self.next_id.wrapping_add(1);
        let mut payload = Vec::with_capacity(12 + 4 * observation.len());
        payload.extend_from_slice(&id.to_le_bytes());
        payload.extend_from_slice(&agent_id.to_le_bytes());
        payload.extend_from_slice(&(observation.len() as u32).to_le_bytes());
        put_f32s(&mut payload, observation);
        let reply = self.request(&Frame::new(MSG_INFER_REQ, payload), MSG_INFER_RESP)?;
        if reply.payload.len() != 24 {
            return Err(InferError::Protocol(format!(
                "INFER_RESP of {} bytes",
                reply.payload.len()
            )));
        }
        let mut r = Reader::new(&reply.payload);
        let bad = |e: crate::trajectory::CodecError| InferError::Protocol(e.to_string());
        let got = r.u32().map_err(bad)?;
        if got != id {
            return Err(InferError::Misrouted {
                expected: id as u64,
                got: got as u64,
            });
        }
        Ok(InferResponse {
            request_id: got as u64,
            action: r.u32().map_err(bad)? as usize,
            log_prob: r.f32().map_err(bad)?,
            value: r.f32().map_err(bad)?,
            param_version: r.u64().map_err(bad)?,
        })
    }

    pub fn get_params(&mut self, agent_id: u32) -> Result<(Params, u64), InferError> {
        let reply = self.request(
            &Frame::new(MSG_GET_PARAMS_REQ, agent_id.to_le_bytes().to_vec()),
            MSG_PARAMS_RESP,
        )?;
        if reply.payload.len() < 8 {
            return Err(InferError::Protocol("short PARAMS_RESP".into()));
        }
        let version = u64::from_le_bytes(reply.payload[..8].try_into().expect("8 bytes"));
        let (params, used) =
            decode_agent_bytes(&reply.payload[8..]).map_err(|e| InferError::Protocol(e.to_string()))?;
        if 8 + used != reply.payload.len() {
            return Err(InferError::Protocol("trailing bytes in PARAMS_RESP".into()));
        }
        Ok((params, version))
    }
}
