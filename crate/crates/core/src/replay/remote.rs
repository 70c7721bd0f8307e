//! TCP transport for the replay buffer.
//!
//! Requests and replies:
//! - `WRITE(trajectory)` → `STATS_RESP` on success, `ERROR` otherwise
//! - `SAMPLE_REQ(u32 n)` → `SAMPLE_RESP(u32 count, count trajectories)`
//! - `STATS_REQ()` → `STATS_RESP(u64 written, sampled, dropped, size)`
//!
//! A malformed frame gets an `ERROR(Protocol)` reply and that connection is
//! closed; other connections are unaffected.

use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::trajectory::{Reader, TrajectoryBatch};
use crate::wire::{
    read_frame, write_frame, ErrorCode, Frame, WireError, MSG_ERROR, MSG_SAMPLE_REQ, MSG_SAMPLE_RESP, MSG_STATS_REQ,
    MSG_STATS_RESP, MSG_WRITE,
};

use super::{BufferStats, Replay, ReplayBuffer, ReplayError};

pub(crate) fn encode_stats(stats: &BufferStats) -> Vec<u8> {
    [
        stats.items_written,
        stats.items_sampled,
        stats.items_dropped,
        stats.current_size,
    ]
    .iter()
    .flat_map(|v| v.to_le_bytes())
    .collect()
}

fn decode_stats(payload: &[u8]) -> Result<BufferStats, ReplayError> {
    if payload.len() != 32 {
        return Err(ReplayError::Protocol(format!(
            "stats payload of {} bytes",
            payload.len()
        )));
    }
    let mut r = Reader::new(payload);
    let mut next = || r.u64().map_err(|e| ReplayError::Protocol(e.to_string()));
    Ok(BufferStats {
        items_written: next()?,
        items_sampled: next()?,
        items_dropped: next()?,
        current_size: next()?,
    })
}

fn decode_items(payload: &[u8]) -> Result<Vec<TrajectoryBatch>, ReplayError> {
    let protocol = |e: crate::trajectory::CodecError| ReplayError::Protocol(e.to_string());
    let mut r = Reader::new(payload);
    let count = r.u32().map_err(protocol)? as usize;
    let mut offset = 4;
    let mut items = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let (item, used) = TrajectoryBatch::decode(&payload[offset..]).map_err(protocol)?;
        offset += used;
        items.push(item);
    }
    if offset != payload.len() {
        return Err(ReplayError::Protocol("trailing bytes in sample response".into()));
    }
    Ok(items)
}

fn error_frame(err: &ReplayError) -> Frame {
    let code = match err {
        ReplayError::BadItem(_) => ErrorCode::BadItem,
        ReplayError::Closed => ErrorCode::Closed,
        ReplayError::BadRequest(_) => ErrorCode::BadRequest,
        ReplayError::Protocol(_) => ErrorCode::Protocol,
        _ => ErrorCode::Internal,
    };
    Frame::error(code, &err.to_string())
}

/// Handles one request. `Err` means the connection must be closed after the
/// returned frame is sent.
fn handle(buffer: &ReplayBuffer, frame: &Frame) -> Result<Frame, Frame> {
    let protocol = |msg: String| Frame::error(ErrorCode::Protocol, &msg);
    match frame.msg_type {
        MSG_WRITE => {
            let (item, used) = TrajectoryBatch::decode(&frame.payload).map_err(|e| protocol(e.to_string()))?;
            if used != frame.payload.len() {
                return Err(protocol("trailing bytes after trajectory".into()));
            }
            Ok(match buffer.write(item) {
                Ok(()) => Frame::new(MSG_STATS_RESP, encode_stats(&buffer.stats())),
                Err(e) => error_frame(&e),
            })
        }
        MSG_SAMPLE_REQ => {
            if frame.payload.len() != 4 {
                return Err(protocol("SAMPLE_REQ payload must be a u32".into()));
            }
            let n = u32::from_le_bytes(frame.payload[..4].try_into().unwrap()) as usize;
            Ok(match buffer.sample(n) {
                Ok(items) => {
                    let mut payload = (items.len() as u32).to_le_bytes().to_vec();
                    for item in &items {
                        item.encode_into(&mut payload);
                    }
                    Frame::new(MSG_SAMPLE_RESP, payload)
                }
                Err(e) => error_frame(&e),
            })
        }
        MSG_STATS_REQ => Ok(Frame::new(MSG_STATS_RESP, encode_stats(&buffer.stats()))),
        other => Err(protocol(format!("unexpected message type {other}"))),
    }
}

fn serve_connection(buffer: Arc<ReplayBuffer>, stream: TcpStream) {
    let Ok(read_half) = stream.try_clone() else {
        return;
    };
    let mut reader = BufReader::new(read_half);
    let mut writer = BufWriter::new(stream);
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(frame) => frame,
            Err(WireError::BadMagic(_)) | Err(WireError::Oversized(_)) => {
                let _ = write_frame(&mut writer, &Frame::error(ErrorCode::Protocol, "malformed frame"));
                break;
            }
            Err(_) => break,
        };
        match handle(&buffer, &frame) {
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

/// A replay buffer served over TCP. Dropping the server stops accepting new
/// connections and shuts down open ones.
pub struct ReplayServer {
    addr: SocketAddr,
    stopping: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<TcpStream>>>,
    accept_thread: Option<JoinHandle<()>>,
}

impl ReplayServer {
    pub fn serve<A: ToSocketAddrs>(buffer: Arc<ReplayBuffer>, addr: A) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stopping = Arc::new(AtomicBool::new(false));
        let connections = Arc::new(Mutex::new(Vec::new()));
        let accept_thread = {
            let stopping = stopping.clone();
            let connections = connections.clone();
            thread::Builder::new().name("replay-accept".into()).spawn(move || {
                for stream in listener.incoming() {
                    if stopping.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let _ = stream.set_nodelay(true);
                    if let Ok(clone) = stream.try_clone() {
                        connections.lock().unwrap_or_else(|p| p.into_inner()).push(clone);
                    }
                    let buffer = buffer.clone();
                    let _ = thread::Builder::new()
                        .name("replay-conn".into())
                        .spawn(move || serve_connection(buffer, stream));
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
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
        for stream in self.connections.lock().unwrap_or_else(|p| p.into_inner()).drain(..) {
            let _ = stream.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for ReplayServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

/// Client handle to a [`ReplayServer`]. Requests on one handle are
/// serialized; use one handle per thread for concurrency.
pub struct RemoteReplay {
    conn: Mutex<Conn>,
}

fn wire_to_replay(e: WireError) -> ReplayError {
    match e {
        WireError::Timeout => ReplayError::Timeout,
        WireError::Eof => ReplayError::Protocol("connection closed by server".into()),
        WireError::Io(e) => ReplayError::Io(e),
        other => ReplayError::Protocol(other.to_string()),
    }
}

impl RemoteReplay {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, ReplayError> {
        Self::connect_with_timeout(addr, None)
    }

    /// Connects with an optional per-request I/O timeout.
    pub fn connect_with_timeout<A: ToSocketAddrs>(addr: A, timeout: Option<Duration>) -> Result<Self, ReplayError> {
        let stream = TcpStream::connect(addr).map_err(|e| match e.kind() {
            io::ErrorKind::ConnectionRefused => ReplayError::ConnectionRefused(e.to_string()),
            io::ErrorKind::TimedOut => ReplayError::Timeout,
            _ => ReplayError::Io(e),
        })?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(timeout)?;
        stream.set_write_timeout(timeout)?;
        Ok(Self {
            conn: Mutex::new(Conn {
                reader: BufReader::new(stream.try_clone()?),
                writer: BufWriter::new(stream),
            }),
        })
    }

    fn request(&self, frame: &Frame, expected: u8) -> Result<Frame, ReplayError> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        write_frame(&mut conn.writer, frame).map_err(wire_to_replay)?;
        let reply = read_frame(&mut conn.reader).map_err(wire_to_replay)?;
        if reply.msg_type == MSG_ERROR {
            let (code, message) = reply
                .parse_error()
                .ok_or_else(|| ReplayError::Protocol("short error frame".into()))?;
            return Err(match ErrorCode::from_u16(code) {
                Some(ErrorCode::BadItem) => ReplayError::BadItem(message),
                Some(ErrorCode::Closed) => ReplayError::Closed,
                Some(ErrorCode::BadRequest) => ReplayError::BadRequest(message),
                _ => ReplayError::Protocol(message),
            });
        }
        if reply.msg_type != expected {
            return Err(ReplayError::Protocol(format!(
                "expected message type {expected}, got {}",
                reply.msg_type
            )));
        }
        Ok(reply)
    }
}

impl Replay for RemoteReplay {
    fn write(&self, item: TrajectoryBatch) -> Result<(), ReplayError> {
        self.request(&Frame::new(MSG_WRITE, item.encode()), MSG_STATS_RESP)?;
        Ok(())
    }

    fn sample(&self, n: usize) -> Result<Vec<TrajectoryBatch>, ReplayError> {
        let reply = self.request(
            &Frame::new(MSG_SAMPLE_REQ, (n as u32).to_le_bytes().to_vec()),
            MSG_SAMPLE_RESP,
        )?;
        decode_items(&reply.payload)
    }

    fn stats(&self) -> Result<BufferStats, ReplayError> {
        let reply = self.request(&Frame::new(MSG_STATS_REQ, Vec::new()), MSG_STATS_RESP)?;
        decode_stats(&reply.payload)
    }
}
