//! Frame transport shared by the replay and inference services.
//!
//! Every frame is `0x7B | u8 msg_type | u32 big-endian payload length |
//! payload`. Integer and float fields inside payloads are little-endian.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: u8 = 0x7B;
/// Upper bound on a single payload.
pub const MAX_PAYLOAD: u32 = 256 * 1024 * 1024;

pub const MSG_WRITE: u8 = 1;
pub const MSG_SAMPLE_REQ: u8 = 2;
pub const MSG_SAMPLE_RESP: u8 = 3;
pub const MSG_STATS_REQ: u8 = 4;
pub const MSG_STATS_RESP: u8 = 5;
pub const MSG_ERROR: u8 = 6;
pub const MSG_INFER_REQ: u8 = 7;
pub const MSG_INFER_RESP: u8 = 8;
pub const MSG_GET_PARAMS_REQ: u8 = 9;
pub const MSG_PARAMS_RESP: u8 = 10;

/// Codes carried by `ERROR` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum ErrorCode {
    Protocol = 1,
    BadItem = 2,
    Closed = 3,
    BadRequest = 4,
    ShapeMismatch = 5,
    InferenceTimeout = 6,
    UnknownAgent = 7,
    Internal = 8,
}

impl ErrorCode {
    pub fn from_u16(code: u16) -> Option<Self> {
        use ErrorCode::*;
        [
            Protocol,
            BadItem,
            Closed,
            BadRequest,
            ShapeMismatch,
            InferenceTimeout,
            UnknownAgent,
            Internal,
        ]
        .into_iter()
        .find(|c| *c as u16 == code)
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("connection closed")]
    Eof,
    #[error("bad frame magic 0x{0:02x}")]
    BadMagic(u8),
    #[error("payload of {0} bytes exceeds limit")]
    Oversized(u32),
    #[error("timed out")]
    Timeout,
    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for WireError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::UnexpectedEof => WireError::Eof,
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => WireError::Timeout,
            _ => WireError::Io(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: u8, payload: Vec<u8>) -> Self {
        Self { msg_type, payload }
    }

    pub fn error(code: ErrorCode, message: &str) -> Self {
        let mut payload = Vec::with_capacity(2 + message.len());
        payload.extend_from_slice(&(code as u16).to_le_bytes());
        payload.extend_from_slice(message.as_bytes());
        Self::new(MSG_ERROR, payload)
    }

    /// Splits an `ERROR` payload into its raw code and message.
    pub fn parse_error(&self) -> Option<(u16, String)> {
        if self.msg_type != MSG_ERROR || self.payload.len() < 2 {
            return None;
        }
        let code = u16::from_le_bytes([self.payload[0], self.payload[1]]);
        Some((code, String::from_utf8_lossy(&self.payload[2..]).into_owned()))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + self.payload.len());
        out.push(MAGIC);
        out.push(self.msg_type);
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<(), WireError> {
    w.write_all(&frame.encode())?;
    w.flush()?;
    Ok(())
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, WireError> {
    let mut header = [0u8; 6];
    r.read_exact(&mut header)?;
    if header[0] != MAGIC {
        return Err(WireError::BadMagic(header[0]));
    }
    let len = u32::from_be_bytes([header[2], header[3], header[4], header[5]]);
    if len > MAX_PAYLOAD {
        return Err(WireError::Oversized(len));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    Ok(Frame {
        msg_type: header[1],
        payload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let bytes = Frame::new(MSG_SAMPLE_REQ, 5u32.to_le_bytes().to_vec()).encode();
        assert_eq!(bytes, vec![0x7B, 2, 0, 0, 0, 4, 5, 0, 0, 0]);
    }

    #[test]
    fn round_trip_and_bad_magic() {
        let frame = Frame::error(ErrorCode::Closed, "closed");
        let bytes = frame.encode();
        assert_eq!(read_frame(&mut &bytes[..]).unwrap(), frame);
        assert_eq!(frame.parse_error(), Some((3, "closed".to_string())));

        let mut bad = bytes.clone();
        bad[0] = 0x00;
        assert!(matches!(read_frame(&mut &bad[..]), Err(WireError::BadMagic(0))));
        assert!(matches!(read_frame(&mut &bytes[..3]), Err(WireError::Eof)));
    }

    #[test]
    fn oversized_length_is_rejected() {
        let bytes = [0x7B, 1, 0xFF, 0xFF, 0xFF, 0xFF];
        assert!(matches!(read_frame(&mut &bytes[..]), Err(WireError::Oversized(_))));
    }
}
