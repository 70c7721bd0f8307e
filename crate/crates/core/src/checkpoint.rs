//! Population checkpoint files.
//!
//! ```text
//! "MAJX" | u16 format version (1) | u16 agent_count
//! per agent: u32 obs_dim | u32 hidden_dim | u32 num_actions | u64 params version
//!            | W1 | b1 | W_pi | b_pi | W_v | b_v      (f32, row-major)
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::nn::{NetSpec, Params};
use crate::trajectory::{put_f32s, CodecError, Reader};

pub const MAGIC: &[u8; 4] = b"MAJX";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot read checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u16),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint holds no agents")]
    Empty,
}

impl From<CodecError> for CheckpointError {
    fn from(e: CodecError) -> Self {
        CheckpointError::Corrupt(e.to_string())
    }
}

/// Appends one agent record (spec, version, weights).
pub fn encode_agent(params: &Params, out: &mut Vec<u8>) {
    let spec = params.spec;
    for v in [spec.obs_dim, spec.hidden_dim, spec.num_actions] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&params.version.to_le_bytes());
    for tensor in params.tensors() {
        put_f32s(out, tensor);
    }
}

pub(crate) fn decode_agent(r: &mut Reader<'_>) -> Result<Params, CheckpointError> {
    let obs_dim = r.u32()? as usize;
    let hidden_dim = r.u32()? as usize;
    let num_actions = r.u32()? as usize;
    if obs_dim == 0 || hidden_dim == 0 || num_actions == 0 {
        return Err(CheckpointError::Corrupt("zero network dimension".into()));
    }
    let spec = NetSpec::new(obs_dim, hidden_dim, num_actions);
    let version = r.u64()?;
    let total = spec
        .tensor_lens()
        .iter()
        .try_fold(0usize, |acc, &n| acc.checked_add(n))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| CheckpointError::Corrupt("dimensions overflow".into()))?;
    r.require(total)?;
    let mut params = Params::zeros(spec);
    params.version = version;
    for tensor in params.tensors_mut() {
        let n = tensor.len();
        *tensor = r.f32s(n)?;
    }
    if !params.is_finite() {
        return Err(CheckpointError::Corrupt("non-finite weight".into()));
    }
    Ok(params)
}

pub fn decode_agent_bytes(bytes: &[u8]) -> Result<(Params, usize), CheckpointError> {
    let mut r = Reader::new(bytes);
    let params = decode_agent(&mut r)?;
    Ok((params, r.pos))
}

pub fn encode_checkpoint(population: &[Params]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(population.len() as u16).to_le_bytes());
    for params in population {
        encode_agent(params, &mut out);
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<Params>, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader::new(&bytes[4..]);
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = r.u16()? as usize;
    if count == 0 {
        return Err(CheckpointError::Empty);
    }
    let population = (0..count)
        .map(|_| decode_agent(&mut r))
        .collect::<Result<Vec<_>, _>>()?;
    if r.remaining() != 0 {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", r.remaining())));
    }
    Ok(population)
}

pub fn save_checkpoint(path: &Path, population: &[Params]) -> std::io::Result<()> {
    fs::write(path, encode_checkpoint(population))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<Params>, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
