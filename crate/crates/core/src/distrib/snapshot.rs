//! Model snapshot format, all integers little-endian:
//!
//! ```text
//! "DRLM"            4 bytes
//! version           u32 (1)
//! agent kind        u8  (0 dqn, 1 double, 2 dueling, 3 a3c)
//! layer count       u32
//! per layer         u32 in, u32 out, u8 activation (0 relu, 1 identity)
//! training step     u64
//! parameters        f32, layer by layer: weights row-major, then biases
//! crc32             u32 over every preceding byte
//! ```
//!
//! Two-stream networks list trunk, first stream, second stream; the head is
//! implied by the agent kind.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::agents::AgentKind;
use crate::nncore::{Activation, LayerSpec, Network, NnError, Scalar};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"DRLM";
pub const SNAPSHOT_VERSION: u32 = 1;

const FIXED_HEADER: usize = 4 + 4 + 1 + 4;
const LAYER_ENTRY: usize = 4 + 4 + 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot truncated: {needed} bytes needed, {available} present")]
    Truncated { needed: usize, available: usize },
    #[error("bad magic {0:02x?}, not a model snapshot")]
    BadMagic([u8; 4]),
    #[error("unsupported snapshot version {0}")]
    BadVersion(u32),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("{0} unexpected bytes after the checksum")]
    TrailingBytes(usize),
    #[error("unknown agent kind byte {0}")]
    UnknownKind(u8),
    #[error("unknown activation byte {0}")]
    BadActivation(u8),
    #[error("layer table does not describe a valid network: {0}")]
    Layout(#[from] NnError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn snapshot_file_name(step: u64) -> String {
    format!("model_{step}.drlm")
}

/// Parameters are stored as f32 whatever `T` is.
pub fn serialize_model<T: Scalar>(net: &Network<T>, kind: AgentKind, step: u64) -> Vec<u8> {
    let layers = net.layers();
    let mut out = Vec::with_capacity(FIXED_HEADER + layers.len() * LAYER_ENTRY + 12 + 4 * net.param_count());
    out.extend_from_slice(&SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.push(kind.to_byte());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for l in layers {
        out.extend_from_slice(&(l.spec.input_width as u32).to_le_bytes());
        out.extend_from_slice(&(l.spec.output_width as u32).to_le_bytes());
        out.push(l.spec.activation.to_byte());
    }
    out.extend_from_slice(&step.to_le_bytes());
    for l in layers {
        for x in l.weights.iter().chain(&l.biases) {
            out.extend_from_slice(&x.to_f32().unwrap().to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn need(bytes: &[u8], needed: usize) -> Result<(), SnapshotError> {
    if bytes.len() < needed {
        Err(SnapshotError::Truncated {
            needed,
            available: bytes.len(),
        })
    } else {
        Ok(())
    }
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub fn deserialize_model(bytes: &[u8]) -> Result<(Network<f32>, AgentKind, u64), SnapshotError> {
    need(bytes, 4)?;
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != SNAPSHOT_MAGIC {
        return Err(SnapshotError::BadMagic(magic));
    }
    need(bytes, 8)?;
    let version = u32_at(bytes, 4);
    if version != SNAPSHOT_VERSION {
        return Err(SnapshotError::BadVersion(version));
    }
    need(bytes, FIXED_HEADER)?;
    let kind_byte = bytes[8];
    let n_layers = u32_at(bytes, 9) as usize;
    let table_end = n_layers
        .checked_mul(LAYER_ENTRY)
        .and_then(|t| t.checked_add(FIXED_HEADER))
        .unwrap_or(usize::MAX);
    need(bytes, table_end)?;
    let mut raw_specs = Vec::with_capacity(n_layers);
    let mut n_params = 0usize;
    for i in 0..n_layers {
        let at = FIXED_HEADER + i * LAYER_ENTRY;
        let input = u32_at(bytes, at) as usize;
        let output = u32_at(bytes, at + 4) as usize;
        n_params = input
            .checked_mul(output)
            .and_then(|w| w.checked_add(output))
            .and_then(|p| p.checked_add(n_params))
            .unwrap_or(usize::MAX / 8);
        raw_specs.push((input, output, bytes[at + 8]));
    }
    let payload_start = table_end + 8;
    let total = n_params
        .checked_mul(4)
        .and_then(|p| p.checked_add(payload_start + 4))
        .unwrap_or(usize::MAX);
    need(bytes, total)?;
    if bytes.len() > total {
        return Err(SnapshotError::TrailingBytes(bytes.len() - total));
    }
    let stored = u32_at(bytes, total - 4);
    let computed = crc32fast::hash(&bytes[..total - 4]);
    if stored != computed {
        return Err(SnapshotError::Checksum { stored, computed });
    }

    let kind = AgentKind::from_byte(kind_byte).ok_or(SnapshotError::UnknownKind(kind_byte))?;
    let mut specs = Vec::with_capacity(n_layers);
    for (input, output, act) in raw_specs {
        let activation = Activation::from_byte(act).ok_or(SnapshotError::BadActivation(act))?;
        specs.push(LayerSpec::new(input, output, activation));
    }
    let step = u64::from_le_bytes(bytes[table_end..payload_start].try_into().unwrap());
    let mut floats = bytes[payload_start..total - 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let params = specs
        .iter()
        .map(|s| {
            let w: Vec<f32> = floats.by_ref().take(s.input_width * s.output_width).collect();
            let b: Vec<f32> = floats.by_ref().take(s.output_width).collect();
            (w, b)
        })
        .collect();
    let net = Network::from_parts(&specs, kind.head(), params)?;
    Ok((net, kind, step))
}

/// Writes `<dir>/model_<step>.drlm`, going through a temporary file so a
/// reader never sees a partial snapshot.
pub fn save_snapshot<T: Scalar>(
    dir: &Path,
    net: &Network<T>,
    kind: AgentKind,
    step: u64,
) -> io::Result<PathBuf> {
    let path = dir.join(snapshot_file_name(step));
    let tmp = dir.join(format!(".{}.tmp", snapshot_file_name(step)));
    fs::write(&tmp, serialize_model(net, kind, step))?;
    fs::rename(&tmp, &path)?;
    Ok(path)
}

pub fn load_snapshot(path: &Path) -> Result<(Network<f32>, AgentKind, u64), SnapshotError> {
    deserialize_model(&fs::read(path)?)
}
