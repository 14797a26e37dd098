//! Checkpoint layout:
//!
//! ```text
//! 8 bytes   magic "DQHEAD\0\x01"
//! u32 LE    format version
//! u32 LE    header length in bytes
//! ...       JSON header {"config": HeadConfig, "num_params": n}
//! n × f64   little-endian parameters in layout order
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ArHeadParams, HeadConfig};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DQHEAD\0\x01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: HeadConfig,
    num_params: usize,
}

pub fn checkpoint_bytes(params: &ArHeadParams) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        config: params.config().clone(),
        num_params: params.num_params(),
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + 8 * params.num_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ArHeadParams> {
    let bad = |m: &str| Error::Metadata(format!("checkpoint: {m}"));
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Upgrade {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..header_end])?;
    let payload = &bytes[header_end..];
    if payload.len() != header.num_params * 8 {
        return Err(bad(&format!(
            "payload holds {} bytes, header declares {} parameters",
            payload.len(),
            header.num_params
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    ArHeadParams::from_values(header.config, values)
}

pub fn save_checkpoint(params: &ArHeadParams, path: impl AsRef<Path>) -> Result<()> {
    let bytes = checkpoint_bytes(params)?;
    write_atomic(path.as_ref(), |w| w.write_all(&bytes))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ArHeadParams> {
    checkpoint_from_bytes(&fs::read(path)?)
}
