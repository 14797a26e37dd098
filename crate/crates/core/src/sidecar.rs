//! JSON metadata stored next to latent and token files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_bytes_atomic;
use crate::quant::{QuantizerGrid, QuantizerSpec};

pub const SIDECAR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarMeta {
    pub format_version: u32,
    pub quantizer: QuantizerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_order: Option<Vec<usize>>,
    #[serde(default)]
    pub source: String,
}

impl SidecarMeta {
    pub fn new(quantizer: QuantizerSpec, source: impl Into<String>) -> Self {
        SidecarMeta {
            format_version: SIDECAR_VERSION,
            quantizer,
            channel_order: None,
            source: source.into(),
        }
    }

    /// The stored order, or `0..channels` when none was recorded.
    pub fn channel_order_or_natural(&self, channels: usize) -> Result<Vec<usize>> {
        match &self.channel_order {
            Some(order) if order.len() != channels => Err(Error::Metadata(format!(
                "channel_order has {} entries but the tensor has {channels} channels",
                order.len()
            ))),
            Some(order) => Ok(order.clone()),
            None => Ok((0..channels).collect()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != SIDECAR_VERSION {
            return Err(Error::Upgrade {
                found: self.format_version,
                expected: SIDECAR_VERSION,
            });
        }
        self.quantizer.validate()?;
        if let Some(order) = &self.channel_order {
            validate_permutation(order)?;
        }
        Ok(())
    }

    /// Refuses a grid whose level count disagrees with the recorded quantizer.
    pub fn check_grid(&self, grid: &QuantizerGrid) -> Result<()> {
        if self.quantizer.levels != grid.levels() {
            return Err(Error::Metadata(format!(
                "token file was quantized with B = {} but the supplied grid has B = {}",
                self.quantizer.levels,
                grid.levels()
            )));
        }
        Ok(())
    }
}

pub fn validate_permutation(order: &[usize]) -> Result<()> {
    let mut seen = vec![false; order.len()];
    for &c in order {
        match seen.get_mut(c) {
            Some(s) if !*s => *s = true,
            _ => {
                return Err(Error::Metadata(format!(
                    "{order:?} is not a permutation of 0..{}",
                    order.len()
                )))
            }
        }
    }
    Ok(())
}

/// `latents.npy` pairs with `latents.json`.
pub fn sidecar_path(npy_path: &Path) -> PathBuf {
    npy_path.with_extension("json")
}

pub fn write_sidecar(meta: &SidecarMeta, path: impl AsRef<Path>) -> Result<()> {
    meta.validate()?;
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    write_bytes_atomic(path.as_ref(), text.as_bytes())
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<SidecarMeta> {
    let text = fs::read_to_string(path)?;
    let meta: SidecarMeta = serde_json::from_str(&text)?;
    meta.validate()?;
    Ok(meta)
}
