//! Training-free discretization of continuous latent features into
//! per-channel tokens, and a small channel-wise autoregressive model over
//! those tokens.
//!
//! * [`quant`]: Gaussian and linear scalar quantizer grids and the codec.
//! * [`npy`], [`sidecar`]: file formats for latents, tokens and metadata.
//! * [`spectral`]: channel ordering by low-frequency energy.
//! * [`stats`]: codec diagnostics.
//! * [`synth`]: seeded synthetic latents.
//! * [`head`]: the autoregressive token head, training and sampling.

pub mod error;
mod fsutil;
pub mod head;
pub mod normal;
pub mod npy;
pub mod quant;
pub mod sidecar;
pub mod spectral;
pub mod stats;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use fsutil::{write_atomic, write_bytes_atomic};
pub use quant::{QuantizerGrid, QuantizerSpec, Scheme};
pub use tensor::{LatentTensor, Shape, TokenTensor};
