//! Token sampling: per-channel guidance and temperature, confidence scores,
//! and raster-order spatial generation with dequantized feedback.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{softmax_in_place, ArHeadParams, ContextVector, PositionState, PredictionMode};
use crate::error::{Error, Result};
use crate::quant::QuantizerGrid;
use crate::tensor::{LatentTensor, Shape, TokenTensor};

/// Below this temperature sampling degenerates to argmax.
pub const ARGMAX_TEMPERATURE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMode {
    Off,
    /// Keep the `k` most confident positions of each sample.
    TopK(usize),
    /// Keep positions whose confidence is at least the threshold.
    Threshold(f64),
}

impl FromStr for ConfidenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::config(format!(
                "bad confidence mode {s:?}; use off, topk:K or thr:T"
            ))
        };
        if s == "off" {
            return Ok(ConfidenceMode::Off);
        }
        if let Some(k) = s.strip_prefix("topk:") {
            return k.parse().map(ConfidenceMode::TopK).map_err(|_| bad());
        }
        if let Some(t) = s.strip_prefix("thr:") {
            let t: f64 = t.parse().map_err(|_| bad())?;
            if !(0.0..=1.0).contains(&t) {
                return Err(bad());
            }
            return Ok(ConfidenceMode::Threshold(t));
        }
        Err(bad())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub temperature: f64,
    pub guidance_scale: f64,
    pub confidence: ConfidenceMode,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            temperature: 0.97,
            guidance_scale: 3.1,
            confidence: ConfidenceMode::Off,
            seed: 0,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::config("temperature must be positive"));
        }
        if self.guidance_scale.is_nan() || self.guidance_scale < 0.0 {
            return Err(Error::config("guidance scale must be non-negative"));
        }
        Ok(())
    }

    fn guided(&self) -> bool {
        self.guidance_scale != 1.0
    }
}

/// `uncond + s · (cond − uncond)`, applied to logits before the softmax.
pub fn cfg_combine(cond: &[f64], uncond: &[f64], scale: f64) -> Result<Vec<f64>> {
    if cond.len() != uncond.len() {
        return Err(Error::Contract(format!(
            "logit lengths differ: {} vs {}",
            cond.len(),
            uncond.len()
        )));
    }
    Ok(cond
        .iter()
        .zip(uncond)
        .map(|(c, u)| u + scale * (c - u))
        .collect())
}

/// Geometric mean of the chosen tokens' probabilities.
pub fn token_confidence(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() || probs.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::domain("confidence needs probabilities in (0, 1]"));
    }
    let mean_log = probs.iter().map(|p| p.ln()).sum::<f64>() / probs.len() as f64;
    Ok(mean_log.exp().min(1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    /// Natural channel layout.
    pub tokens: Vec<u16>,
    /// Probability of each chosen token under the guided distribution at
    /// unit temperature, natural channel layout.
    pub probs: Vec<f64>,
}

/// Samples all channels of one position in the head's generation order.
/// `uncond` supplies the null-class context needed for guidance; it is
/// ignored when the guidance scale is 1.
pub fn sample_channels<R: Rng + ?Sized>(
    params: &ArHeadParams,
    cond: &ContextVector,
    uncond: Option<&ContextVector>,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<ChannelSample> {
    cfg.validate()?;
    let hc = params.config();
    let dz = hc.context_dim;
    if cond.0.len() != dz || uncond.is_some_and(|u| u.0.len() != dz) {
        return Err(Error::Contract(format!(
            "context vectors must have {dz} values"
        )));
    }
    let uncond = if cfg.guided() {
        Some(uncond.ok_or_else(|| {
            Error::Contract("guidance scale ≠ 1 needs an unconditional context".into())
        })?)
    } else {
        None
    };

    let b = hc.levels;
    let mut cond_state = PositionState::new(params, &cond.0);
    let mut uncond_state = uncond.map(|u| PositionState::new(params, &u.0));
    let mut logits = vec![0.0; b];
    let mut uncond_logits = vec![0.0; b];
    let mut scaled = vec![0.0; b];
    let mut tokens = vec![0u16; hc.channels];
    let mut probs = vec![0.0; hc.channels];

    for (s, &ch) in hc.order.iter().enumerate() {
        cond_state.step_logits(params, s, &mut logits, None);
        if let Some(us) = &uncond_state {
            us.step_logits(params, s, &mut uncond_logits, None);
            for k in 0..b {
                logits[k] = uncond_logits[k] + cfg.guidance_scale * (logits[k] - uncond_logits[k]);
            }
        }
        let q = if cfg.temperature < ARGMAX_TEMPERATURE {
            argmax(&logits)
        } else {
            for k in 0..b {
                scaled[k] = logits[k] / cfg.temperature;
            }
            softmax_in_place(&mut scaled);
            draw(&scaled, rng)
        };
        softmax_in_place(&mut logits);
        tokens[ch] = q as u16;
        probs[ch] = logits[q];
        cond_state.push_token(params, s, q as u16);
        if let Some(us) = uncond_state.as_mut() {
            us.push_token(params, s, q as u16);
        }
    }
    Ok(ChannelSample { tokens, probs })
}

/// Sampling with a head trained in parallel mode: every channel depends on
/// the context only.
pub fn sample_parallel_baseline<R: Rng + ?Sized>(
    params: &ArHeadParams,
    cond: &ContextVector,
    uncond: Option<&ContextVector>,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<Vec<u16>> {
    if params.config().mode != PredictionMode::Parallel {
        return Err(Error::Contract(
            "parallel baseline needs a head trained in parallel mode".into(),
        ));
    }
    Ok(sample_channels(params, cond, uncond, cfg, rng)?.tokens)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub latents: LatentTensor,
    pub tokens: TokenTensor,
    /// Per-position confidence, `(N, H, W)` row-major.
    pub confidence: Vec<f64>,
    /// Positions that survived confidence selection.
    pub kept: Vec<bool>,
    /// Dequantized vectors fed back into the context, one per position,
    /// before any confidence-based replacement.
    pub feedback: Vec<f64>,
}

/// Token vector used for positions dropped by confidence selection: in each
/// channel the level closest to the center of the feature range.
pub fn background_tokens(grid: &QuantizerGrid, channels: usize) -> Vec<u16> {
    vec![grid.encode_scalar(0.0); channels]
}

/// Generates one `H × W` sample in raster order. After each position the
/// chosen tokens are dequantized, and the running mean of those continuous
/// vectors is what later positions condition on.
pub fn generate_spatial<R: Rng + ?Sized>(
    params: &ArHeadParams,
    grid: &QuantizerGrid,
    h: usize,
    w: usize,
    label: Option<usize>,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<Generation> {
    cfg.validate()?;
    let hc = params.config();
    if grid.levels() != hc.levels {
        return Err(Error::config(format!(
            "grid has B = {} but the head predicts {} levels",
            grid.levels(),
            hc.levels
        )));
    }
    let cond_row = params.class_row(label)?;
    let null_row = params.class_row(None)?;
    let c = hc.channels;
    let shape = Shape::new(1, h, w, c)?;
    let decoded = grid.decoded_values();

    let mut tokens = Vec::with_capacity(shape.len());
    let mut feedback = Vec::with_capacity(shape.len());
    let mut confidence = Vec::with_capacity(h * w);
    let mut running = vec![0.0; c];
    let mut summary = vec![0.0; c];
    for pos in 0..h * w {
        let prior = if pos == 0 {
            None
        } else {
            for ch in 0..c {
                summary[ch] = running[ch] / pos as f64;
            }
            Some(summary.as_slice())
        };
        let cond = ContextVector(params.context_raw(prior, cond_row));
        let uncond = cfg
            .guided()
            .then(|| ContextVector(params.context_raw(prior, null_row)));
        let sample = sample_channels(params, &cond, uncond.as_ref(), cfg, rng)?;
        for (ch, &q) in sample.tokens.iter().enumerate() {
            let v = decoded[q as usize];
            running[ch] += v;
            feedback.push(v);
        }
        tokens.extend_from_slice(&sample.tokens);
        confidence.push(token_confidence(&sample.probs)?);
    }

    let kept = select_confident(&confidence, cfg.confidence);
    let background = background_tokens(grid, c);
    for (pos, keep) in kept.iter().enumerate() {
        if !keep {
            tokens[pos * c..(pos + 1) * c].copy_from_slice(&background);
        }
    }
    let tokens = TokenTensor::new(shape, tokens)?;
    let latents = grid.decode_tensor(&tokens)?;
    Ok(Generation {
        latents,
        tokens,
        confidence,
        kept,
        feedback,
    })
}

fn select_confident(confidence: &[f64], mode: ConfidenceMode) -> Vec<bool> {
    match mode {
        ConfidenceMode::Off => vec![true; confidence.len()],
        ConfidenceMode::Threshold(t) => confidence.iter().map(|&c| c >= t).collect(),
        ConfidenceMode::TopK(k) => {
            let mut idx: Vec<usize> = (0..confidence.len()).collect();
            idx.sort_by(|&a, &b| confidence[b].total_cmp(&confidence[a]));
            let mut keep = vec![false; confidence.len()];
            for &i in idx.iter().take(k) {
                keep[i] = true;
            }
            keep
        }
    }
}

/// `n` samples from one generator seeded with `cfg.seed`, stacked along N.
pub fn generate_batch(
    params: &ArHeadParams,
    grid: &QuantizerGrid,
    n: usize,
    h: usize,
    w: usize,
    label: Option<usize>,
    cfg: &SampleConfig,
) -> Result<Generation> {
    let shape = Shape::new(n, h, w, params.config().channels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tokens = Vec::with_capacity(shape.len());
    let mut latents = Vec::with_capacity(shape.len());
    let mut confidence = Vec::with_capacity(shape.positions());
    let mut kept = Vec::with_capacity(shape.positions());
    let mut feedback = Vec::with_capacity(shape.len());
    for _ in 0..n {
        let g = generate_spatial(params, grid, h, w, label, cfg, &mut rng)?;
        tokens.extend_from_slice(g.tokens.data());
        latents.extend_from_slice(g.latents.data());
        confidence.extend(g.confidence);
        kept.extend(g.kept);
        feedback.extend(g.feedback);
    }
    Ok(Generation {
        latents: LatentTensor::new(shape, latents)?,
        tokens: TokenTensor::new(shape, tokens)?,
        confidence,
        kept,
        feedback,
    })
}
