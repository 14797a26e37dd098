//! Parameters, forward pass and hand-written backward pass of the head.
//!
//! Per spatial position the head sees a context vector `z` and predicts the
//! channel tokens one after another in a fixed order:
//!
//! ```text
//! z       = spatial(mean of earlier dequantized vectors | start) + class[label]
//! ctx     = Wc z + bc
//! prefix  = Σ_{j<s} (token[q_j] + step[j])          (zero in parallel mode)
//! h1      = tanh(W1 [ctx; prefix] + b1)
//! h2      = tanh(W2 h1 + b2)
//! logits  = Head_s h2 + bias_s
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::QuantizerSpec;
use crate::sidecar::validate_permutation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionMode {
    /// Each channel conditions on the tokens already chosen at this position.
    Autoregressive,
    /// Baseline: the prefix state is forced to zero, so every channel is
    /// predicted from `z` alone.
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub channels: usize,
    pub levels: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub context_dim: usize,
    /// Real classes; one extra embedding row serves as the null class.
    pub num_classes: usize,
    pub mode: PredictionMode,
    /// Generation order: `order[s]` is the channel predicted at step `s`.
    pub order: Vec<usize>,
    /// Codec used to turn generated tokens back into context features.
    pub quantizer: QuantizerSpec,
}

impl HeadConfig {
    pub fn new(channels: usize, quantizer: QuantizerSpec) -> Self {
        HeadConfig {
            channels,
            levels: quantizer.levels,
            embed_dim: 16,
            hidden_dim: 64,
            context_dim: 16,
            num_classes: 1,
            mode: PredictionMode::Autoregressive,
            order: (0..channels).collect(),
            quantizer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0
            || self.embed_dim == 0
            || self.hidden_dim == 0
            || self.context_dim == 0
        {
            return Err(Error::config("head dimensions must be positive"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("need at least one class"));
        }
        self.quantizer.validate()?;
        if self.levels != self.quantizer.levels {
            return Err(Error::config(format!(
                "head predicts {} levels but the quantizer has {}",
                self.levels, self.quantizer.levels
            )));
        }
        if self.order.len() != self.channels {
            return Err(Error::config(format!(
                "order has {} entries for {} channels",
                self.order.len(),
                self.channels
            )));
        }
        validate_permutation(&self.order)
    }

    pub(crate) fn null_class(&self) -> usize {
        self.num_classes
    }
}

/// Offsets of each parameter block inside the flat parameter vector, in
/// declaration (and checkpoint) order.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub token_embed: usize,
    pub step_embed: usize,
    pub spatial_w: usize,
    pub spatial_b: usize,
    pub start: usize,
    pub class_embed: usize,
    pub context_w: usize,
    pub context_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub heads: usize,
    pub head_stride: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &HeadConfig) -> Self {
        let (b, c, de, dh, dz) = (
            cfg.levels,
            cfg.channels,
            cfg.embed_dim,
            cfg.hidden_dim,
            cfg.context_dim,
        );
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let token_embed = take(b * de);
        let step_embed = take(c * de);
        let spatial_w = take(dz * c);
        let spatial_b = take(dz);
        let start = take(dz);
        let class_embed = take((cfg.num_classes + 1) * dz);
        let context_w = take(dh * dz);
        let context_b = take(dh);
        let w1 = take(dh * (dh + de));
        let b1 = take(dh);
        let w2 = take(dh * dh);
        let b2 = take(dh);
        let head_stride = b * dh + b;
        let heads = take(c * head_stride);
        Layout {
            token_embed,
            step_embed,
            spatial_w,
            spatial_b,
            start,
            class_embed,
            context_w,
            context_b,
            w1,
            b1,
            w2,
            b2,
            heads,
            head_stride,
            total: at,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArHeadParams {
    pub(crate) config: HeadConfig,
    pub(crate) layout: Layout,
    pub(crate) values: Vec<f64>,
}

/// Context features for one spatial position.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector(pub Vec<f64>);

impl ArHeadParams {
    /// Random initialization: weights ~ N(0, 1/fan_in), embeddings ~ N(0, 0.5²),
    /// biases zero.
    pub fn init(config: HeadConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut values = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, c, de, dh, dz) = (
            config.levels,
            config.channels,
            config.embed_dim,
            config.hidden_dim,
            config.context_dim,
        );
        let mut fill = |values: &mut [f64], std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            values.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
        };
        let l = &layout;
        fill(&mut values[l.token_embed..l.token_embed + b * de], 0.5);
        fill(&mut values[l.step_embed..l.step_embed + c * de], 0.5);
        fill(
            &mut values[l.spatial_w..l.spatial_w + dz * c],
            1.0 / (c as f64).sqrt(),
        );
        fill(&mut values[l.start..l.start + dz], 0.5);
        fill(
            &mut values[l.class_embed..l.class_embed + (config.num_classes + 1) * dz],
            0.5,
        );
        fill(
            &mut values[l.context_w..l.context_w + dh * dz],
            1.0 / (dz as f64).sqrt(),
        );
        fill(
            &mut values[l.w1..l.w1 + dh * (dh + de)],
            1.0 / ((dh + de) as f64).sqrt(),
        );
        fill(&mut values[l.w2..l.w2 + dh * dh], 1.0 / (dh as f64).sqrt());
        for s in 0..c {
            let o = l.heads + s * l.head_stride;
            fill(&mut values[o..o + b * dh], 1.0 / (dh as f64).sqrt());
        }
        Ok(ArHeadParams {
            config,
            layout,
            values,
        })
    }

    pub(crate) fn from_values(config: HeadConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if values.len() != layout.total {
            return Err(Error::Metadata(format!(
                "expected {} parameters, got {}",
                layout.total,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Metadata("non-finite parameter".into()));
        }
        Ok(ArHeadParams {
            config,
            layout,
            values,
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    pub(crate) fn class_row(&self, label: Option<usize>) -> Result<usize> {
        match label {
            None => Ok(self.config.null_class()),
            Some(l) if l < self.config.num_classes => Ok(l),
            Some(l) => Err(Error::config(format!(
                "class label {l} out of range for {} classes",
                self.config.num_classes
            ))),
        }
    }

    /// `z` for a position given the mean of earlier dequantized vectors
    /// (`None` at the first position) and a class label (`None` = null class).
    pub fn context(&self, summary: Option<&[f64]>, label: Option<usize>) -> Result<ContextVector> {
        let row = self.class_row(label)?;
        if let Some(s) = summary {
            if s.len() != self.config.channels {
                return Err(Error::Contract(format!(
                    "summary has {} values for {} channels",
                    s.len(),
                    self.config.channels
                )));
            }
        }
        Ok(ContextVector(self.context_raw(summary, row)))
    }

    pub(crate) fn context_raw(&self, summary: Option<&[f64]>, class_row: usize) -> Vec<f64> {
        let (c, dz) = (self.config.channels, self.config.context_dim);
        let l = &self.layout;
        let p = &self.values;
        let class = &p[l.class_embed + class_row * dz..l.class_embed + (class_row + 1) * dz];
        let mut z = vec![0.0; dz];
        match summary {
            None => {
                for k in 0..dz {
                    z[k] = p[l.start + k] + class[k];
                }
            }
            Some(s) => {
                for k in 0..dz {
                    let row = &p[l.spatial_w + k * c..l.spatial_w + (k + 1) * c];
                    z[k] = p[l.spatial_b + k] + dot(row, s) + class[k];
                }
            }
        }
        z
    }

    /// Logits for generation step `step` given the tokens chosen at the
    /// earlier steps of the same position (`prefix[j]` is the token of
    /// channel `order[j]`).
    pub fn forward_logits(
        &self,
        z: &ContextVector,
        prefix: &[u16],
        step: usize,
    ) -> Result<Vec<f64>> {
        if step >= self.config.channels {
            return Err(Error::Contract(format!(
                "step {step} out of range for {} channels",
                self.config.channels
            )));
        }
        if prefix.len() != step {
            return Err(Error::Contract(format!(
                "step {step} needs a prefix of length {step}, got {}",
                prefix.len()
            )));
        }
        if z.0.len() != self.config.context_dim {
            return Err(Error::Contract(format!(
                "context has {} values, expected {}",
                z.0.len(),
                self.config.context_dim
            )));
        }
        if let Some(&q) = prefix.iter().find(|&&q| q as usize >= self.config.levels) {
            return Err(Error::Contract(format!("prefix token {q} out of range")));
        }
        let mut state = PositionState::new(self, &z.0);
        for (j, &q) in prefix.iter().enumerate() {
            state.push_token(self, j, q);
        }
        let mut logits = vec![0.0; self.config.levels];
        state.step_logits(self, step, &mut logits, None);
        Ok(logits)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Activations kept for one prediction step.
#[derive(Debug, Clone, Default)]
pub(crate) struct StepCache {
    pub prefix: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
}

/// Incremental forward state for one position: the context projection is
/// computed once and the prefix embedding grows as tokens are fixed.
pub(crate) struct PositionState {
    /// `W1[:, :dh] · (Wc z + bc) + b1`, shared by every step.
    pub a1_base: Vec<f64>,
    pub ctx: Vec<f64>,
    pub prefix: Vec<f64>,
}

impl PositionState {
    pub fn new(params: &ArHeadParams, z: &[f64]) -> Self {
        let cfg = &params.config;
        let (de, dh, dz) = (cfg.embed_dim, cfg.hidden_dim, cfg.context_dim);
        let l = &params.layout;
        let p = &params.values;
        let ctx: Vec<f64> = (0..dh)
            .map(|i| {
                p[l.context_b + i] + dot(&p[l.context_w + i * dz..l.context_w + (i + 1) * dz], z)
            })
            .collect();
        let width = dh + de;
        let a1_base = (0..dh)
            .map(|i| p[l.b1 + i] + dot(&p[l.w1 + i * width..l.w1 + i * width + dh], &ctx))
            .collect();
        PositionState {
            a1_base,
            ctx,
            prefix: vec![0.0; de],
        }
    }

    /// Adds the token fixed at step `step` to the prefix state.
    pub fn push_token(&mut self, params: &ArHeadParams, step: usize, q: u16) {
        if params.config.mode == PredictionMode::Parallel {
            return;
        }
        let de = params.config.embed_dim;
        let l = &params.layout;
        let p = &params.values;
        let tok = &p[l.token_embed + q as usize * de..l.token_embed + (q as usize + 1) * de];
        let stp = &p[l.step_embed + step * de..l.step_embed + (step + 1) * de];
        for k in 0..de {
            self.prefix[k] += tok[k] + stp[k];
        }
    }

    pub fn step_logits(
        &self,
        params: &ArHeadParams,
        step: usize,
        logits: &mut [f64],
        cache: Option<&mut StepCache>,
    ) {
        let cfg = &params.config;
        let (b, de, dh) = (cfg.levels, cfg.embed_dim, cfg.hidden_dim);
        let l = &params.layout;
        let p = &params.values;
        let width = dh + de;
        let mut h1 = vec![0.0; dh];
        for i in 0..dh {
            let row = &p[l.w1 + i * width + dh..l.w1 + (i + 1) * width];
            h1[i] = (self.a1_base[i] + dot(row, &self.prefix)).tanh();
        }
        let mut h2 = vec![0.0; dh];
        for i in 0..dh {
            h2[i] = (p[l.b2 + i] + dot(&p[l.w2 + i * dh..l.w2 + (i + 1) * dh], &h1)).tanh();
        }
        let head = l.heads + step * l.head_stride;
        for (k, out) in logits.iter_mut().enumerate().take(b) {
            *out = p[head + b * dh + k] + dot(&p[head + k * dh..head + (k + 1) * dh], &h2);
        }
        if let Some(cache) = cache {
            cache.prefix.clone_from(&self.prefix);
            cache.h1 = h1;
            cache.h2 = h2;
        }
    }
}

/// In-place softmax; returns `log Σ exp(logits)`.
pub(crate) fn softmax_in_place(logits: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}
