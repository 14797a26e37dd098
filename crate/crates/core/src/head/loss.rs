//! Cross-entropy over channel tokens, its gradient, and a finite-difference
//! gradient check.

#![allow(clippy::needless_range_loop)]

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Example, TokenDataset};
use super::model::{softmax_in_place, ArHeadParams, PositionState, PredictionMode, StepCache};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// Divide by `examples × channels`.
    Mean,
    Sum,
}

fn check_example(params: &ArHeadParams, ex: &Example<'_>) -> Result<()> {
    let cfg = params.config();
    if ex.tokens.len() != cfg.channels {
        return Err(Error::Contract(format!(
            "example has {} tokens for {} channels",
            ex.tokens.len(),
            cfg.channels
        )));
    }
    if let Some(&q) = ex.tokens.iter().find(|&&q| q as usize >= cfg.levels) {
        return Err(Error::data(format!(
            "token {q} out of range for B = {}",
            cfg.levels
        )));
    }
    if ex.summary.is_some_and(|s| s.len() != cfg.channels) {
        return Err(Error::Contract(
            "summary length differs from channel count".into(),
        ));
    }
    Ok(())
}

/// Negative log-likelihood of each channel of one example, in natural
/// channel layout.
pub fn example_nll(params: &ArHeadParams, ex: &Example<'_>) -> Result<Vec<f64>> {
    check_example(params, ex)?;
    let cfg = params.config();
    let row = params.class_row(ex.label)?;
    let z = params.context_raw(ex.summary, row);
    let mut state = PositionState::new(params, &z);
    let mut logits = vec![0.0; cfg.levels];
    let mut out = vec![0.0; cfg.channels];
    for (s, &ch) in cfg.order.iter().enumerate() {
        let q = ex.tokens[ch];
        state.step_logits(params, s, &mut logits, None);
        let target = logits[q as usize];
        let lse = softmax_in_place(&mut logits);
        out[ch] = lse - target;
        state.push_token(params, s, q);
    }
    Ok(out)
}

/// Mean over examples and channels of `−log p(q^c | q^{<c}, z)`.
pub fn nll_loss<'a>(
    params: &ArHeadParams,
    batch: impl IntoIterator<Item = Example<'a>>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for ex in batch {
        total += example_nll(params, &ex)?.iter().sum::<f64>();
        count += 1;
    }
    if count == 0 {
        return Err(Error::data("empty batch"));
    }
    Ok(total / (count * params.config().channels) as f64)
}

/// Loss and its gradient with respect to every parameter.
pub fn loss_and_grad<'a>(
    params: &ArHeadParams,
    batch: &[Example<'a>],
    reduction: Reduction,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let cfg = params.config();
    let weight = match reduction {
        Reduction::Mean => 1.0 / (batch.len() * cfg.channels) as f64,
        Reduction::Sum => 1.0,
    };
    let mut grad = vec![0.0; params.num_params()];
    let mut loss = 0.0;
    let mut scratch = Scratch::new(params);
    for ex in batch {
        check_example(params, ex)?;
        loss += accumulate_example(params, ex, weight, &mut grad, &mut scratch)?;
    }
    Ok((loss * weight, grad))
}

struct Scratch {
    caches: Vec<StepCache>,
    dlogits: Vec<Vec<f64>>,
    logits: Vec<f64>,
    da1_sum: Vec<f64>,
    suffix: Vec<f64>,
    dh1: Vec<f64>,
    da2: Vec<f64>,
}

impl Scratch {
    fn new(params: &ArHeadParams) -> Self {
        let cfg = params.config();
        Scratch {
            caches: vec![StepCache::default(); cfg.channels],
            dlogits: vec![vec![0.0; cfg.levels]; cfg.channels],
            logits: vec![0.0; cfg.levels],
            da1_sum: vec![0.0; cfg.hidden_dim],
            suffix: vec![0.0; cfg.embed_dim],
            dh1: vec![0.0; cfg.hidden_dim],
            da2: vec![0.0; cfg.hidden_dim],
        }
    }
}

fn accumulate_example(
    params: &ArHeadParams,
    ex: &Example<'_>,
    weight: f64,
    grad: &mut [f64],
    sc: &mut Scratch,
) -> Result<f64> {
    let cfg = params.config();
    let l = &params.layout;
    let p = params.values();
    let (b, c, de, dh, dz) = (
        cfg.levels,
        cfg.channels,
        cfg.embed_dim,
        cfg.hidden_dim,
        cfg.context_dim,
    );
    let width = dh + de;
    let autoregressive = cfg.mode == PredictionMode::Autoregressive;

    // forward
    let row = params.class_row(ex.label)?;
    let z = params.context_raw(ex.summary, row);
    let mut state = PositionState::new(params, &z);
    let mut loss = 0.0;
    for s in 0..c {
        let q = ex.tokens[cfg.order[s]] as usize;
        state.step_logits(params, s, &mut sc.logits, Some(&mut sc.caches[s]));
        let target = sc.logits[q];
        let lse = softmax_in_place(&mut sc.logits);
        loss += lse - target;
        let dl = &mut sc.dlogits[s];
        for k in 0..b {
            dl[k] = sc.logits[k] * weight;
        }
        dl[q] -= weight;
        state.push_token(params, s, q as u16);
    }

    // backward through the steps, newest first
    sc.da1_sum.iter_mut().for_each(|v| *v = 0.0);
    sc.suffix.iter_mut().for_each(|v| *v = 0.0);
    for s in (0..c).rev() {
        let cache = &sc.caches[s];
        let dl = &sc.dlogits[s];
        let head = l.heads + s * l.head_stride;

        let mut dh2 = vec![0.0; dh];
        for k in 0..b {
            let g = dl[k];
            if g == 0.0 {
                continue;
            }
            let wrow = head + k * dh;
            for i in 0..dh {
                grad[wrow + i] += g * cache.h2[i];
                dh2[i] += p[wrow + i] * g;
            }
            grad[head + b * dh + k] += g;
        }

        for i in 0..dh {
            sc.da2[i] = dh2[i] * (1.0 - cache.h2[i] * cache.h2[i]);
        }
        sc.dh1.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..dh {
            let g = sc.da2[i];
            let wrow = l.w2 + i * dh;
            for j in 0..dh {
                grad[wrow + j] += g * cache.h1[j];
                sc.dh1[j] += p[wrow + j] * g;
            }
            grad[l.b2 + i] += g;
        }

        let mut dprefix = vec![0.0; de];
        for i in 0..dh {
            let da1 = sc.dh1[i] * (1.0 - cache.h1[i] * cache.h1[i]);
            sc.da1_sum[i] += da1;
            grad[l.b1 + i] += da1;
            if autoregressive {
                let wrow = l.w1 + i * width + dh;
                for k in 0..de {
                    grad[wrow + k] += da1 * cache.prefix[k];
                    dprefix[k] += p[wrow + k] * da1;
                }
            }
        }

        if autoregressive {
            // the token fixed at step s feeds every later step
            if s + 1 < c {
                let q = ex.tokens[cfg.order[s]] as usize;
                for k in 0..de {
                    grad[l.token_embed + q * de + k] += sc.suffix[k];
                    grad[l.step_embed + s * de + k] += sc.suffix[k];
                }
            }
            for k in 0..de {
                sc.suffix[k] += dprefix[k];
            }
        }
    }

    // shared context path
    let mut dctx = vec![0.0; dh];
    for i in 0..dh {
        let g = sc.da1_sum[i];
        let wrow = l.w1 + i * width;
        for j in 0..dh {
            grad[wrow + j] += g * state.ctx[j];
            dctx[j] += p[wrow + j] * g;
        }
    }
    let mut dzv = vec![0.0; dz];
    for i in 0..dh {
        let g = dctx[i];
        let wrow = l.context_w + i * dz;
        for k in 0..dz {
            grad[wrow + k] += g * z[k];
            dzv[k] += p[wrow + k] * g;
        }
        grad[l.context_b + i] += g;
    }
    for k in 0..dz {
        grad[l.class_embed + row * dz + k] += dzv[k];
    }
    match ex.summary {
        None => {
            for k in 0..dz {
                grad[l.start + k] += dzv[k];
            }
        }
        Some(summary) => {
            for k in 0..dz {
                let wrow = l.spatial_w + k * c;
                for (j, sv) in summary.iter().enumerate() {
                    grad[wrow + j] += dzv[k] * sv;
                }
                grad[l.spatial_b + k] += dzv[k];
            }
        }
    }
    Ok(loss)
}

/// Per-position negative log-likelihood over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NllReport {
    pub mode: PredictionMode,
    pub positions: usize,
    /// Mean over positions of the summed channel NLL, in nats.
    pub per_position_nats: f64,
    pub per_position_bits: f64,
    /// Mean NLL of each channel, natural layout, in nats.
    pub per_channel_nats: Vec<f64>,
}

pub fn evaluate_nll(params: &ArHeadParams, data: &TokenDataset) -> Result<NllReport> {
    if data.is_empty() {
        return Err(Error::data("empty dataset"));
    }
    let c = params.config().channels;
    if data.channels() != c {
        return Err(Error::data(format!(
            "dataset has {} channels, head expects {c}",
            data.channels()
        )));
    }
    let mut per_channel = vec![0.0; c];
    for ex in data.examples() {
        for (acc, v) in per_channel.iter_mut().zip(example_nll(params, &ex)?) {
            *acc += v;
        }
    }
    let n = data.len() as f64;
    per_channel.iter_mut().for_each(|v| *v /= n);
    let per_position_nats: f64 = per_channel.iter().sum();
    Ok(NllReport {
        mode: params.config().mode,
        positions: data.len(),
        per_position_nats,
        per_position_bits: per_position_nats / std::f64::consts::LN_2,
        per_channel_nats: per_channel,
    })
}

/// Denominator floor of the relative error. Below it the comparison is
/// effectively absolute, at the round-off level of the difference quotient.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter index with the largest error.
    pub worst_index: usize,
}

/// Compares the analytic gradient of the mean loss with central differences
/// on `count` randomly chosen parameters.
pub fn grad_check(
    params: &ArHeadParams,
    batch: &[Example<'_>],
    eps: f64,
    count: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, analytic) = loss_and_grad(params, batch, Reduction::Mean)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = count.min(params.num_params());
    let picks = sample(&mut rng, params.num_params(), count);
    let mut probe = params.clone();
    let mut worst = (0.0, 0);
    for i in picks.iter() {
        let orig = probe.values[i];
        probe.values[i] = orig + eps;
        let plus = nll_loss(&probe, batch.iter().copied())?;
        probe.values[i] = orig - eps;
        let minus = nll_loss(&probe, batch.iter().copied())?;
        probe.values[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    Ok(GradCheckReport {
        checked: count,
        max_rel_error: worst.0,
        worst_index: worst.1,
    })
}
