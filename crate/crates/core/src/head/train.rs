use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Example, TokenDataset};
use super::loss::{loss_and_grad, Reduction};
use super::model::ArHeadParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Positions per step.
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Probability of replacing a label by the null class, which trains the
    /// unconditional branch used by guidance.
    pub label_dropout: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    /// Cosine decay from `learning_rate` to zero over `steps`.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 8e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            batch_size: 256,
            steps: 2000,
            seed: 0,
            label_dropout: 0.1,
            max_grad_norm: Some(1.0),
            cosine_decay: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.label_dropout) {
            return Err(Error::config("label dropout must lie in [0, 1]"));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        if self.cosine_decay && self.steps > 0 {
            let t = step as f64 / self.steps as f64;
            self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        } else {
            self.learning_rate
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ArHeadParams,
    /// Mini-batch loss (mean NLL per channel, nats) before each update.
    pub losses: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
}

/// Adam on mini-batches of positions drawn by epoch-wise shuffling.
/// Deterministic for a given seed and starting point.
pub fn train(init: ArHeadParams, data: &TokenDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::data("empty training set"));
    }
    if data.channels() != init.config().channels {
        return Err(Error::data(format!(
            "dataset has {} channels, head expects {}",
            data.channels(),
            init.config().channels
        )));
    }
    let mut params = init;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(params.num_params());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut batch: Vec<Example<'_>> = Vec::with_capacity(cfg.batch_size);

    for step in 0..cfg.steps {
        batch.clear();
        while batch.len() < cfg.batch_size.min(data.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let mut ex = data.example(order[cursor]);
            cursor += 1;
            if cfg.label_dropout > 0.0 && rng.random::<f64>() < cfg.label_dropout {
                ex.label = None;
            }
            batch.push(ex);
        }
        let (loss, mut grad) = loss_and_grad(&params, &batch, Reduction::Mean)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step, loss });
        }
        if let Some(max_norm) = cfg.max_grad_norm {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max_norm {
                let scale = max_norm / norm;
                grad.iter_mut().for_each(|g| *g *= scale);
            }
        }
        losses.push(loss);
        adam.step(&mut params.values, &grad, cfg.lr_at(step), cfg);
    }
    Ok(TrainOutcome { params, losses })
}
