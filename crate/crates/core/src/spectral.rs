//! Channel ordering by low-frequency energy.
//!
//! Each channel's spatial map is transformed with a 2-D DFT; the share of
//! spectral energy inside a disk around DC decides where the channel goes in
//! the generation order. Channels dominated by smooth structure come first.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

pub const DEFAULT_RADIUS_FRAC: f64 = 0.25;

/// Bins whose power is below this fraction of the total are round-off.
const NOISE_FLOOR: f64 = 1e-24;

/// Complex 2-D spectrum, `(u, v)` row-major, DC at `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub h: usize,
    pub w: usize,
    pub bins: Vec<Complex64>,
}

impl Spectrum {
    pub fn at(&self, u: usize, v: usize) -> Complex64 {
        self.bins[u * self.w + v]
    }

    pub fn power(&self) -> PowerSpectrum {
        PowerSpectrum {
            h: self.h,
            w: self.w,
            power: self.bins.iter().map(|z| z.norm_sqr()).collect(),
        }
    }
}

/// `|F(u, v)|²`, possibly averaged over several maps.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    pub h: usize,
    pub w: usize,
    pub power: Vec<f64>,
}

fn twiddles(n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 / n as f64))
        .collect()
}

fn dft1(input: &[Complex64], tw: &[Complex64], out: &mut [Complex64]) {
    let n = input.len();
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, x) in input.iter().enumerate() {
            acc += x * tw[(k * j) % n];
        }
        *o = acc;
    }
}

/// `F(u, v) = Σ_{h,w} x(h, w) exp(−2πi (uh/H + vw/W))`, computed as row
/// transforms followed by column transforms.
pub fn dft2(map: &[f64], h: usize, w: usize) -> Result<Spectrum> {
    if h < 2 || w < 2 {
        return Err(Error::config(format!("dft2 needs H, W ≥ 2, got {h}×{w}")));
    }
    if map.len() != h * w {
        return Err(Error::data(format!(
            "map has {} values, expected {h}×{w}",
            map.len()
        )));
    }
    let tw_w = twiddles(w);
    let tw_h = twiddles(h);
    let mut rows = vec![Complex64::new(0.0, 0.0); h * w];
    let mut line: Vec<Complex64> = Vec::with_capacity(w.max(h));
    for r in 0..h {
        line.clear();
        line.extend(
            map[r * w..(r + 1) * w]
                .iter()
                .map(|&x| Complex64::new(x, 0.0)),
        );
        dft1(&line, &tw_w, &mut rows[r * w..(r + 1) * w]);
    }
    let mut bins = vec![Complex64::new(0.0, 0.0); h * w];
    let mut col_out = vec![Complex64::new(0.0, 0.0); h];
    for c in 0..w {
        line.clear();
        line.extend((0..h).map(|r| rows[r * w + c]));
        dft1(&line, &tw_h, &mut col_out);
        for (r, v) in col_out.iter().enumerate() {
            bins[r * w + c] = *v;
        }
    }
    Ok(Spectrum { h, w, bins })
}

/// Share of energy within `radius_frac · min(H, W)` of DC (inclusive) on the
/// centered spectrum. An all-zero spectrum counts as fully low-frequency.
pub fn low_freq_ratio(spectrum: &PowerSpectrum, radius_frac: f64) -> Result<f64> {
    if !(radius_frac > 0.0 && radius_frac <= 0.5) {
        return Err(Error::config(format!(
            "radius_frac must be in (0, 0.5], got {radius_frac}"
        )));
    }
    let (h, w) = (spectrum.h, spectrum.w);
    let total: f64 = spectrum.power.iter().sum();
    if total == 0.0 {
        return Ok(1.0);
    }
    let radius = radius_frac * h.min(w) as f64;
    let floor = total * NOISE_FLOOR;
    let (mut low, mut high) = (0.0, 0.0);
    for u in 0..h {
        let du = u.min(h - u) as f64;
        for v in 0..w {
            let p = spectrum.power[u * w + v];
            if p <= floor {
                continue;
            }
            let dv = v.min(w - v) as f64;
            if (du * du + dv * dv).sqrt() <= radius {
                low += p;
            } else {
                high += p;
            }
        }
    }
    Ok(low / (low + high))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelOrder {
    /// Channels in generation order.
    pub permutation: Vec<usize>,
    /// Low-frequency ratio of each channel, indexed by original channel.
    pub ratios: Vec<f64>,
}

impl ChannelOrder {
    pub fn natural(channels: usize) -> Self {
        ChannelOrder {
            permutation: (0..channels).collect(),
            ratios: vec![f64::NAN; channels],
        }
    }
}

/// Per-channel low-frequency ratios of the sample-averaged power spectrum.
pub fn channel_ratios(batch: &LatentTensor, radius_frac: f64) -> Result<Vec<f64>> {
    let shape = batch.shape();
    let (h, w) = (shape.h, shape.w);
    let mut ratios = Vec::with_capacity(shape.c);
    let mut map = vec![0.0; h * w];
    for c in 0..shape.c {
        let mut avg = PowerSpectrum {
            h,
            w,
            power: vec![0.0; h * w],
        };
        for n in 0..shape.n {
            for y in 0..h {
                for x in 0..w {
                    map[y * w + x] = batch.get(n, y, x, c) as f64;
                }
            }
            let spec = dft2(&map, h, w)?;
            for (acc, z) in avg.power.iter_mut().zip(&spec.bins) {
                *acc += z.norm_sqr();
            }
        }
        for p in &mut avg.power {
            *p /= shape.n as f64;
        }
        ratios.push(low_freq_ratio(&avg, radius_frac)?);
    }
    Ok(ratios)
}

/// Sorts channels by descending low-frequency ratio; ties keep the lower
/// original index first.
pub fn order_channels(batch: &LatentTensor, radius_frac: f64) -> Result<ChannelOrder> {
    let ratios = channel_ratios(batch, radius_frac)?;
    let mut permutation: Vec<usize> = (0..ratios.len()).collect();
    permutation.sort_by(|&a, &b| ratios[b].total_cmp(&ratios[a]));
    Ok(ChannelOrder {
        permutation,
        ratios,
    })
}
