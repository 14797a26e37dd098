//! Codec diagnostics: reconstruction error, token entropy, level usage and
//! how well the dequantized values preserve the input distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::quant::{QuantizerGrid, QuantizerSpec};
use crate::tensor::{LatentTensor, TokenTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportDomain {
    /// Original feature range `[alpha_min, alpha_max]`.
    #[default]
    Feature,
    /// Normalized range `[-r, r]`.
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecReport {
    pub domain: ReportDomain,
    pub levels: usize,
    pub elements: usize,
    pub per_channel_mse: Vec<f64>,
    pub overall_mse: f64,
    /// dB relative to the width of the reporting range; infinite (JSON
    /// `null`) for a lossless round trip.
    pub psnr: f64,
    pub entropy_bits: Vec<f64>,
    pub utilization: Vec<f64>,
    pub ks_stat: f64,
}

/// Encodes, decodes and compares against the input.
pub fn roundtrip_report(
    latents: &LatentTensor,
    grid: &QuantizerGrid,
    domain: ReportDomain,
) -> Result<CodecReport> {
    let tokens = grid.encode_tensor(latents)?;
    let decoded = grid.decode_tensor(&tokens)?;
    build_report(latents, &decoded, &tokens, grid, domain)
}

/// Report for an existing `(original, reconstructed)` pair; tokens are
/// recomputed from the original.
pub fn compare_report(
    original: &LatentTensor,
    reconstructed: &LatentTensor,
    grid: &QuantizerGrid,
    domain: ReportDomain,
) -> Result<CodecReport> {
    if original.shape() != reconstructed.shape() {
        return Err(Error::data(format!(
            "shape mismatch: original {} vs reconstructed {}",
            original.shape(),
            reconstructed.shape()
        )));
    }
    let tokens = grid.encode_tensor(original)?;
    build_report(original, reconstructed, &tokens, grid, domain)
}

fn build_report(
    original: &LatentTensor,
    reconstructed: &LatentTensor,
    tokens: &TokenTensor,
    grid: &QuantizerGrid,
    domain: ReportDomain,
) -> Result<CodecReport> {
    let shape = original.shape();
    if shape.is_empty() {
        return Err(Error::data("empty tensor"));
    }
    if let Some(idx) = reconstructed.first_non_finite() {
        return Err(Error::data(format!(
            "non-finite reconstructed value at {idx:?}"
        )));
    }
    let spec = *grid.spec();
    let map = |x: f32| -> f64 {
        match domain {
            ReportDomain::Feature => x as f64,
            ReportDomain::Normalized => spec.normalize(x as f64),
        }
    };
    let c = shape.c;
    let b = grid.levels();

    let mut sq = vec![0.0; c];
    let mut counts = vec![vec![0u64; b]; c];
    let mut orig_vals = Vec::with_capacity(shape.len());
    let mut rec_vals = Vec::with_capacity(shape.len());
    for ((ov, rv), tv) in original
        .vectors()
        .zip(reconstructed.vectors())
        .zip(tokens.vectors())
    {
        for ch in 0..c {
            let (x, y) = (map(ov[ch]), map(rv[ch]));
            sq[ch] += (x - y) * (x - y);
            counts[ch][tv[ch] as usize] += 1;
            orig_vals.push(x);
            rec_vals.push(y);
        }
    }
    let positions = shape.positions() as f64;
    let per_channel_mse: Vec<f64> = sq.iter().map(|s| s / positions).collect();
    let overall_mse = per_channel_mse.iter().sum::<f64>() / c as f64;
    let range = match domain {
        ReportDomain::Feature => spec.alpha_max - spec.alpha_min,
        ReportDomain::Normalized => 2.0 * spec.r,
    };
    let psnr = 10.0 * (range * range / overall_mse).log10();

    Ok(CodecReport {
        domain,
        levels: b,
        elements: shape.len(),
        per_channel_mse,
        overall_mse,
        psnr,
        entropy_bits: counts.iter().map(|h| entropy_bits(h)).collect(),
        utilization: counts
            .iter()
            .map(|h| h.iter().filter(|&&n| n > 0).count() as f64 / b as f64)
            .collect(),
        ks_stat: ks_statistic(&mut orig_vals, &mut rec_vals),
    })
}

/// Shannon entropy in bits of a histogram.
pub fn entropy_bits(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    counts
        .iter()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let p = n as f64 / total;
            -p * p.log2()
        })
        .sum()
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`. Sorts its
/// inputs in place.
pub fn ks_statistic(a: &mut [f64], b: &mut [f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut worst: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        worst = worst.max((i as f64 / na - j as f64 / nb).abs());
    }
    worst
}

/// Expected normalized-domain squared error for `clip(ξ, −r, r)` with
/// ξ ~ N(0, 1), encoded by nearest reconstruction value.
pub fn gaussian_source_mse(grid: &QuantizerGrid) -> f64 {
    let r = grid.spec().r;
    let recon = grid.recon();
    let b = recon.len();
    // E[(ξ − γ)²; a < ξ < b] in closed form
    let cell = |lo: f64, hi: f64, g: f64| -> f64 {
        let mass = normal::cdf(hi) - normal::cdf(lo);
        let first = normal::pdf(lo) - normal::pdf(hi);
        let second = mass + lo * normal::pdf(lo) - hi * normal::pdf(hi);
        second - 2.0 * g * first + g * g * mass
    };
    let mut total = 0.0;
    for (i, &g) in recon.iter().enumerate() {
        let lo = if i == 0 { -r } else { grid.midpoints()[i - 1] };
        let hi = if i + 1 == b { r } else { grid.midpoints()[i] };
        total += cell(lo, hi, g);
    }
    let tail = normal::sf(r);
    total += tail * (r - recon[b - 1]).powi(2) + tail * (-r - recon[0]).powi(2);
    total
}

/// Distortion of the equal-probability interval partition with conditional
/// mean reconstruction, `1 − (1/B) Σ γ_i²`.
pub fn interval_partition_mse(grid: &QuantizerGrid) -> f64 {
    let b = grid.levels() as f64;
    1.0 - grid.recon().iter().map(|g| g * g).sum::<f64>() / b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelHistogram {
    pub min: f64,
    pub max: f64,
    /// One bin when `min == max`.
    pub counts: Vec<u64>,
}

impl ChannelHistogram {
    pub fn bin_width(&self) -> f64 {
        (self.max - self.min) / self.counts.len() as f64
    }
}

/// Equal-width histogram of each channel over that channel's value range.
pub fn channel_histogram(latents: &LatentTensor, bins: usize) -> Result<Vec<ChannelHistogram>> {
    if bins < 2 {
        return Err(Error::config(format!("need at least 2 bins, got {bins}")));
    }
    let c = latents.shape().c;
    let mut out = Vec::with_capacity(c);
    for ch in 0..c {
        let values = latents.channel(ch);
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v as f64), hi.max(v as f64))
            });
        if min == max {
            out.push(ChannelHistogram {
                min,
                max,
                counts: vec![values.len() as u64],
            });
            continue;
        }
        let mut counts = vec![0u64; bins];
        let width = (max - min) / bins as f64;
        for &v in &values {
            let k = (((v as f64) - min) / width) as usize;
            counts[k.min(bins - 1)] += 1;
        }
        out.push(ChannelHistogram { min, max, counts });
    }
    Ok(out)
}

/// Latents whose normalized values are the given standard-normal draws, so
/// that feature-domain inputs exercise the full `[-r, r]` range.
pub fn latents_from_normalized(
    spec: &QuantizerSpec,
    shape: crate::tensor::Shape,
    draws: &[f64],
) -> Result<LatentTensor> {
    let data = draws
        .iter()
        .map(|&v| {
            ((v + spec.r) / (2.0 * spec.r) * (spec.alpha_max - spec.alpha_min) + spec.alpha_min)
                as f32
        })
        .collect();
    LatentTensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn draws(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn lossless_on_grid_values() {
        let grid = QuantizerSpec::gaussian(16).build_grid().unwrap();
        let shape = Shape::new(2, 4, 4, 2).unwrap();
        let tokens = TokenTensor::new(
            shape,
            (0..shape.len()).map(|i| ((i / 2) % 16) as u16).collect(),
        )
        .unwrap();
        let latents = grid.decode_tensor(&tokens).unwrap();
        let rep = roundtrip_report(&latents, &grid, ReportDomain::Feature).unwrap();
        assert_eq!(rep.overall_mse, 0.0);
        assert_eq!(rep.psnr, f64::INFINITY);
        assert_eq!(rep.ks_stat, 0.0);
        assert!(rep.utilization.iter().all(|&u| u == 1.0));
    }

    #[test]
    fn uniform_tokens_have_full_entropy() {
        let counts = vec![10u64; 64];
        assert!((entropy_bits(&counts) - 6.0).abs() < 1e-12);
        assert_eq!(entropy_bits(&[5, 0, 0]), 0.0);
    }

    #[test]
    fn overall_is_mean_of_channels() {
        let grid = QuantizerSpec::gaussian(8).build_grid().unwrap();
        let shape = Shape::new(10, 8, 8, 3).unwrap();
        let l = latents_from_normalized(grid.spec(), shape, &draws(shape.len(), 1)).unwrap();
        let rep = roundtrip_report(&l, &grid, ReportDomain::Feature).unwrap();
        let mean = rep.per_channel_mse.iter().sum::<f64>() / 3.0;
        assert_eq!(rep.overall_mse, mean);
        assert!(rep.utilization.iter().all(|&u| u <= 1.0));
    }

    #[test]
    fn four_level_distortion_band() {
        let grid = QuantizerSpec::gaussian(4).build_grid().unwrap();
        let n = 1_000_000;
        let shape = Shape::new(1, 1000, 1000, 1).unwrap();
        let l = latents_from_normalized(grid.spec(), shape, &draws(n, 2)).unwrap();
        let rep = roundtrip_report(&l, &grid, ReportDomain::Normalized).unwrap();
        assert!(
            rep.overall_mse >= 0.110 && rep.overall_mse <= 0.1394,
            "{}",
            rep.overall_mse
        );
        let closed = gaussian_source_mse(&grid);
        assert!((rep.overall_mse / closed - 1.0).abs() < 0.01);
        assert!((interval_partition_mse(&grid) - 0.139_441_42).abs() < 1e-7);
        assert!(rep.overall_mse < interval_partition_mse(&grid));
    }

    #[test]
    fn ks_handles_ties_and_identity() {
        let mut a = vec![1.0, 2.0, 2.0, 3.0];
        let mut b = a.clone();
        assert_eq!(ks_statistic(&mut a, &mut b), 0.0);
        let mut a = vec![0.0, 0.0];
        let mut b = vec![1.0, 1.0];
        assert_eq!(ks_statistic(&mut a, &mut b), 1.0);
        let mut a = vec![0.0, 1.0, 2.0, 3.0];
        let mut b = vec![0.5, 1.0, 2.5, 3.0];
        assert_eq!(ks_statistic(&mut a, &mut b), 0.25);
    }

    #[test]
    fn histograms() {
        let shape = Shape::new(1, 1, 100, 2).unwrap();
        let mut data = Vec::new();
        let d = draws(50, 3);
        for i in 0..100 {
            let v = if i < 50 { d[i] } else { -d[i - 50] };
            data.extend([v as f32, 1.25f32]);
        }
        let l = LatentTensor::new(shape, data).unwrap();
        let h = channel_histogram(&l, 10).unwrap();
        assert_eq!(h[0].counts.iter().sum::<u64>(), 100);
        // sign-flipped sample: symmetric range and mirrored counts
        assert_eq!(h[0].min, -h[0].max);
        let rev: Vec<u64> = h[0].counts.iter().rev().copied().collect();
        let diff: u64 = rev
            .iter()
            .zip(&h[0].counts)
            .map(|(a, b)| a.abs_diff(*b))
            .sum();
        assert!(diff <= 4, "{:?}", h[0].counts);
        assert_eq!(h[1].counts, vec![100]);
        assert!(channel_histogram(&l, 1).is_err());
    }
}
