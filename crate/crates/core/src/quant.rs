//! Scalar quantizer grids and the element-wise latent codec.
//!
//! A feature value `x` is first mapped affinely from `[alpha_min, alpha_max]`
//! onto `[-r, r]` (and clipped), then replaced by the index of the nearest
//! reconstruction value. Decoding looks the reconstruction value up and maps
//! it back to the feature range.
//!
//! For the Gaussian scheme the standard normal is cut into `B` cells of equal
//! probability, and each cell is represented by its conditional mean. The
//! linear scheme uses `B` equal-width cells over `[-r, r]` instead.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::tensor::{LatentTensor, Shape, TokenTensor};

/// Largest level count that still fits `u16` token storage.
pub const MAX_LEVELS: usize = u16::MAX as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Gaussian,
    Linear,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Gaussian => "gaussian",
            Scheme::Linear => "linear",
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Scheme::Gaussian),
            "linear" => Ok(Scheme::Linear),
            other => Err(Error::config(format!(
                "unknown scheme {other:?}, expected gaussian or linear"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    pub scheme: Scheme,
    /// Number of levels per channel (`B`).
    pub levels: usize,
    /// Half-width of the normalized range.
    pub r: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl Default for QuantizerSpec {
    fn default() -> Self {
        QuantizerSpec {
            scheme: Scheme::Gaussian,
            levels: 64,
            r: 3.0,
            alpha_min: -5.0,
            alpha_max: 5.0,
        }
    }
}

impl QuantizerSpec {
    pub fn gaussian(levels: usize) -> Self {
        QuantizerSpec {
            levels,
            ..Default::default()
        }
    }

    pub fn linear(levels: usize) -> Self {
        QuantizerSpec {
            scheme: Scheme::Linear,
            levels,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::config(format!(
                "B must be ≥ 2 (got {})",
                self.levels
            )));
        }
        if self.levels > MAX_LEVELS {
            return Err(Error::config(format!(
                "B must be ≤ {MAX_LEVELS} to fit 16-bit tokens (got {})",
                self.levels
            )));
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(Error::config(format!("r must be positive, got {}", self.r)));
        }
        if !(self.alpha_min.is_finite()
            && self.alpha_max.is_finite()
            && self.alpha_min < self.alpha_max)
        {
            return Err(Error::config(format!(
                "need alpha_min < alpha_max, got [{}, {}]",
                self.alpha_min, self.alpha_max
            )));
        }
        Ok(())
    }

    /// Maps a feature value onto `[-r, r]`, clipping out-of-range input.
    pub fn normalize(&self, x: f64) -> f64 {
        let v = 2.0 * self.r * (x - self.alpha_min) / (self.alpha_max - self.alpha_min) - self.r;
        v.clamp(-self.r, self.r)
    }

    /// Inverse of the (unclipped) affine part of [`QuantizerSpec::normalize`].
    pub fn denormalize(&self, v: f64) -> Result<f64> {
        if !(v >= -self.r && v <= self.r) {
            return Err(Error::domain(format!(
                "normalized value {v} is outside [-{r}, {r}]",
                r = self.r
            )));
        }
        Ok(self.denormalize_unchecked(v))
    }

    fn denormalize_unchecked(&self, v: f64) -> f64 {
        (v + self.r) / (2.0 * self.r) * (self.alpha_max - self.alpha_min) + self.alpha_min
    }

    pub fn build_grid(&self) -> Result<QuantizerGrid> {
        match self.scheme {
            Scheme::Gaussian => build_gaussian_grid(*self),
            Scheme::Linear => build_linear_grid(*self),
        }
    }
}

/// Boundaries, reconstruction values and decision midpoints for one
/// quantizer configuration. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerGrid {
    spec: QuantizerSpec,
    boundaries: Vec<f64>,
    recon: Vec<f64>,
    midpoints: Vec<f64>,
    decoded: Vec<f64>,
}

/// Equal-probability cells of N(0, 1) represented by their conditional means.
pub fn build_gaussian_grid(spec: QuantizerSpec) -> Result<QuantizerGrid> {
    spec.validate()?;
    if spec.scheme != Scheme::Gaussian {
        return Err(Error::config(
            "build_gaussian_grid needs the gaussian scheme",
        ));
    }
    let b = spec.levels;

    // Lower half computed directly, upper half mirrored so the grid is
    // exactly antisymmetric.
    let mut boundaries = vec![0.0; b + 1];
    boundaries[0] = f64::NEG_INFINITY;
    boundaries[b] = f64::INFINITY;
    for i in 1..b {
        boundaries[i] = if 2 * i < b {
            normal::inv_cdf(i as f64 / b as f64)
        } else if 2 * i == b {
            0.0
        } else {
            -boundaries[b - i]
        };
    }

    // E[ξ | b_i ≤ ξ < b_{i+1}] = (φ(b_i) − φ(b_{i+1})) / P(cell), and P(cell) = 1/B.
    let mut recon = vec![0.0; b];
    for i in 0..b {
        recon[i] = if 2 * i + 1 < b {
            b as f64 * (normal::pdf(boundaries[i]) - normal::pdf(boundaries[i + 1]))
        } else if 2 * i + 1 == b {
            0.0
        } else {
            -recon[b - 1 - i]
        };
    }
    for g in &mut recon {
        *g = g.clamp(-spec.r, spec.r);
    }
    QuantizerGrid::from_parts(spec, boundaries, recon)
}

/// `B` equal-width cells over `[-r, r]`, represented by their centers.
pub fn build_linear_grid(spec: QuantizerSpec) -> Result<QuantizerGrid> {
    spec.validate()?;
    if spec.scheme != Scheme::Linear {
        return Err(Error::config("build_linear_grid needs the linear scheme"));
    }
    let b = spec.levels;
    let width = 2.0 * spec.r / b as f64;
    let boundaries = (0..=b).map(|i| -spec.r + i as f64 * width).collect();
    let recon = (0..b).map(|i| -spec.r + (i as f64 + 0.5) * width).collect();
    QuantizerGrid::from_parts(spec, boundaries, recon)
}

impl QuantizerGrid {
    fn from_parts(spec: QuantizerSpec, boundaries: Vec<f64>, recon: Vec<f64>) -> Result<Self> {
        if recon.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "reconstruction values collapse after clipping to [-{r}, {r}]; increase r",
                r = spec.r
            )));
        }
        let midpoints = recon.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let decoded = recon
            .iter()
            .map(|&g| spec.denormalize_unchecked(g))
            .collect();
        Ok(QuantizerGrid {
            spec,
            boundaries,
            recon,
            midpoints,
            decoded,
        })
    }

    pub fn spec(&self) -> &QuantizerSpec {
        &self.spec
    }

    pub fn levels(&self) -> usize {
        self.recon.len()
    }

    /// `B + 1` cell edges; the Gaussian grid's outer edges are infinite.
    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn recon(&self) -> &[f64] {
        &self.recon
    }

    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    /// Reconstruction values mapped back to the feature range, by index.
    pub fn decoded_values(&self) -> &[f64] {
        &self.decoded
    }

    pub fn normalize(&self, x: f64) -> f64 {
        self.spec.normalize(x)
    }

    pub fn denormalize(&self, v: f64) -> Result<f64> {
        self.spec.denormalize(v)
    }

    /// Index of the nearest reconstruction value; exact midpoints go to the
    /// lower index.
    #[inline]
    pub fn encode_scalar(&self, v_norm: f64) -> u16 {
        self.midpoints.partition_point(|&m| m < v_norm) as u16
    }

    pub fn decode_scalar(&self, index: usize) -> Result<f64> {
        self.decoded.get(index).copied().ok_or_else(|| {
            Error::domain(format!(
                "index {index} out of range for B = {}",
                self.levels()
            ))
        })
    }

    /// Normalized-domain reconstruction value for an index.
    pub fn recon_value(&self, index: usize) -> Result<f64> {
        self.recon.get(index).copied().ok_or_else(|| {
            Error::domain(format!(
                "index {index} out of range for B = {}",
                self.levels()
            ))
        })
    }

    pub fn encode_tensor(&self, t: &LatentTensor) -> Result<TokenTensor> {
        if let Some(idx) = t.first_non_finite() {
            return Err(Error::data(format!(
                "non-finite latent value at index {idx:?}"
            )));
        }
        let data = t
            .data()
            .iter()
            .map(|&x| self.encode_scalar(self.normalize(x as f64)))
            .collect();
        TokenTensor::new(t.shape(), data)
    }

    pub fn decode_tensor(&self, t: &TokenTensor) -> Result<LatentTensor> {
        let table: Vec<f32> = self.decoded.iter().map(|&v| v as f32).collect();
        let mut data = Vec::with_capacity(t.data().len());
        for (i, &q) in t.data().iter().enumerate() {
            match table.get(q as usize) {
                Some(&v) => data.push(v),
                None => {
                    return Err(Error::data(format!(
                        "token {q} at index {:?} is out of range for B = {}",
                        t.shape().index_of(i),
                        self.levels()
                    )))
                }
            }
        }
        LatentTensor::new(t.shape(), data)
    }

    /// Serializes the grid as JSON with 17 significant digits per real and
    /// infinite sentinels written as the strings `"-inf"` / `"inf"`.
    pub fn to_json(&self) -> String {
        let mut out = String::new();
        out.push('{');
        let _ = write!(out, "\"scheme\": \"{}\", ", self.spec.scheme.as_str());
        let _ = write!(out, "\"B\": {}, ", self.spec.levels);
        let _ = write!(out, "\"r\": {}, ", fmt_real(self.spec.r));
        let _ = write!(out, "\"alpha_min\": {}, ", fmt_real(self.spec.alpha_min));
        let _ = write!(out, "\"alpha_max\": {}, ", fmt_real(self.spec.alpha_max));
        out.push_str("\"boundaries\": ");
        push_array(&mut out, &self.boundaries);
        out.push_str(", \"recon\": ");
        push_array(&mut out, &self.recon);
        out.push('}');
        out
    }

    /// Parses [`QuantizerGrid::to_json`] output. The grid is rebuilt from its
    /// spec and checked against the stored values.
    pub fn from_json(s: &str) -> Result<Self> {
        let raw: RawGrid = serde_json::from_str(s)?;
        let spec = QuantizerSpec {
            scheme: raw.scheme.parse()?,
            levels: raw.levels,
            r: raw.r,
            alpha_min: raw.alpha_min,
            alpha_max: raw.alpha_max,
        };
        let grid = spec.build_grid()?;
        let boundaries = raw
            .boundaries
            .iter()
            .map(JsonReal::value)
            .collect::<Result<Vec<_>>>()?;
        let recon = raw
            .recon
            .iter()
            .map(JsonReal::value)
            .collect::<Result<Vec<_>>>()?;
        if boundaries != grid.boundaries || recon != grid.recon {
            return Err(Error::Metadata(
                "grid values do not match a grid rebuilt from its spec".into(),
            ));
        }
        Ok(grid)
    }
}

fn fmt_real(v: f64) -> String {
    if v == f64::INFINITY {
        "\"inf\"".to_string()
    } else if v == f64::NEG_INFINITY {
        "\"-inf\"".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn push_array(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, &v) in values.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&fmt_real(v));
    }
    out.push(']');
}

#[derive(Deserialize)]
struct RawGrid {
    scheme: String,
    #[serde(rename = "B")]
    levels: usize,
    r: f64,
    alpha_min: f64,
    alpha_max: f64,
    boundaries: Vec<JsonReal>,
    recon: Vec<JsonReal>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonReal {
    Number(f64),
    Text(String),
}

impl JsonReal {
    fn value(&self) -> Result<f64> {
        match self {
            JsonReal::Number(v) => Ok(*v),
            JsonReal::Text(s) if s == "inf" => Ok(f64::INFINITY),
            JsonReal::Text(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            JsonReal::Text(s) => Err(Error::Metadata(format!("bad real {s:?} in grid"))),
        }
    }
}

/// Tokens with each run of `k` consecutive channels packed into one
/// mixed-radix integer `Σ_j q_j · B^j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupedTokens {
    /// Shape with `c = C / k`.
    pub shape: Shape,
    pub levels: usize,
    pub group: usize,
    pub data: Vec<u64>,
}

impl GroupedTokens {
    /// Vocabulary size of one grouped token, `B^k`.
    pub fn vocabulary(&self) -> u64 {
        (self.levels as u64).pow(self.group as u32)
    }
}

pub fn group_tokens(t: &TokenTensor, levels: usize, k: usize) -> Result<GroupedTokens> {
    let shape = t.shape();
    if k == 0 || !shape.c.is_multiple_of(k) {
        return Err(Error::config(format!(
            "group size {k} does not divide C = {}",
            shape.c
        )));
    }
    if (levels as u64).checked_pow(k as u32).is_none() {
        return Err(Error::config(format!(
            "B^k = {levels}^{k} does not fit in 64 bits"
        )));
    }
    if let Some(max) = t.max_index() {
        if max as usize >= levels {
            return Err(Error::data(format!(
                "token {max} is out of range for B = {levels}"
            )));
        }
    }
    let data = t
        .data()
        .chunks_exact(k)
        .map(|group| {
            group
                .iter()
                .rev()
                .fold(0u64, |acc, &q| acc * levels as u64 + q as u64)
        })
        .collect();
    Ok(GroupedTokens {
        shape: Shape::new(shape.n, shape.h, shape.w, shape.c / k)?,
        levels,
        group: k,
        data,
    })
}

pub fn ungroup_tokens(g: &GroupedTokens) -> Result<TokenTensor> {
    let base = g.levels as u64;
    let vocab = g.vocabulary();
    let mut data = Vec::with_capacity(g.data.len() * g.group);
    for &packed in &g.data {
        if packed >= vocab {
            return Err(Error::data(format!(
                "grouped token {packed} exceeds vocabulary {vocab}"
            )));
        }
        let mut rest = packed;
        for _ in 0..g.group {
            data.push((rest % base) as u16);
            rest /= base;
        }
    }
    let shape = Shape::new(g.shape.n, g.shape.h, g.shape.w, g.shape.c * g.group)?;
    TokenTensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(levels: usize) -> QuantizerGrid {
        QuantizerSpec::gaussian(levels).build_grid().unwrap()
    }

    /// Trapezoid rule for ∫ ξ φ(ξ) dξ over one cell, tails cut at ±12.
    fn trapezoid_cell_mean(lo: f64, hi: f64) -> f64 {
        let lo = lo.max(-12.0);
        let hi = hi.min(12.0);
        let n = ((hi - lo) / 2e-5).ceil() as usize;
        let h = (hi - lo) / n as f64;
        let f = |x: f64| x * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = 0.5 * (f(lo) + f(hi));
        for i in 1..n {
            s += f(lo + i as f64 * h);
        }
        s * h
    }

    #[test]
    fn two_level_grid() {
        let g = grid(2);
        assert_abs_diff_eq!(g.recon()[0], -0.7978845608, epsilon = 1e-8);
        assert_abs_diff_eq!(g.recon()[1], 0.7978845608, epsilon = 1e-8);
        let oracle = 2.0 * trapezoid_cell_mean(0.0, f64::INFINITY);
        assert_abs_diff_eq!(g.recon()[1], oracle, epsilon = 1e-8);
    }

    #[test]
    fn four_level_grid() {
        let g = grid(4);
        let interior = &g.boundaries()[1..4];
        for (b, e) in interior.iter().zip([-0.6744898, 0.0, 0.6744898]) {
            assert_abs_diff_eq!(*b, e, epsilon = 1e-7);
        }
        for (gv, e) in g.recon().iter().zip([-1.2711, -0.3246, 0.3246, 1.2711]) {
            assert_abs_diff_eq!(*gv, e, epsilon = 1e-4);
        }
        for i in 0..4 {
            let oracle = 4.0 * trapezoid_cell_mean(g.boundaries()[i], g.boundaries()[i + 1]);
            assert_abs_diff_eq!(g.recon()[i], oracle, epsilon = 1e-8);
        }
    }

    #[test]
    fn gaussian_grid_invariants() {
        for b in [2, 3, 5, 8, 16, 33, 64, 256] {
            let g = grid(b);
            assert_eq!(g.boundaries().len(), b + 1);
            assert_eq!(g.boundaries()[0], f64::NEG_INFINITY);
            assert_eq!(g.boundaries()[b], f64::INFINITY);
            for i in 1..b - 1 {
                let mass = normal::cdf(g.boundaries()[i + 1]) - normal::cdf(g.boundaries()[i]);
                assert_abs_diff_eq!(mass, 1.0 / b as f64, epsilon = 1e-9);
            }
            let mean: f64 = g.recon().iter().sum::<f64>() / b as f64;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-9);
            for i in 0..b {
                assert_eq!(g.recon()[i], -g.recon()[b - 1 - i]);
                assert!(g.recon()[i].abs() <= 3.0);
            }
            assert!(g.recon().windows(2).all(|w| w[0] < w[1]));
            for (i, m) in g.midpoints().iter().enumerate() {
                assert!(g.recon()[i] < *m && *m < g.recon()[i + 1]);
            }
        }
    }

    #[test]
    fn linear_grids() {
        let mut spec = QuantizerSpec::linear(2);
        assert_eq!(spec.build_grid().unwrap().recon(), &[-1.5, 1.5]);
        spec.levels = 6;
        assert_eq!(
            spec.build_grid().unwrap().recon(),
            &[-2.5, -1.5, -0.5, 0.5, 1.5, 2.5]
        );
        spec.levels = 64;
        let g = spec.build_grid().unwrap();
        assert_eq!(g.recon()[0], -2.953125);
        assert_eq!(g.boundaries()[0], -3.0);
        assert_eq!(g.boundaries()[64], 3.0);
    }

    #[test]
    fn config_errors() {
        assert!(QuantizerSpec::gaussian(1).build_grid().is_err());
        assert!(QuantizerSpec::linear(0).build_grid().is_err());
        assert!(build_linear_grid(QuantizerSpec::gaussian(4)).is_err());
        let bad = QuantizerSpec {
            alpha_min: 1.0,
            alpha_max: 1.0,
            ..Default::default()
        };
        assert!(bad.build_grid().is_err());
        let msg = QuantizerSpec::gaussian(1)
            .validate()
            .unwrap_err()
            .to_string();
        assert!(msg.contains("B must be ≥ 2"), "{msg}");
    }

    #[test]
    fn normalize_and_denormalize() {
        let s = QuantizerSpec::default();
        assert_eq!(s.normalize(0.0), 0.0);
        assert_eq!(s.normalize(5.0), 3.0);
        assert_eq!(s.normalize(7.0), 3.0);
        assert_eq!(s.normalize(-9.0), -3.0);
        assert_eq!(s.denormalize(0.0).unwrap(), 0.0);
        assert_eq!(s.denormalize(3.0).unwrap(), 5.0);
        assert_abs_diff_eq!(s.denormalize(1.27112).unwrap(), 2.11853, epsilon = 1e-4);
        assert!(s.denormalize(3.5).is_err());
        assert!(s.denormalize(f64::NAN).is_err());
    }

    #[test]
    fn scalar_codec() {
        let g = grid(4);
        for (i, &gv) in g.recon().iter().enumerate() {
            assert_eq!(g.encode_scalar(gv) as usize, i);
        }
        assert_eq!(g.encode_scalar(0.5), 2);
        assert_eq!(g.encode_scalar(-3.0), 0);
        assert_eq!(g.encode_scalar(0.0), 1);
        assert_abs_diff_eq!(g.decode_scalar(3).unwrap(), 2.11853, epsilon = 1e-4);
        assert_abs_diff_eq!(grid(2).decode_scalar(0).unwrap(), -1.32981, epsilon = 1e-4);
        assert!(g.decode_scalar(4).is_err());
        for b in 2..=64 {
            let g = grid(b);
            for i in 0..b {
                let x = g.decode_scalar(i).unwrap();
                assert_eq!(g.encode_scalar(g.normalize(x)) as usize, i);
            }
        }
    }

    #[test]
    fn tensor_codec() {
        let g = grid(64);
        let shape = Shape::new(1, 1, 1, 1).unwrap();
        let zero = LatentTensor::new(shape, vec![0.0]).unwrap();
        assert_eq!(g.encode_tensor(&zero).unwrap().data(), &[31]);

        let shape = Shape::new(2, 3, 3, 4).unwrap();
        let low = LatentTensor::filled(shape, -5.0);
        assert!(g
            .encode_tensor(&low)
            .unwrap()
            .data()
            .iter()
            .all(|&q| q == 0));

        let zeros = TokenTensor::filled(shape, 0);
        let dec = g.decode_tensor(&zeros).unwrap();
        let d0 = g.decode_scalar(0).unwrap() as f32;
        assert!(dec.data().iter().all(|&v| v == d0));

        let mut nan = LatentTensor::filled(shape, 0.0);
        nan.data_mut()[shape.offset(1, 2, 0, 3)] = f32::NAN;
        let err = g.encode_tensor(&nan).unwrap_err().to_string();
        assert!(err.contains("[1, 2, 0, 3]"), "{err}");

        let bad = TokenTensor::filled(shape, 64);
        assert!(matches!(g.decode_tensor(&bad), Err(Error::Data(_))));
    }

    #[test]
    fn encode_is_monotone() {
        let g = grid(64);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut xs: Vec<f64> = (0..100_000).map(|_| rng.random_range(-3.0..=3.0)).collect();
        xs.sort_by(f64::total_cmp);
        let qs: Vec<u16> = xs.iter().map(|&x| g.encode_scalar(x)).collect();
        assert!(qs.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn encode_matches_brute_force_argmin() {
        let g = grid(16);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10_000 {
            let v: f64 = rng.random_range(-3.0..=3.0);
            let brute = (0..16)
                .min_by(|&a, &b| {
                    (g.recon()[a] - v)
                        .abs()
                        .total_cmp(&(g.recon()[b] - v).abs())
                })
                .unwrap();
            assert_eq!(g.encode_scalar(v) as usize, brute);
        }
    }

    #[test]
    fn grid_json_roundtrip() {
        for spec in [QuantizerSpec::gaussian(4), QuantizerSpec::linear(8)] {
            let g = spec.build_grid().unwrap();
            let json = g.to_json();
            let v: serde_json::Value = serde_json::from_str(&json).unwrap();
            assert_eq!(v["B"], spec.levels);
            assert_eq!(QuantizerGrid::from_json(&json).unwrap(), g);
        }
        let json = grid(2).to_json();
        assert!(json.contains("\"-inf\"") && json.contains("\"inf\""));
        assert!(json.contains("7.9788456080286541e-1"), "{json}");
    }

    #[test]
    fn grouping() {
        let shape = Shape::new(1, 1, 1, 2).unwrap();
        let t = TokenTensor::new(shape, vec![3, 5]).unwrap();
        let g = group_tokens(&t, 16, 2).unwrap();
        assert_eq!(g.data, vec![83]);
        assert_eq!(g.vocabulary(), 256);
        assert_eq!(group_tokens(&t, 16, 1).unwrap().data, vec![3, 5]);
        assert!(group_tokens(&t, 16, 3).is_err());
        let wide = TokenTensor::filled(Shape::new(1, 1, 1, 20).unwrap(), 0);
        assert!(group_tokens(&wide, 65535, 5).is_err());
        assert!(group_tokens(&wide, 16, 4).is_ok());
    }

    proptest! {
        #[test]
        fn ungroup_inverts_group(
            levels in 2usize..300,
            k in 1usize..4,
            groups in 1usize..5,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = Shape::new(2, 2, 3, k * groups).unwrap();
            let data = (0..shape.len()).map(|_| rng.random_range(0..levels) as u16).collect();
            let t = TokenTensor::new(shape, data).unwrap();
            let g = group_tokens(&t, levels, k).unwrap();
            prop_assert_eq!(ungroup_tokens(&g).unwrap(), t);
        }

        #[test]
        fn decode_then_encode_is_identity(levels in 2usize..=64, seed in any::<u64>(), linear in any::<bool>()) {
            let spec = if linear { QuantizerSpec::linear(levels) } else { QuantizerSpec::gaussian(levels) };
            let g = spec.build_grid().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = Shape::new(1, 3, 3, 4).unwrap();
            let data = (0..shape.len()).map(|_| rng.random_range(0..levels) as u16).collect();
            let t = TokenTensor::new(shape, data).unwrap();
            let dec = g.decode_tensor(&t).unwrap();
            prop_assert!(dec.data().iter().all(|&v| (-5.0..=5.0).contains(&v)));
            prop_assert_eq!(g.encode_tensor(&dec).unwrap(), t);
        }
    }
}
