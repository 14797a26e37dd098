//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export returns a JSON string; the page does its own drawing.

use dimquant::spectral::order_channels;
use dimquant::stats::{channel_histogram, roundtrip_report, ReportDomain};
use dimquant::synth::{gen_latents, Preset, SynthSpec};
use dimquant::{QuantizerSpec, Shape};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn spec_from(levels: usize, scheme: &str, r: f64) -> Result<QuantizerSpec, String> {
    let spec = QuantizerSpec {
        scheme: scheme.parse().map_err(|e: dimquant::Error| e.to_string())?,
        levels,
        r,
        ..Default::default()
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

/// Grid boundaries, reconstruction values and feature-domain decode table.
pub fn grid_report(levels: usize, scheme: &str, r: f64) -> Result<String, String> {
    let grid = spec_from(levels, scheme, r)?
        .build_grid()
        .map_err(|e| e.to_string())?;
    let mut value: serde_json::Value =
        serde_json::from_str(&grid.to_json()).map_err(|e| e.to_string())?;
    value["decoded"] = json!(grid.decoded_values());
    value["midpoints"] = json!(grid.midpoints());
    Ok(value.to_string())
}

/// Round trip of synthetic latents: codec report plus histograms of the
/// input and of the decoded values for channel 0.
pub fn codec_report(
    levels: usize,
    scheme: &str,
    rho: f64,
    scale: f64,
    seed: u64,
) -> Result<String, String> {
    let spec = spec_from(levels, scheme, 3.0)?;
    let grid = spec.build_grid().map_err(|e| e.to_string())?;
    let shape = Shape::new(4, 32, 32, 2).map_err(|e| e.to_string())?;
    let preset = if rho == 0.0 {
        Preset::Independent
    } else {
        Preset::Equicorrelated { rho }
    };
    let latents = gen_latents(&SynthSpec::new(shape, preset, seed).with_scale(scale))
        .map_err(|e| e.to_string())?;
    let report =
        roundtrip_report(&latents, &grid, ReportDomain::Feature).map_err(|e| e.to_string())?;
    let decoded = grid
        .decode_tensor(&grid.encode_tensor(&latents).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let input_hist = channel_histogram(&latents, 64).map_err(|e| e.to_string())?;
    let pairs: Vec<[f32; 2]> = latents
        .vectors()
        .zip(decoded.vectors())
        .take(400)
        .map(|(x, y)| [x[0], y[0]])
        .collect();
    Ok(json!({
        "report": report,
        "input_histogram": input_hist[0],
        "decoded_levels": grid.decoded_values(),
        "decoded_counts": token_counts(&grid.encode_tensor(&latents).map_err(|e| e.to_string())?, levels),
        "pairs": pairs,
    })
    .to_string())
}

fn token_counts(tokens: &dimquant::TokenTensor, levels: usize) -> Vec<u64> {
    let mut counts = vec![0u64; levels];
    for v in tokens.vectors() {
        counts[v[0] as usize] += 1;
    }
    counts
}

/// Channel maps of the smooth/checkerboard/white preset and their ordering.
pub fn spectral_report(seed: u64, radius_frac: f64) -> Result<String, String> {
    let shape = Shape::new(1, 32, 32, 3).map_err(|e| e.to_string())?;
    let latents = gen_latents(&SynthSpec::new(shape, Preset::SmoothVsNoise, seed))
        .map_err(|e| e.to_string())?;
    let order = order_channels(&latents, radius_frac).map_err(|e| e.to_string())?;
    let maps: Vec<Vec<f32>> = (0..3).map(|c| latents.channel(c)).collect();
    Ok(json!({
        "h": 32,
        "w": 32,
        "names": ["smooth", "checkerboard", "white"],
        "maps": maps,
        "order": order,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn grid(levels: usize, scheme: &str, r: f64) -> Result<String, JsValue> {
    grid_report(levels, scheme, r).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn codec(
    levels: usize,
    scheme: &str,
    rho: f64,
    scale: f64,
    seed: u32,
) -> Result<String, JsValue> {
    codec_report(levels, scheme, rho, scale, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn spectral(seed: u32, radius_frac: f64) -> Result<String, JsValue> {
    spectral_report(seed as u64, radius_frac).map_err(|e| JsValue::from_str(&e))
}
