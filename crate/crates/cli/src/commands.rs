use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dimquant::head::{
    evaluate_nll, generate_batch, generate_spatial, load_checkpoint, save_checkpoint, train,
    ArHeadParams, ConfidenceMode, HeadConfig, PredictionMode, SampleConfig, TokenDataset,
    TrainConfig,
};
use dimquant::npy::{
    read_latents, read_tokens, write_latents, write_npy, write_tokens, NpyArray, NpyData,
};
use dimquant::sidecar::{read_sidecar, sidecar_path, write_sidecar, SidecarMeta};
use dimquant::spectral::order_channels;
use dimquant::stats::{compare_report, roundtrip_report, CodecReport, ReportDomain};
use dimquant::synth::{gen_latents, Preset, SynthSpec};
use dimquant::{write_bytes_atomic, QuantizerGrid, QuantizerSpec, Shape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{Cli, Command, Failure, Format, GridArgs, ModeArg, PresetArg};

type Outcome = Result<(), Failure>;

pub fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Grid(g) => grid(cli, g),
        Command::Synth {
            n,
            h,
            w,
            c,
            preset,
            rho,
            scale,
            grid,
        } => synth(
            cli,
            Shape::new(*n, *h, *w, *c)?,
            *preset,
            *rho,
            *scale,
            grid,
        ),
        Command::Quantize { input, grid } => quantize(cli, input, grid),
        Command::Dequantize { input, grid } => dequantize(cli, input, grid),
        Command::Stats {
            original,
            roundtrip,
            normalized,
            grid,
        } => stats(cli, original, roundtrip.as_deref(), *normalized, grid),
        Command::Order {
            input,
            radius_frac,
            update_sidecar,
        } => order(cli, input, *radius_frac, *update_sidecar),
        Command::TrainHead {
            data,
            mode,
            steps,
            batch_size,
            lr,
            embed_dim,
            hidden_dim,
            context_dim,
            label_dropout,
            losses,
        } => {
            let tc = TrainConfig {
                learning_rate: *lr,
                batch_size: *batch_size,
                steps: *steps,
                seed: cli.seed.wrapping_add(1),
                label_dropout: *label_dropout,
                ..Default::default()
            };
            let dims = [*embed_dim, *hidden_dim, *context_dim];
            train_head(cli, data, *mode, dims, &tc, losses.as_deref())
        }
        Command::Sample {
            ckpt,
            n,
            h,
            w,
            temperature,
            guidance,
            confidence,
            label,
        } => {
            let cfg = SampleConfig {
                temperature: *temperature,
                guidance_scale: *guidance,
                confidence: confidence.parse::<ConfidenceMode>()?,
                seed: cli.seed,
            };
            sample(cli, ckpt, Shape::new(*n, *h, *w, 1)?, *label, &cfg)
        }
        Command::EvalHead { ckpt, data, mode } => eval_head(cli, ckpt, data, *mode),
        Command::Bench { ckpt, runs, h } => bench(cli, ckpt, *runs, *h),
    }
}

impl GridArgs {
    fn resolve(&self, base: QuantizerSpec) -> Result<QuantizerSpec, Failure> {
        let spec = QuantizerSpec {
            scheme: match &self.scheme {
                Some(s) => s.parse()?,
                None => base.scheme,
            },
            levels: self.levels.unwrap_or(base.levels),
            r: self.r.unwrap_or(base.r),
            alpha_min: self.min.unwrap_or(base.alpha_min),
            alpha_max: self.max.unwrap_or(base.alpha_max),
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn required_output(cli: &Cli) -> Result<&Path, Failure> {
    cli.output
        .as_deref()
        .ok_or_else(|| Failure::validation("this subcommand needs --output"))
}

/// Prints a report or writes it to `--output`.
fn emit<T: Serialize>(cli: &Cli, value: &T, text: impl FnOnce() -> String) -> Outcome {
    let mut body = match cli.format {
        Format::Json => serde_json::to_string_pretty(value)?,
        Format::Text => text(),
    };
    if !body.ends_with('\n') {
        body.push('\n');
    }
    match &cli.output {
        Some(path) => write_bytes_atomic(path, body.as_bytes())?,
        None => std::io::stdout().write_all(body.as_bytes())?,
    }
    Ok(())
}

fn read_meta(npy: &Path) -> Result<Option<SidecarMeta>, Failure> {
    let path = sidecar_path(npy);
    if path.exists() {
        Ok(Some(read_sidecar(path)?))
    } else {
        Ok(None)
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.with_extension("");
    let mut s = stem.into_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn grid(cli: &Cli, args: &GridArgs) -> Outcome {
    let g = args.resolve(QuantizerSpec::default())?.build_grid()?;
    let json: serde_json::Value = serde_json::from_str(&g.to_json())?;
    emit(cli, &json, || {
        let mut s = format!("{} grid, B = {}\n", g.spec().scheme.as_str(), g.levels());
        for (i, v) in g.recon().iter().enumerate() {
            let _ = writeln!(s, "{i:>5} {v:+.10}");
        }
        s
    })
}

fn synth(
    cli: &Cli,
    shape: Shape,
    preset: PresetArg,
    rho: f64,
    scale: f64,
    grid: &GridArgs,
) -> Outcome {
    let out = required_output(cli)?;
    let quantizer = grid.resolve(QuantizerSpec::default())?;
    let preset = match preset {
        PresetArg::Independent => Preset::Independent,
        PresetArg::Equicorrelated => Preset::Equicorrelated { rho },
        PresetArg::CopyChannel => Preset::CopyChannel,
        PresetArg::SmoothVsNoise => Preset::SmoothVsNoise,
    };
    let spec = SynthSpec::new(shape, preset, cli.seed).with_scale(scale);
    spec.validate()?;
    let latents = gen_latents(&spec)?;
    let meta = SidecarMeta::new(
        quantizer,
        format!(
            "synth preset={} seed={} scale={scale}",
            preset.name(),
            cli.seed
        ),
    );
    write_latents(&latents, out)?;
    write_sidecar(&meta, sidecar_path(out))?;
    Ok(())
}

fn quantize(cli: &Cli, input: &Path, grid: &GridArgs) -> Outcome {
    let out = required_output(cli)?;
    let spec = grid.resolve(QuantizerSpec::default())?;
    let g = spec.build_grid()?;
    let latents = read_latents(input)?;
    let tokens = g.encode_tensor(&latents)?;
    let mut meta = SidecarMeta::new(spec, format!("quantize {}", input.display()));
    if let Some(src) = read_meta(input)? {
        meta.channel_order = src.channel_order;
    }
    write_tokens(&tokens, out)?;
    write_sidecar(&meta, sidecar_path(out))?;
    Ok(())
}

fn token_grid(input: &Path, grid: &GridArgs) -> Result<(QuantizerGrid, SidecarMeta), Failure> {
    let meta = read_meta(input)?.ok_or_else(|| {
        Failure::from(dimquant::Error::Metadata(format!(
            "{} has no sidecar {}",
            input.display(),
            sidecar_path(input).display()
        )))
    })?;
    let g = grid.resolve(meta.quantizer)?.build_grid()?;
    meta.check_grid(&g)?;
    Ok((g, meta))
}

fn dequantize(cli: &Cli, input: &Path, grid: &GridArgs) -> Outcome {
    let out = required_output(cli)?;
    let (g, meta) = token_grid(input, grid)?;
    let tokens = read_tokens(input)?;
    let latents = g.decode_tensor(&tokens)?;
    let mut out_meta = SidecarMeta::new(*g.spec(), format!("dequantize {}", input.display()));
    out_meta.channel_order = meta.channel_order;
    write_latents(&latents, out)?;
    write_sidecar(&out_meta, sidecar_path(out))?;
    Ok(())
}

fn report_text(r: &CodecReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "domain        {:?}", r.domain);
    let _ = writeln!(s, "levels        {}", r.levels);
    let _ = writeln!(s, "elements      {}", r.elements);
    let _ = writeln!(s, "overall_mse   {:.6e}", r.overall_mse);
    let _ = writeln!(s, "psnr_db       {:.3}", r.psnr);
    let _ = writeln!(s, "ks_stat       {:.6}", r.ks_stat);
    for (c, ((m, e), u)) in r
        .per_channel_mse
        .iter()
        .zip(&r.entropy_bits)
        .zip(&r.utilization)
        .enumerate()
    {
        let _ = writeln!(
            s,
            "channel {c:>3}   mse {m:.6e}  entropy {e:.4} bits  used {u:.3}"
        );
    }
    s
}

fn stats(
    cli: &Cli,
    original: &Path,
    roundtrip: Option<&Path>,
    normalized: bool,
    grid: &GridArgs,
) -> Outcome {
    let base = match roundtrip {
        Some(p) => read_meta(p)?,
        None => None,
    }
    .or(read_meta(original)?)
    .map_or_else(QuantizerSpec::default, |m| m.quantizer);
    let g = grid.resolve(base)?.build_grid()?;
    let domain = if normalized {
        ReportDomain::Normalized
    } else {
        ReportDomain::Feature
    };
    let latents = read_latents(original)?;
    let report = match roundtrip {
        Some(p) => compare_report(&latents, &read_latents(p)?, &g, domain)?,
        None => roundtrip_report(&latents, &g, domain)?,
    };
    emit(cli, &report, || report_text(&report))
}

fn order(cli: &Cli, input: &Path, radius_frac: f64, update_sidecar: bool) -> Outcome {
    let latents = read_latents(input)?;
    let order = order_channels(&latents, radius_frac)?;
    if update_sidecar {
        let mut meta = read_meta(input)?.unwrap_or_else(|| {
            SidecarMeta::new(QuantizerSpec::default(), input.display().to_string())
        });
        meta.channel_order = Some(order.permutation.clone());
        write_sidecar(&meta, sidecar_path(input))?;
    }
    emit(cli, &order, || {
        let mut s = String::from("step channel ratio\n");
        for (step, &c) in order.permutation.iter().enumerate() {
            let _ = writeln!(s, "{step:>4} {c:>7} {:.6}", order.ratios[c]);
        }
        s
    })
}

fn mode_of(m: ModeArg) -> PredictionMode {
    match m {
        ModeArg::Ar => PredictionMode::Autoregressive,
        ModeArg::Parallel => PredictionMode::Parallel,
    }
}

fn train_head(
    cli: &Cli,
    data: &Path,
    mode: ModeArg,
    [embed_dim, hidden_dim, context_dim]: [usize; 3],
    tc: &TrainConfig,
    losses_path: Option<&Path>,
) -> Outcome {
    let out = required_output(cli)?;
    tc.validate()?;
    let (g, meta) = token_grid(data, &GridArgs::default())?;
    let tokens = read_tokens(data)?;
    let channels = tokens.shape().c;
    let config = HeadConfig {
        embed_dim,
        hidden_dim,
        context_dim,
        mode: mode_of(mode),
        order: meta.channel_order_or_natural(channels)?,
        ..HeadConfig::new(channels, *g.spec())
    };
    let init = ArHeadParams::init(config, cli.seed)?;
    let dataset = TokenDataset::from_tokens(&tokens, None, &g)?;
    let outcome = train(init, &dataset, tc)?;
    let losses_path =
        losses_path.map_or_else(|| with_suffix(out, ".losses.json"), Path::to_path_buf);
    let curve = serde_json::json!({
        "train_config": tc,
        "losses": outcome.losses,
    });
    save_checkpoint(&outcome.params, out)?;
    write_bytes_atomic(
        &losses_path,
        serde_json::to_string_pretty(&curve)?.as_bytes(),
    )?;
    Ok(())
}

fn label_for(params: &ArHeadParams, label: usize) -> Result<Option<usize>, Failure> {
    let k = params.config().num_classes;
    if label >= k {
        return Err(Failure::validation(format!(
            "label {label} out of range for {k} classes"
        )));
    }
    Ok(Some(label))
}

fn sample(cli: &Cli, ckpt: &Path, size: Shape, label: usize, cfg: &SampleConfig) -> Outcome {
    let out = required_output(cli)?;
    cfg.validate()?;
    let params = load_checkpoint(ckpt)?;
    let label = label_for(&params, label)?;
    let g = params.config().quantizer.build_grid()?;
    let gen = generate_batch(&params, &g, size.n, size.h, size.w, label, cfg)?;
    let mut meta = SidecarMeta::new(
        *g.spec(),
        format!("sample {} seed={}", ckpt.display(), cfg.seed),
    );
    meta.channel_order = Some(params.config().order.clone());
    let tokens_path = with_suffix(out, ".tokens.npy");
    let confidence = NpyArray::new(
        vec![size.n, size.h, size.w],
        NpyData::F8(gen.confidence.clone()),
    )
    .map_err(dimquant::Error::from)?;
    write_latents(&gen.latents, out)?;
    write_sidecar(&meta, sidecar_path(out))?;
    write_tokens(&gen.tokens, &tokens_path)?;
    write_sidecar(&meta, sidecar_path(&tokens_path))?;
    write_npy(&confidence, with_suffix(out, ".confidence.npy"))?;
    Ok(())
}

fn eval_head(cli: &Cli, ckpt: &Path, data: &Path, mode: Option<ModeArg>) -> Outcome {
    let params = load_checkpoint(ckpt)?;
    if let Some(m) = mode {
        if mode_of(m) != params.config().mode {
            return Err(Failure::validation(format!(
                "checkpoint was trained in {:?} mode",
                params.config().mode
            )));
        }
    }
    let (g, _) = token_grid(data, &GridArgs::default())?;
    if g.spec() != &params.config().quantizer {
        return Err(dimquant::Error::Metadata(
            "token file and checkpoint use different quantizers".into(),
        )
        .into());
    }
    let tokens = read_tokens(data)?;
    let dataset = TokenDataset::from_tokens(&tokens, None, &g)?;
    let report = evaluate_nll(&params, &dataset)?;
    emit(cli, &report, || {
        format!(
            "{:?}: {:.6} nats/position ({:.6} bits) over {} positions",
            report.mode, report.per_position_nats, report.per_position_bits, report.positions
        )
    })
}

#[derive(Serialize)]
struct BenchReport {
    runs: usize,
    positions_per_run: usize,
    channels: usize,
    mean_ms_per_token: f64,
    std_ms_per_token: f64,
    summary: String,
}

fn bench(cli: &Cli, ckpt: &Path, runs: usize, h: usize) -> Outcome {
    if runs < 2 {
        return Err(Failure::validation("bench needs at least 2 runs"));
    }
    let params = load_checkpoint(ckpt)?;
    let g = params.config().quantizer.build_grid()?;
    let cfg = SampleConfig {
        seed: cli.seed,
        ..Default::default()
    };
    let label = label_for(&params, 0)?;
    let positions = h * h;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    // warm-up
    generate_spatial(&params, &g, h, h, label, &cfg, &mut rng)?;
    let mut per_token = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        generate_spatial(&params, &g, h, h, label, &cfg, &mut rng)?;
        per_token.push(t.elapsed().as_secs_f64() * 1e3 / positions as f64);
    }
    let mean = per_token.iter().sum::<f64>() / runs as f64;
    let var = per_token.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
    let std = var.sqrt();
    let report = BenchReport {
        runs,
        positions_per_run: positions,
        channels: params.config().channels,
        mean_ms_per_token: mean,
        std_ms_per_token: std,
        summary: format!("{mean:.4} ± {std:.4} ms/token"),
    };
    emit(cli, &report, || report.summary.clone())
}
