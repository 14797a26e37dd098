//! Channel-wise autoregressive head over quantized tokens.
//!
//! The joint distribution of the `C` tokens at a position factorizes as
//! `Π_c p(q^c | q^{<c}, z)`, so a `B^C` vocabulary is handled as `C`
//! successive `B`-way classifications. Positions are generated in raster
//! order, each one conditioned on the dequantized features generated before.

mod checkpoint;
mod data;
mod loss;
mod model;
mod sample;
mod train;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use data::{Example, TokenDataset};
pub use loss::{
    evaluate_nll, example_nll, grad_check, loss_and_grad, nll_loss, GradCheckReport, NllReport,
    Reduction, GRAD_CHECK_FLOOR,
};
pub use model::{ArHeadParams, ContextVector, HeadConfig, PredictionMode};
pub use sample::{
    background_tokens, cfg_combine, generate_batch, generate_spatial, sample_channels,
    sample_parallel_baseline, token_confidence, ChannelSample, ConfidenceMode, Generation,
    SampleConfig, ARGMAX_TEMPERATURE,
};
pub use train::{train, TrainConfig, TrainOutcome};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::QuantizerSpec;
    use crate::synth::{gen_latents, Preset, SynthSpec};
    use crate::tensor::{Shape, TokenTensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config(mode: PredictionMode) -> HeadConfig {
        HeadConfig {
            embed_dim: 5,
            hidden_dim: 7,
            context_dim: 4,
            num_classes: 3,
            mode,
            order: vec![2, 0, 1],
            ..HeadConfig::new(3, QuantizerSpec::gaussian(6))
        }
    }

    fn random_dataset(seed: u64) -> (TokenDataset, crate::quant::QuantizerGrid) {
        let grid = QuantizerSpec::gaussian(6).build_grid().unwrap();
        let shape = Shape::new(3, 2, 2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.len())
            .map(|_| rng.random_range(0..6u16))
            .collect();
        let t = TokenTensor::new(shape, data).unwrap();
        let ds = TokenDataset::from_tokens(&t, Some(&[0, 1, 0]), &grid).unwrap();
        (ds, grid)
    }

    #[test]
    fn first_step_ignores_history_and_is_deterministic() {
        let p = ArHeadParams::init(small_config(PredictionMode::Autoregressive), 1).unwrap();
        let z = p.context(Some(&[0.1, -0.3, 2.0]), Some(1)).unwrap();
        let a = p.forward_logits(&z, &[], 0).unwrap();
        assert_eq!(a, p.forward_logits(&z, &[], 0).unwrap());
        assert_eq!(a.len(), 6);
        assert!(p.forward_logits(&z, &[1], 0).is_err());
        assert!(p.forward_logits(&z, &[], 1).is_err());
        assert!(p.forward_logits(&z, &[0, 0, 0], 3).is_err());
    }

    #[test]
    fn causality_by_perturbation() {
        let p = ArHeadParams::init(small_config(PredictionMode::Autoregressive), 2).unwrap();
        let z = p.context(None, Some(0)).unwrap();
        let prefix = [3u16, 1];
        let base: Vec<Vec<f64>> = (0..3)
            .map(|s| p.forward_logits(&z, &prefix[..s], s).unwrap())
            .collect();
        // change the token of step 1: steps 0 and 1 are untouched, step 2 moves
        let alt = [3u16, 4];
        for s in 0..2 {
            assert_eq!(p.forward_logits(&z, &alt[..s], s).unwrap(), base[s]);
        }
        assert_ne!(p.forward_logits(&z, &alt, 2).unwrap(), base[2]);
    }

    #[test]
    fn parallel_mode_ignores_prefix() {
        let p = ArHeadParams::init(small_config(PredictionMode::Parallel), 2).unwrap();
        let z = p.context(None, Some(0)).unwrap();
        assert_eq!(
            p.forward_logits(&z, &[0, 0], 2).unwrap(),
            p.forward_logits(&z, &[5, 3], 2).unwrap()
        );
    }

    #[test]
    fn uniform_logits_give_ln_b() {
        let mut p = ArHeadParams::init(small_config(PredictionMode::Autoregressive), 3).unwrap();
        let l = p.layout.clone();
        // zero output heads: every prediction is uniform
        p.values[l.heads..].iter_mut().for_each(|v| *v = 0.0);
        let (ds, _) = random_dataset(4);
        let loss = nll_loss(&p, ds.examples()).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn peaked_logits_give_small_loss() {
        let mut p = ArHeadParams::init(small_config(PredictionMode::Autoregressive), 3).unwrap();
        let l = p.layout.clone();
        let b = 6;
        p.values[l.heads..].iter_mut().for_each(|v| *v = 0.0);
        for s in 0..3 {
            p.values[l.heads + s * l.head_stride + b * 7 + 2] = 60.0;
        }
        let tokens = [2u16, 2, 2];
        let ex = Example {
            summary: None,
            label: Some(0),
            tokens: &tokens,
        };
        assert!(nll_loss(&p, [ex]).unwrap() < 1e-20);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for mode in [PredictionMode::Autoregressive, PredictionMode::Parallel] {
            let p = ArHeadParams::init(small_config(mode), 5).unwrap();
            let (ds, _) = random_dataset(6);
            let batch: Vec<Example<'_>> = ds.examples().collect();
            let report = grad_check(&p, &batch, 1e-5, p.num_params(), 9).unwrap();
            assert!(report.max_rel_error <= 1e-6, "{mode:?}: {report:?}");
        }
    }

    #[test]
    fn unused_class_row_has_zero_gradient() {
        let p = ArHeadParams::init(small_config(PredictionMode::Autoregressive), 5).unwrap();
        let (ds, _) = random_dataset(6);
        let batch: Vec<Example<'_>> = ds.examples().collect();
        let (_, grad) = loss_and_grad(&p, &batch, Reduction::Mean).unwrap();
        let l = &p.layout;
        let dz = p.config.context_dim;
        // labels used: 0 and 1; class 2 and the null row are untouched
        for row in [2, 3] {
            let g = &grad[l.class_embed + row * dz..l.class_embed + (row + 1) * dz];
            assert!(g.iter().all(|&v| v == 0.0));
        }
        let g1 = &grad[l.class_embed + dz..l.class_embed + 2 * dz];
        assert!(g1.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn gradient_is_linear_in_the_loss() {
        let p = ArHeadParams::init(small_config(PredictionMode::Autoregressive), 5).unwrap();
        let (ds, _) = random_dataset(6);
        let batch: Vec<Example<'_>> = ds.examples().collect();
        let doubled: Vec<Example<'_>> = batch.iter().chain(batch.iter()).copied().collect();
        let (l1, g1) = loss_and_grad(&p, &batch, Reduction::Sum).unwrap();
        let (l2, g2) = loss_and_grad(&p, &doubled, Reduction::Sum).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12 * l2);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn softmax_sums_to_one_and_temperature_raises_entropy() {
        let p = ArHeadParams::init(small_config(PredictionMode::Autoregressive), 8).unwrap();
        let z = p.context(None, Some(2)).unwrap();
        let logits = p.forward_logits(&z, &[1], 1).unwrap();
        let mut last = -1.0;
        for tau in [0.1, 0.5, 0.97, 1.0, 2.0, 10.0] {
            let mut v: Vec<f64> = logits.iter().map(|x| x / tau).collect();
            model::softmax_in_place(&mut v);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let h: f64 = v.iter().filter(|&&q| q > 0.0).map(|q| -q * q.ln()).sum();
            assert!(h >= last - 1e-12);
            last = h;
        }
    }

    #[test]
    fn cfg_combine_identities() {
        let cond = [1.0, 0.0, -2.0];
        let uncond = [0.5, 0.25, 1.0];
        assert_eq!(cfg_combine(&cond, &uncond, 0.0).unwrap(), uncond);
        assert_eq!(cfg_combine(&cond, &uncond, 1.0).unwrap(), cond);
        assert_eq!(
            cfg_combine(&[1.0, 0.0], &[0.0, 0.0], 2.0).unwrap(),
            vec![2.0, 0.0]
        );
        assert!(cfg_combine(&[1.0], &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn confidence_scores() {
        assert_eq!(token_confidence(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert!((token_confidence(&[1.0 / 64.0; 16]).unwrap() - 1.0 / 64.0).abs() < 1e-15);
        assert!((token_confidence(&[0.5, 0.125]).unwrap() - 0.25).abs() < 1e-15);
        assert!(token_confidence(&[0.0, 1.0]).is_err());
        assert!(token_confidence(&[]).is_err());
    }

    #[test]
    fn confidence_mode_parsing() {
        assert_eq!(
            "off".parse::<ConfidenceMode>().unwrap(),
            ConfidenceMode::Off
        );
        assert_eq!(
            "topk:5".parse::<ConfidenceMode>().unwrap(),
            ConfidenceMode::TopK(5)
        );
        assert_eq!(
            "thr:0.25".parse::<ConfidenceMode>().unwrap(),
            ConfidenceMode::Threshold(0.25)
        );
        assert!("thr:2".parse::<ConfidenceMode>().is_err());
        assert!("top:3".parse::<ConfidenceMode>().is_err());
    }

    #[test]
    fn argmax_limit_and_unit_guidance() {
        let p = ArHeadParams::init(small_config(PredictionMode::Autoregressive), 10).unwrap();
        let cond = p.context(None, Some(1)).unwrap();
        let uncond = p.context(None, None).unwrap();
        let cold = SampleConfig {
            temperature: 1e-9,
            guidance_scale: 1.0,
            ..Default::default()
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let a = sample_channels(&p, &cond, None, &cold, &mut r1).unwrap();
        let b = sample_channels(&p, &cond, None, &cold, &mut r2).unwrap();
        assert_eq!(a, b);
        // the argmax path picks the most likely token at every step
        let first = p.config.order[0];
        let logits = p.forward_logits(&cond, &[], 0).unwrap();
        let best = (0..6)
            .max_by(|&i, &j| logits[i].total_cmp(&logits[j]))
            .unwrap();
        assert_eq!(a.tokens[first] as usize, best);

        let unit = SampleConfig {
            temperature: 1.0,
            guidance_scale: 1.0,
            ..Default::default()
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let with = sample_channels(&p, &cond, Some(&uncond), &unit, &mut r1).unwrap();
        let without = sample_channels(&p, &cond, None, &unit, &mut r2).unwrap();
        assert_eq!(with, without);

        let guided = SampleConfig::default();
        assert!(sample_channels(&p, &cond, None, &guided, &mut r1).is_err());
        assert!(sample_channels(&p, &cond, Some(&uncond), &guided, &mut r1).is_ok());
    }

    #[test]
    fn parallel_baseline_requires_parallel_head() {
        let ar = ArHeadParams::init(small_config(PredictionMode::Autoregressive), 1).unwrap();
        let par = ArHeadParams::init(small_config(PredictionMode::Parallel), 1).unwrap();
        let z = par.context(None, Some(0)).unwrap();
        let cfg = SampleConfig {
            guidance_scale: 1.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_parallel_baseline(&ar, &z, None, &cfg, &mut rng).is_err());
        let a = sample_parallel_baseline(&par, &z, None, &cfg, &mut ChaCha8Rng::seed_from_u64(4))
            .unwrap();
        let b = sample_parallel_baseline(&par, &z, None, &cfg, &mut ChaCha8Rng::seed_from_u64(4))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_position_generation_is_one_channel_sample() {
        let p = ArHeadParams::init(small_config(PredictionMode::Autoregressive), 11).unwrap();
        let grid = QuantizerSpec::gaussian(6).build_grid().unwrap();
        let cfg = SampleConfig::default();
        let g = generate_spatial(
            &p,
            &grid,
            1,
            1,
            Some(0),
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        let cond = p.context(None, Some(0)).unwrap();
        let uncond = p.context(None, None).unwrap();
        let s = sample_channels(
            &p,
            &cond,
            Some(&uncond),
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        assert_eq!(g.tokens.data(), s.tokens.as_slice());
        assert_eq!(g.confidence, vec![token_confidence(&s.probs).unwrap()]);
    }

    #[test]
    fn generation_feedback_and_confidence_selection() {
        let p = ArHeadParams::init(small_config(PredictionMode::Autoregressive), 12).unwrap();
        let grid = QuantizerSpec::gaussian(6).build_grid().unwrap();
        let base = SampleConfig {
            seed: 3,
            ..Default::default()
        };
        let full = generate_batch(&p, &grid, 2, 3, 4, Some(2), &base).unwrap();
        assert_eq!(full.tokens.shape(), Shape::new(2, 3, 4, 3).unwrap());
        assert!(full
            .feedback
            .iter()
            .all(|v| grid.decoded_values().contains(v)));
        assert_eq!(
            full,
            generate_batch(&p, &grid, 2, 3, 4, Some(2), &base).unwrap()
        );
        assert!(generate_batch(&p, &grid, 1, 2, 2, Some(3), &base).is_err());

        let topk = SampleConfig {
            confidence: ConfidenceMode::TopK(5),
            ..base.clone()
        };
        let g = generate_batch(&p, &grid, 2, 3, 4, Some(2), &topk).unwrap();
        assert_eq!(g.feedback, full.feedback);
        let background = background_tokens(&grid, 3);
        for n in 0..2 {
            let kept = &g.kept[n * 12..(n + 1) * 12];
            assert_eq!(kept.iter().filter(|&&k| k).count(), 5);
            let conf = &g.confidence[n * 12..(n + 1) * 12];
            let min_kept = (0..12)
                .filter(|&i| kept[i])
                .map(|i| conf[i])
                .fold(1.0, f64::min);
            for i in 0..12 {
                let v = g.tokens.vector(n, i / 4, i % 4);
                if kept[i] {
                    assert_eq!(v, full.tokens.vector(n, i / 4, i % 4));
                } else {
                    assert!(conf[i] <= min_kept);
                    assert_eq!(v, background.as_slice());
                }
            }
        }
        let thr = SampleConfig {
            confidence: ConfidenceMode::Threshold(0.3),
            ..base
        };
        let g = generate_batch(&p, &grid, 2, 3, 4, Some(2), &thr).unwrap();
        for (k, c) in g.kept.iter().zip(&g.confidence) {
            assert_eq!(*k, *c >= 0.3);
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let spec = SynthSpec::new(Shape::new(40, 4, 4, 2).unwrap(), Preset::CopyChannel, 1)
            .with_scale(5.0 / 3.0);
        let grid = QuantizerSpec::gaussian(8).build_grid().unwrap();
        let tokens = grid.encode_tensor(&gen_latents(&spec).unwrap()).unwrap();
        let ds = TokenDataset::from_tokens(&tokens, None, &grid).unwrap();
        let cfg = HeadConfig {
            hidden_dim: 32,
            ..HeadConfig::new(2, *grid.spec())
        };
        let init = ArHeadParams::init(cfg, 0).unwrap();

        let zero = train(
            init.clone(),
            &ds,
            &TrainConfig {
                steps: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(zero.params, init);
        assert!(zero.losses.is_empty());

        let tc = TrainConfig {
            steps: 300,
            batch_size: 64,
            learning_rate: 3e-3,
            seed: 7,
            ..Default::default()
        };
        let a = train(init.clone(), &ds, &tc).unwrap();
        let b = train(init.clone(), &ds, &tc).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.losses, b.losses);
        let before = nll_loss(&init, ds.examples()).unwrap();
        let after = nll_loss(&a.params, ds.examples()).unwrap();
        assert!(after < before);
        assert!(after < 8f64.ln());
        assert!(a.losses.last().unwrap() < a.losses.first().unwrap());
    }

    #[test]
    fn divergence_is_reported() {
        let (ds, _) = random_dataset(1);
        let mut p = ArHeadParams::init(small_config(PredictionMode::Autoregressive), 1).unwrap();
        p.values[0] = f64::NAN;
        let err = train(
            p,
            &ds,
            &TrainConfig {
                steps: 3,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, crate::Error::Divergence { step: 0, .. }));
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let p = ArHeadParams::init(small_config(PredictionMode::Parallel), 13).unwrap();
        let bytes = checkpoint_bytes(&p).unwrap();
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(back.config, p.config);
        assert!(back
            .values
            .iter()
            .zip(&p.values)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        let mut corrupt = bytes.clone();
        corrupt.truncate(bytes.len() - 3);
        assert!(checkpoint_from_bytes(&corrupt).is_err());
        let mut versioned = bytes;
        versioned[8] = 9;
        assert!(matches!(
            checkpoint_from_bytes(&versioned),
            Err(crate::Error::Upgrade { found: 9, .. })
        ));
    }
}
