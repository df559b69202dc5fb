//! Property tests for the algebraic invariants the library leans on:
//! transform inversion, quantizer geometry, persistence bit-exactness,
//! metric symmetry, and schedule shape.

use proptest::prelude::*;

use rescale_core::autodiff::Graph;
use rescale_core::config::{CodecKind, RunConfig};
use rescale_core::imaging::metrics::PSNR_CAP_DB;
use rescale_core::imaging::{bicubic_resize, psnr, ssim};
use rescale_core::invnet::{quantize, AdpKind, Codec, InvertibleRescaler};
use rescale_core::numerics::rng::SeededRng;
use rescale_core::refiner::{one_step_denoise, NoiseSchedule};
use rescale_core::scalar::to_f64;
use rescale_core::training::checkpoint::{decode_checkpoint, encode_checkpoint};
use rescale_core::training::AdamW;
use rescale_core::transforms::{
    haar_forward, haar_inverse, lrt_forward, lrt_inverse, OrthogonalKernel,
    ORTHOGONALITY_BUDGET,
};
use rescale_core::{Tensor, Tensor32, Tensor64};

fn max_abs_diff(a: &Tensor32, b: &Tensor32) -> f64 {
    to_f64(a.sub(b).unwrap().max_abs())
}

fn seeded_image(dims: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor32 {
    let mut rng = SeededRng::new(seed);
    rng.tensor_uniform(dims, lo, hi)
}

fn config_strategy() -> impl Strategy<Value = RunConfig> {
    (
        (0usize..=2, any::<bool>(), 1usize..=64, 0usize..=2, 1usize..=16, 1usize..=128),
        (1e-6f64..1e-2, 1e-2f64..0.1, 0.0f64..10.0, 0.0f64..10.0, 0.0f64..10.0, 0.0f64..10.0),
        (1e-6f64..1.0, 2usize..=2000, 1usize..=10_000, 0usize..=10_000),
        (1usize..=16, 1usize..=8, any::<u64>()),
    )
        .prop_map(
            |(
                (scale_code, tiny, hidden, adp_code, adp_tile, embed_dim),
                (beta_start, beta_end, w_pixel, w_feat, w_lr, w_sem),
                (lr, t_max, lr_halve_every, steps),
                (batch, crop_mul, seed),
            )| {
                let scale = [2, 4, 8][scale_code];
                let codec = if tiny { CodecKind::TinyAe } else { CodecKind::Identity };
                let crop = crop_mul * scale * codec.spatial_factor();
                RunConfig {
                    scale,
                    codec,
                    hidden,
                    adp: [AdpKind::Zeros, AdpKind::Random, AdpKind::Learnable][adp_code],
                    adp_tile,
                    embed_dim,
                    t_max,
                    beta_start,
                    beta_end,
                    w_pixel,
                    w_feat,
                    w_lr,
                    w_sem,
                    lr,
                    lr_halve_every,
                    steps,
                    batch,
                    crop,
                    seed,
                }
            },
        )
}

proptest! {
    #[test]
    fn haar_roundtrip_is_identity(
        c in 1usize..=3,
        kh in 1usize..=3,
        kw in 1usize..=3,
        seed in any::<u64>(),
    ) {
        let x = seeded_image(&[c, 2 * kh, 2 * kw], -2.0, 2.0, seed);
        let back = haar_inverse(&haar_forward(&x).unwrap()).unwrap();
        prop_assert!(max_abs_diff(&back, &x) < 1e-5);
    }

    #[test]
    fn lrt_roundtrip_is_identity(
        c in 1usize..=2,
        scale in 2usize..=3,
        k in 1usize..=2,
        seed in any::<u64>(),
    ) {
        let mut rng = SeededRng::new(seed);
        let kernel = OrthogonalKernel::<f32>::random(c, scale, &mut rng).unwrap();
        prop_assert!(kernel.ortho_error() < ORTHOGONALITY_BUDGET);
        let x: Tensor32 = rng.tensor_uniform(&[c, scale * k, scale * k], -2.0, 2.0);
        let back = lrt_inverse(&lrt_forward(&x, &kernel).unwrap(), &kernel).unwrap();
        prop_assert!(max_abs_diff(&back, &x) < 1e-4);
    }

    #[test]
    fn quantizer_lands_on_the_byte_grid(
        values in prop::collection::vec(-1.5f32..2.5, 1..48),
    ) {
        let x = Tensor::new(&[values.len()], values.clone()).unwrap();
        let q = quantize(&x);
        let again = quantize(&q);
        for (i, (&qv, &v)) in q.data().iter().zip(&values).enumerate() {
            prop_assert!((0.0..=1.0).contains(&qv));
            let steps = f64::from(qv) * 255.0;
            prop_assert!((steps - steps.round()).abs() < 1e-3);
            prop_assert!((f64::from(qv) - f64::from(v.clamp(0.0, 1.0))).abs() <= 0.5 / 255.0 + 1e-6);
            prop_assert_eq!(again.data()[i].to_bits(), qv.to_bits());
        }
    }

    #[test]
    fn checkpoint_roundtrip_preserves_bits(
        shapes in prop::collection::vec((1usize..=3, 1usize..=4, 1usize..=4), 1..4),
        seed in any::<u64>(),
    ) {
        let entries: Vec<(String, Tensor<f32>)> = shapes
            .iter()
            .enumerate()
            .map(|(i, &(c, h, w))| {
                (format!("t{i}"), seeded_image(&[c, h, w], -3.0, 3.0, seed.wrapping_add(i as u64)))
            })
            .collect();
        let decoded = decode_checkpoint(&encode_checkpoint(&entries).unwrap()).unwrap();
        prop_assert_eq!(decoded.len(), entries.len());
        for ((na, ta), (nb, tb)) in decoded.iter().zip(&entries) {
            prop_assert_eq!(na, nb);
            prop_assert_eq!(ta.dims(), tb.dims());
            for (a, b) in ta.data().iter().zip(tb.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn config_scalar_roundtrip_is_exact(cfg in config_strategy()) {
        let back = RunConfig::from_scalar_entries(&cfg.scalar_entries()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn psnr_and_ssim_are_symmetric_and_self_perfect(
        c in 1usize..=3,
        h in 11usize..=14,
        w in 11usize..=14,
        seed in any::<u64>(),
    ) {
        let a = seeded_image(&[c, h, w], 0.0, 1.0, seed);
        let b = seeded_image(&[c, h, w], 0.0, 1.0, seed.wrapping_add(1));
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn resize_to_same_size_is_identity(
        c in 1usize..=3,
        h in 1usize..=8,
        w in 1usize..=8,
        seed in any::<u64>(),
    ) {
        let x = seeded_image(&[c, h, w], 0.0, 1.0, seed);
        let same = bicubic_resize(&x, h, w).unwrap();
        prop_assert!(max_abs_diff(&same, &x) < 1e-6);
    }

    #[test]
    fn denoising_inverts_corruption_at_any_step(
        t_max in 2usize..=100,
        frac in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let t = 1 + (frac * (t_max - 1) as f64).floor() as usize;
        let sched = NoiseSchedule::new(t_max, 1e-4, 0.02).unwrap();
        let mut rng = SeededRng::new(seed);
        let clean: Tensor64 = rng.tensor_uniform(&[2, 3, 3], -1.0, 1.0);
        let eps: Tensor64 = rng.tensor_uniform(&[2, 3, 3], -1.0, 1.0);
        let ab = sched.alpha_bar(t).unwrap();
        let corrupted = clean.scale(ab.sqrt()).add(&eps.scale((1.0 - ab).sqrt())).unwrap();
        let back = one_step_denoise(&corrupted, &eps, &sched, t).unwrap();
        prop_assert!(to_f64(back.sub(&clean).unwrap().max_abs()) < 1e-9);
    }

    #[test]
    fn learning_rate_halves_on_schedule(
        lr0 in 1e-6f64..1.0,
        halve in 1usize..=50,
        t in 1usize..=200,
    ) {
        let opt = AdamW::<f32>::new(lr0, 0.0, halve).unwrap();
        prop_assert_eq!(opt.lr_at(1), lr0);
        prop_assert!(opt.lr_at(t + 1) <= opt.lr_at(t));
        let ratio = opt.lr_at(t + halve) / opt.lr_at(t);
        prop_assert!((ratio - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pixel_shuffle_inverts_unshuffle(
        c in 1usize..=2,
        s in 2usize..=3,
        k in 1usize..=2,
        seed in any::<u64>(),
    ) {
        let x = seeded_image(&[c, s * k, s * k], -1.0, 1.0, seed);
        let mut g: Graph<f32> = Graph::new();
        let xv = g.leaf(x.clone(), "x");
        let u = g.pixel_unshuffle(xv, s).unwrap();
        let back = g.pixel_shuffle(u, s).unwrap();
        prop_assert_eq!(g.value(back).dims(), x.dims());
        for (a, b) in g.value(back).data().iter().zip(x.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn split_streams_are_deterministic(
        seed in any::<u64>(),
        label in "[a-z]{1,8}",
        n in 1usize..=1000,
    ) {
        let mut a = SeededRng::new(seed).split(&label);
        let mut b = SeededRng::new(seed).split(&label);
        for _ in 0..8 {
            prop_assert_eq!(a.uniform_f64().to_bits(), b.uniform_f64().to_bits());
        }
        let draw = a.below(n);
        prop_assert!(draw < n);
        prop_assert_eq!(draw, b.below(n));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rescaler_inverts_given_the_true_detail(
        hidden in 1usize..=2,
        k in 1usize..=2,
        seed in any::<u64>(),
    ) {
        let mut rng = SeededRng::new(seed);
        let model = InvertibleRescaler::<f32>::seeded(
            Codec::Identity,
            2,
            hidden,
            1.0,
            AdpKind::Zeros,
            2,
            &mut rng.split("model"),
        )
        .unwrap();
        let x: Tensor32 = rng.tensor_uniform(&[3, 2 * k, 2 * k], 0.0, 1.0);
        let (lr, hf) = model.downscale_full(&x, false).unwrap();
        let back = model.upscale(&lr, Some(&hf)).unwrap();
        prop_assert!(max_abs_diff(&back, &x) < 1e-4);
    }
}
