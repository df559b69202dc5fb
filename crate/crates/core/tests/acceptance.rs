//! Release acceptance suite: one test per shipping criterion, each printing
//! a single PASS/FAIL line with the measurement behind its verdict. The
//! training-dependent criteria share one toy run built on first use.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rescale_core::autodiff::{check_gradients, Graph, Var};
use rescale_core::config::RunConfig;
use rescale_core::imaging::{bicubic_resize, psnr, ssim, textured_dataset};
use rescale_core::invnet::{
    AdpKind, Codec, CodecVars, InvertibleRescaler, LatentCodec, TinyAutoencoder,
};
use rescale_core::nn::ParamVars;
use rescale_core::numerics::rng::SeededRng;
use rescale_core::pipeline::RescalerModel;
use rescale_core::refiner::{
    one_step_denoise, ConditionedResidualNet, NoiseSchedule, PixelSemanticEmbedder, Predictor,
    PredictorVars,
};
use rescale_core::scalar::to_f64;
use rescale_core::training::checkpoint::decode_checkpoint;
use rescale_core::training::loss::LossWeights;
use rescale_core::training::{AdamW, TrainRecord, Trainer};
use rescale_core::transforms::{haar_forward, lrt_forward, OrthogonalKernel};
use rescale_core::{Scalar, Tensor, Tensor32, Tensor64};

fn verdict(name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("acceptance {name}: {tag} ({detail})");
    assert!(pass, "acceptance {name}: FAIL ({detail})");
}

fn max_abs_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    to_f64(a.sub(b).unwrap().max_abs())
}

/// Shared toy training run: 4x rescaler, 64x64 crops, 32 synthetic images,
/// 5000 steps. Built once; the orthogonality, ablation, and quality criteria
/// all read from it.
struct ToyRun {
    images: Vec<Tensor32>,
    records: Vec<TrainRecord>,
    elapsed_at_1000: Duration,
    elapsed_total: Duration,
    trainer: Trainer<f32>,
}

const TOY_STEPS: usize = 5000;

fn toy_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.scale = 4;
    cfg.hidden = 4;
    cfg.embed_dim = 64;
    cfg.adp_tile = 16;
    cfg.crop = 64;
    cfg.batch = 1;
    cfg.lr = 2e-3;
    cfg.lr_halve_every = 2000;
    cfg.steps = TOY_STEPS;
    cfg.seed = 41;
    cfg.validate().unwrap();
    cfg
}

fn toy() -> &'static ToyRun {
    static TOY: OnceLock<ToyRun> = OnceLock::new();
    TOY.get_or_init(|| {
        let cfg = toy_config();
        let images = textured_dataset::<f32>(32, 64, 64, 2, 99);
        let mut trainer = Trainer::new(RescalerModel::seeded(&cfg).unwrap()).unwrap();
        let mut records = Vec::with_capacity(TOY_STEPS);
        let start = Instant::now();
        let mut elapsed_at_1000 = Duration::ZERO;
        for step in 1..=TOY_STEPS {
            records.push(trainer.run_step(&images).unwrap());
            if step == 1000 {
                elapsed_at_1000 = start.elapsed();
            }
        }
        let elapsed_total = start.elapsed();
        ToyRun { images, records, elapsed_at_1000, elapsed_total, trainer }
    })
}

fn mean_reconstruction_psnr(model: &RescalerModel<f32>, images: &[Tensor32]) -> f64 {
    let mut acc = 0.0;
    for x in images {
        let (lr, _) = model.downscale(x).unwrap();
        acc += psnr(&model.reconstruct(&lr).unwrap(), x).unwrap();
    }
    acc / images.len() as f64
}

#[test]
fn criterion_01_true_detail_inversion() {
    let start = Instant::now();
    let root = SeededRng::new(0xAC01);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let rng = root.split(&format!("pair{i}"));
        let scale = [2usize, 2, 4, 4, 8][i % 5];
        let hidden = 2 + i % 3;
        let codec = if i % 4 == 0 {
            Codec::Tiny(TinyAutoencoder::seeded(3, &mut rng.split("codec")))
        } else {
            Codec::Identity
        };
        let spatial_factor = match codec {
            Codec::Identity => 1,
            Codec::Tiny(_) => 4,
        };
        let model = InvertibleRescaler::<f32>::seeded(
            codec,
            scale,
            hidden,
            1.0,
            AdpKind::Zeros,
            2,
            &mut rng.split("model"),
        )
        .unwrap();
        let side = scale * spatial_factor * (2 + i % 2);
        let x: Tensor32 = rng.split("x").tensor_uniform(&[3, side, side], 0.0, 1.0);
        let latent = model.codec.encode(&x).unwrap();
        let (lr, hf) = model.downscale_full(&x, false).unwrap();
        let back = model.upscale(&lr, Some(&hf)).unwrap();
        worst = worst.max(max_abs_diff(&back, &latent));
    }
    let dt = start.elapsed();
    verdict(
        "C1 (true-detail inversion)",
        worst < 1e-3 && dt < Duration::from_secs(30),
        &format!("worst latent error {worst:.2e} over 100 random model/input pairs in {dt:.2?}"),
    );
}

#[test]
fn criterion_02_kernel_orthogonality_under_training() {
    let run = toy();
    let first = &run.records[..1000];
    let worst = first.iter().map(|r| r.ortho_err).fold(0.0f64, f64::max);
    verdict(
        "C2 (kernel orthogonality under training)",
        first.len() == 1000 && worst < 1e-4 && run.elapsed_at_1000 < Duration::from_secs(120),
        &format!(
            "worst logged ||W^T W - I||_inf {worst:.2e} across steps 1..=1000, reached in {:.1?}",
            run.elapsed_at_1000
        ),
    );
}

#[test]
fn criterion_03_haar_agreement() {
    let root = SeededRng::new(0xAC03);
    let kernel = OrthogonalKernel::<f32>::haar(3);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let mut rng = root.split(&format!("img{i}"));
        let h = 2 * (2 + i % 7);
        let w = 2 * (2 + (i / 7) % 7);
        let x: Tensor32 = rng.tensor_uniform(&[3, h, w], 0.0, 1.0);
        let via_kernel = lrt_forward(&x, &kernel).unwrap();
        let direct = haar_forward(&x).unwrap();
        worst = worst.max(max_abs_diff(&via_kernel, &direct));
    }
    verdict(
        "C3 (haar agreement)",
        worst < 1e-5,
        &format!("worst |kernel - direct haar| {worst:.2e} over 100 random images"),
    );
}

// -- criterion 4: every trainable op family gradchecks against central
//    differences, five random probe points each, in f64.

const GRADCHECK_H: f64 = 1e-6;
const GRADCHECK_TOL: f64 = 1e-3;

/// Initial tensors of a module in visit order, restricted to one prefix.
fn collect_params<T: Scalar>(
    visit: impl Fn(&mut dyn FnMut(&str, &Tensor<T>)),
    want: &[&str],
) -> Vec<Tensor<T>> {
    let mut found: Vec<(String, Tensor<T>)> = Vec::new();
    visit(&mut |name, t| found.push((name.to_string(), t.clone())));
    want.iter()
        .map(|w| {
            found
                .iter()
                .find(|(n, _)| n == w)
                .unwrap_or_else(|| panic!("missing parameter {w}"))
                .1
                .clone()
        })
        .collect()
}

fn gradcheck_kernel(seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let model = InvertibleRescaler::<f64>::seeded(
        Codec::Identity,
        2,
        2,
        1.0,
        AdpKind::Zeros,
        2,
        &mut rng.split("model"),
    )
    .unwrap();
    let lr: Tensor64 = rng.tensor_uniform(&[3, 2, 2], 0.0, 1.0);
    let hf: Tensor64 = rng.tensor_uniform(&[9, 2, 2], -0.3, 0.3);
    check_gradients(
        &|g: &mut Graph<f64>, vars: &[Var]| {
            let mut reg = ParamVars::new();
            let mut mv = model.register(g, "m", &mut reg);
            mv.kernel_w = vars[0];
            let lrv = g.leaf(lr.clone(), "lr");
            let hfv = g.leaf(hf.clone(), "hf");
            let up = mv.upscale(g, lrv, hfv)?;
            Ok(g.mean_all(up))
        },
        &[model.kernel.w().clone()],
        GRADCHECK_H,
    )
    .unwrap()
}

fn gradcheck_coupling(seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let model = InvertibleRescaler::<f64>::seeded(
        Codec::Identity,
        2,
        2,
        1.0,
        AdpKind::Zeros,
        2,
        &mut rng.split("model"),
    )
    .unwrap();
    let names = [
        "m.blocks.0.phi.conv1.weight",
        "m.blocks.0.phi.conv1.bias",
        "m.blocks.0.phi.conv2.weight",
        "m.blocks.0.phi.conv2.bias",
        "m.blocks.0.rho.conv1.weight",
        "m.blocks.0.rho.conv1.bias",
        "m.blocks.0.rho.conv2.weight",
        "m.blocks.0.rho.conv2.bias",
        "m.blocks.0.eta.conv1.weight",
        "m.blocks.0.eta.conv1.bias",
        "m.blocks.0.eta.conv2.weight",
        "m.blocks.0.eta.conv2.bias",
    ];
    let inputs = collect_params(|f| model.visit("m", f), &names);
    let lr: Tensor64 = rng.tensor_uniform(&[3, 2, 2], 0.0, 1.0);
    let hf: Tensor64 = rng.tensor_uniform(&[9, 2, 2], -0.3, 0.3);
    check_gradients(
        &|g: &mut Graph<f64>, vars: &[Var]| {
            let mut reg = ParamVars::new();
            let mut mv = model.register(g, "m", &mut reg);
            let blk = &mut mv.blocks[0];
            blk.phi.conv1.w = vars[0];
            blk.phi.conv1.b = vars[1];
            blk.phi.conv2.w = vars[2];
            blk.phi.conv2.b = vars[3];
            blk.rho.conv1.w = vars[4];
            blk.rho.conv1.b = vars[5];
            blk.rho.conv2.w = vars[6];
            blk.rho.conv2.b = vars[7];
            blk.eta.conv1.w = vars[8];
            blk.eta.conv1.b = vars[9];
            blk.eta.conv2.w = vars[10];
            blk.eta.conv2.b = vars[11];
            let lrv = g.leaf(lr.clone(), "lr");
            let hfv = g.leaf(hf.clone(), "hf");
            let up = mv.upscale(g, lrv, hfv)?;
            Ok(g.mean_all(up))
        },
        &inputs,
        GRADCHECK_H,
    )
    .unwrap()
}

fn gradcheck_prior(seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let model = InvertibleRescaler::<f64>::seeded(
        Codec::Identity,
        2,
        2,
        1.0,
        AdpKind::Learnable,
        2,
        &mut rng.split("model"),
    )
    .unwrap();
    let lr: Tensor64 = rng.tensor_uniform(&[3, 4, 4], 0.0, 1.0);
    let tile: Tensor64 = rng.tensor_uniform(&[9, 2, 2], -0.3, 0.3);
    check_gradients(
        &|g: &mut Graph<f64>, vars: &[Var]| {
            let mut reg = ParamVars::new();
            let mut mv = model.register(g, "m", &mut reg);
            mv.adp_tile = vars[0];
            let lrv = g.leaf(lr.clone(), "lr");
            let prior = mv.adp_map(g, 4, 4)?;
            let up = mv.upscale(g, lrv, prior)?;
            Ok(g.mean_all(up))
        },
        &[tile],
        GRADCHECK_H,
    )
    .unwrap()
}

fn gradcheck_embedder(seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let pse = PixelSemanticEmbedder::<f64>::seeded(2, 3, &mut rng.split("pse"));
    let names = [
        "pse.proj.weight",
        "pse.proj.bias",
        "pse.fc1.weight",
        "pse.fc1.bias",
        "pse.fc2.weight",
        "pse.fc2.bias",
        "pse.fc3.weight",
        "pse.fc3.bias",
    ];
    let inputs = collect_params(|f| pse.visit("pse", f), &names);
    let lr: Tensor64 = rng.tensor_uniform(&[3, 4, 4], 0.0, 1.0);
    check_gradients(
        &|g: &mut Graph<f64>, vars: &[Var]| {
            let mut pv = pse.register(g, "pse", None);
            pv.proj.w = vars[0];
            pv.proj.b = vars[1];
            pv.fc1.w = vars[2];
            pv.fc1.b = vars[3];
            pv.fc2.w = vars[4];
            pv.fc2.b = vars[5];
            pv.fc3.w = vars[6];
            pv.fc3.b = vars[7];
            let lrv = g.leaf(lr.clone(), "lr");
            let c = pv.forward(g, lrv)?;
            Ok(g.mean_all(c))
        },
        &inputs,
        GRADCHECK_H,
    )
    .unwrap()
}

fn gradcheck_predictor(seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let sched = NoiseSchedule::new(10, 1e-4, 0.02).unwrap();
    let pred = Predictor::Net(ConditionedResidualNet::<f64>::seeded(
        3,
        2,
        3,
        sched,
        &mut rng.split("net"),
    ));
    let names = [
        "pred.conv_in.weight",
        "pred.conv_in.bias",
        "pred.film1.weight",
        "pred.film1.bias",
        "pred.conv_mid.weight",
        "pred.conv_mid.bias",
        "pred.film2.weight",
        "pred.film2.bias",
        "pred.conv_out.weight",
        "pred.conv_out.bias",
    ];
    let inputs = collect_params(|f| pred.visit("pred", f), &names);
    let f_t: Tensor64 = rng.tensor_uniform(&[3, 4, 4], -0.5, 0.5);
    let c_s: Tensor64 = rng.tensor_uniform(&[3], -0.5, 0.5);
    check_gradients(
        &|g: &mut Graph<f64>, vars: &[Var]| {
            let mut pv = pred.register(g, "pred", None);
            match &mut pv {
                PredictorVars::Net { conv_in, film1, conv_mid, film2, conv_out, .. } => {
                    conv_in.w = vars[0];
                    conv_in.b = vars[1];
                    film1.w = vars[2];
                    film1.b = vars[3];
                    conv_mid.w = vars[4];
                    conv_mid.b = vars[5];
                    film2.w = vars[6];
                    film2.b = vars[7];
                    conv_out.w = vars[8];
                    conv_out.b = vars[9];
                }
                PredictorVars::Identity { .. } => unreachable!("registered a net"),
            }
            let ftv = g.leaf(f_t.clone(), "f_t");
            let csv = g.leaf(c_s.clone(), "c_s");
            let out = pv.refine(g, ftv, csv)?;
            Ok(g.mean_all(out))
        },
        &inputs,
        GRADCHECK_H,
    )
    .unwrap()
}

fn gradcheck_codec(seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let codec = Codec::Tiny(TinyAutoencoder::<f64>::seeded(2, &mut rng.split("ae")));
    let names = [
        "codec.enc1.weight",
        "codec.enc1.bias",
        "codec.enc2.weight",
        "codec.enc2.bias",
        "codec.dec1.weight",
        "codec.dec1.bias",
        "codec.dec2.weight",
        "codec.dec2.bias",
    ];
    let inputs = collect_params(|f| codec.visit("codec", f), &names);
    let x: Tensor64 = rng.tensor_uniform(&[3, 4, 4], 0.0, 1.0);
    check_gradients(
        &|g: &mut Graph<f64>, vars: &[Var]| {
            let mut reg = ParamVars::new();
            let mut cv = CodecVars::register_trainable(&codec, g, "codec", &mut reg);
            match &mut cv {
                CodecVars::Tiny { enc1, enc2, dec1, dec2 } => {
                    enc1.w = vars[0];
                    enc1.b = vars[1];
                    enc2.w = vars[2];
                    enc2.b = vars[3];
                    dec1.w = vars[4];
                    dec1.b = vars[5];
                    dec2.w = vars[6];
                    dec2.b = vars[7];
                }
                CodecVars::Identity => unreachable!("registered the tiny codec"),
            }
            let xv = g.leaf(x.clone(), "x");
            let lat = cv.encode(g, xv)?;
            let back = cv.decode(g, lat)?;
            Ok(g.mean_all(back))
        },
        &inputs,
        GRADCHECK_H,
    )
    .unwrap()
}

#[test]
fn criterion_04_parameter_gradients() {
    let families: [(&str, fn(u64) -> f64); 6] = [
        ("kernel", gradcheck_kernel),
        ("coupling", gradcheck_coupling),
        ("prior", gradcheck_prior),
        ("embedder", gradcheck_embedder),
        ("predictor", gradcheck_predictor),
        ("codec", gradcheck_codec),
    ];
    let mut detail = String::new();
    let mut pass = true;
    for (name, run) in families {
        let mut worst = 0.0f64;
        for seed in 0..5u64 {
            worst = worst.max(run(0x0400 + seed));
        }
        pass &= worst < GRADCHECK_TOL;
        if !detail.is_empty() {
            detail.push_str(", ");
        }
        detail.push_str(&format!("{name} {worst:.1e}"));
    }
    verdict(
        "C4 (parameter gradients vs central differences)",
        pass,
        &format!("worst rel err over 5 probes each: {detail}"),
    );
}

#[test]
fn criterion_05_prior_learns_discarded_mean() {
    let mut cfg = RunConfig::default();
    cfg.scale = 4;
    cfg.hidden = 4;
    cfg.embed_dim = 16;
    cfg.adp_tile = 4;
    cfg.crop = 16;
    cfg.batch = 32;
    cfg.lr = 1e-2;
    cfg.lr_halve_every = 150;
    cfg.seed = 5;
    cfg.validate().unwrap();
    let images = textured_dataset::<f32>(32, 16, 16, 2, 55);

    let mut model = RescalerModel::seeded(&cfg).unwrap();
    model.rescaler =
        InvertibleRescaler::identity_rearrangement(cfg.scale, AdpKind::Learnable, cfg.adp_tile)
            .unwrap();
    model.predictor = Predictor::Identity(model.sched.clone());
    let opt = AdamW::new(cfg.lr, 0.0, cfg.lr_halve_every).unwrap();
    let mut tr = Trainer::with_optimizer(model, opt).unwrap();
    tr.weights = LossWeights { w_pixel: 1.0, w_feat: 0.0, w_lr: 0.0, w_sem: 0.0 };

    let tile_len = tr.model.rescaler.adp.tile.len();
    let mut mean = vec![0.0f64; tile_len];
    for x in &images {
        let (_, hf) = tr.model.rescaler.downscale(x).unwrap();
        assert_eq!(hf.len(), tile_len);
        for (acc, &v) in mean.iter_mut().zip(hf.data()) {
            *acc += f64::from(v) / images.len() as f64;
        }
    }

    for _ in 0..300 {
        tr.train_step_filtered(&images, &|n| n.ends_with("adp.tile")).unwrap();
    }
    let worst = tr
        .model
        .rescaler
        .adp
        .tile
        .data()
        .iter()
        .zip(&mean)
        .map(|(&v, &m)| (f64::from(v) - m).abs())
        .fold(0.0f64, f64::max);
    verdict(
        "C5 (prior converges to the discarded-detail mean)",
        worst < 1e-2,
        &format!("L_inf distance to the 32-image empirical mean {worst:.2e} after 300 steps"),
    );
}

#[test]
fn criterion_06_prior_ablation_ordering() {
    let run = toy();
    let learned = mean_reconstruction_psnr(&run.trainer.model, &run.images);
    let dims = run.trainer.model.rescaler.adp.tile.dims().to_vec();

    let mut zeros_model = run.trainer.model.clone();
    zeros_model.rescaler.adp.tile = Tensor::zeros(&dims);
    let zeros = mean_reconstruction_psnr(&zeros_model, &run.images);

    let mut random_model = run.trainer.model.clone();
    let mut rng = SeededRng::new(0xAC06);
    random_model.rescaler.adp.tile = rng.tensor_uniform(&dims, -0.5, 0.5);
    let random = mean_reconstruction_psnr(&random_model, &run.images);

    verdict(
        "C6 (prior ablation ordering)",
        random < zeros && zeros <= learned,
        &format!("reconstruction psnr: random {random:.2} dB < zeros {zeros:.2} dB <= learned {learned:.2} dB"),
    );
}

#[test]
fn criterion_07_single_step_denoise_inversion() {
    let sched = NoiseSchedule::new(1000, 1e-4, 0.02).unwrap();
    let ab_last = sched.alpha_bar(1000).unwrap();
    let pinned = 4.0358297653756835e-5;
    let mut rng = SeededRng::new(0xAC07);
    let mut worst = 0.0f64;
    for &t in &[1usize, 500, 1000] {
        let clean: Tensor64 = rng.tensor_uniform(&[3, 8, 8], -1.0, 1.0);
        let eps: Tensor64 = rng.tensor_uniform(&[3, 8, 8], -1.0, 1.0);
        let ab = sched.alpha_bar(t).unwrap();
        let corrupted =
            clean.scale(ab.sqrt()).add(&eps.scale((1.0 - ab).sqrt())).unwrap();
        let back = one_step_denoise(&corrupted, &eps, &sched, t).unwrap();
        worst = worst.max(max_abs_diff(&back, &clean));
    }
    verdict(
        "C7 (corrupt-then-denoise inversion)",
        worst < 1e-4 && (ab_last - pinned).abs() < 1e-8,
        &format!(
            "worst recovery error {worst:.2e} for t in {{1,500,1000}}; signal fraction at t=1000 off by {:.1e}",
            (ab_last - pinned).abs()
        ),
    );
}

#[test]
fn criterion_08_toy_run_beats_bicubic() {
    let run = toy();
    let model_psnr = mean_reconstruction_psnr(&run.trainer.model, &run.images);
    let mut baseline = 0.0;
    let s = run.trainer.model.total_scale();
    for x in &run.images {
        let (h, w) = (x.dims()[1], x.dims()[2]);
        let down = bicubic_resize(x, h / s, w / s).unwrap();
        let up = bicubic_resize(&down, h, w).unwrap();
        baseline += psnr(&up, x).unwrap();
    }
    baseline /= run.images.len() as f64;
    let lr_first = run.records[0].parts.lr;
    let lr_last = run.records[TOY_STEPS - 1].parts.lr;
    verdict(
        "C8 (trained 4x model beats bicubic on its training set)",
        model_psnr > baseline && lr_last < lr_first && run.elapsed_total < Duration::from_secs(1200),
        &format!(
            "psnr {model_psnr:.2} dB vs bicubic {baseline:.2} dB; lr-fidelity loss {lr_first:.4} -> {lr_last:.4}; {} steps in {:.1?}",
            TOY_STEPS, run.elapsed_total
        ),
    );
}

#[test]
fn criterion_09_checkpoint_contract() {
    let mut cfg = RunConfig::default();
    cfg.scale = 2;
    cfg.hidden = 4;
    cfg.embed_dim = 8;
    cfg.adp_tile = 2;
    cfg.t_max = 20;
    cfg.crop = 8;
    cfg.batch = 2;
    cfg.lr = 1e-3;
    cfg.validate().unwrap();
    let images = textured_dataset::<f32>(4, 8, 8, 2, 909);
    let dir = tempfile::tempdir().unwrap();

    let run = |path: &std::path::Path| {
        let mut tr = Trainer::new(RescalerModel::<f32>::seeded(&cfg).unwrap()).unwrap();
        for _ in 0..3 {
            tr.run_step(&images).unwrap();
        }
        tr.model.save(path, Some(&tr.opt)).unwrap();
    };
    let pa = dir.path().join("a.ckpt");
    let pb = dir.path().join("b.ckpt");
    run(&pa);
    run(&pb);
    let bytes_a = std::fs::read(&pa).unwrap();
    let bytes_b = std::fs::read(&pb).unwrap();
    let identical_runs = bytes_a == bytes_b;

    let (model, opt) = RescalerModel::<f32>::load(&pa).unwrap();
    let pc = dir.path().join("c.ckpt");
    model.save(&pc, opt.as_ref()).unwrap();
    let roundtrip = std::fs::read(&pc).unwrap() == bytes_a;

    let mut truncation_clean = true;
    for cut in 0..bytes_a.len() {
        if decode_checkpoint(&bytes_a[..cut]).is_ok() {
            truncation_clean = false;
            break;
        }
    }

    verdict(
        "C9 (checkpoint persistence contract)",
        identical_runs && roundtrip && truncation_clean,
        &format!(
            "same-seed runs byte-identical: {identical_runs}; save/load/save byte-identical: {roundtrip}; every prefix of {} bytes rejected cleanly: {truncation_clean}",
            bytes_a.len()
        ),
    );
}

// -- criterion 10: metric oracles, reimplemented here by direct definition.

fn psnr_oracle(a: &Tensor32, b: &Tensor32) -> f64 {
    let mut acc = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = f64::from(x) - f64::from(y);
        acc += d * d;
    }
    10.0 * (a.len() as f64 / acc).log10()
}

fn gaussian_11() -> [f64; 11] {
    let mut k = [0.0f64; 11];
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *v = (-d * d / 4.5).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn ssim_oracle(a: &Tensor32, b: &Tensor32) -> f64 {
    let (c, h, w) = (a.dims()[0], a.dims()[1], a.dims()[2]);
    let k = gaussian_11();
    let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
    let mut total = 0.0;
    let mut count = 0usize;
    let at = |t: &Tensor32, ci: usize, y: usize, x: usize| f64::from(t.data()[ci * h * w + y * w + x]);
    for ci in 0..c {
        for wy in 0..=h - 11 {
            for wx in 0..=w - 11 {
                let (mut ux, mut uy) = (0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let wgt = k[dy] * k[dx];
                        ux += wgt * at(a, ci, wy + dy, wx + dx);
                        uy += wgt * at(b, ci, wy + dy, wx + dx);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let wgt = k[dy] * k[dx];
                        let ex = at(a, ci, wy + dy, wx + dx) - ux;
                        let ey = at(b, ci, wy + dy, wx + dx) - uy;
                        vx += wgt * ex * ex;
                        vy += wgt * ey * ey;
                        cov += wgt * ex * ey;
                    }
                }
                total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                    / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

fn bicubic_oracle(x: &Tensor32, out_h: usize, out_w: usize) -> Tensor64 {
    let cubic = |s: f64| -> f64 {
        let s = s.abs();
        let a = -0.5;
        if s <= 1.0 {
            ((a + 2.0) * s - (a + 3.0)) * s * s + 1.0
        } else if s < 2.0 {
            ((a * s - 5.0 * a) * s + 8.0 * a) * s - 4.0 * a
        } else {
            0.0
        }
    };
    let (c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    Tensor::from_fn(&[c, out_h, out_w], |i| {
        let ci = i / (out_h * out_w);
        let oy = (i / out_w) % out_h;
        let ox = i % out_w;
        let src_y = (oy as f64 + 0.5) * sy - 0.5;
        let src_x = (ox as f64 + 0.5) * sx - 0.5;
        let (by, bx) = (src_y.floor() as isize, src_x.floor() as isize);
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for ky in 0..4isize {
            for kx in 0..4isize {
                let (jy, jx) = (by - 1 + ky, bx - 1 + kx);
                let wgt = cubic(src_y - jy as f64) * cubic(src_x - jx as f64);
                let yy = jy.clamp(0, h as isize - 1) as usize;
                let xx = jx.clamp(0, w as isize - 1) as usize;
                acc += wgt * f64::from(x.data()[ci * h * w + yy * w + xx]);
                wsum += wgt;
            }
        }
        acc / wsum
    })
}

#[test]
fn criterion_10_metric_oracles() {
    let root = SeededRng::new(0xAC10);
    let mut worst_psnr = 0.0f64;
    let mut worst_ssim = 0.0f64;
    let mut worst_resize = 0.0f64;
    let mut self_one = true;
    for (i, (h, w)) in [(16usize, 16usize), (12, 18), (24, 13)].iter().enumerate() {
        let mut rng = root.split(&format!("case{i}"));
        let a: Tensor32 = rng.tensor_uniform(&[3, *h, *w], 0.0, 1.0);
        let b: Tensor32 = rng.tensor_uniform(&[3, *h, *w], 0.0, 1.0);
        worst_psnr = worst_psnr.max((psnr(&a, &b).unwrap() - psnr_oracle(&a, &b)).abs());
        worst_ssim = worst_ssim.max((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs());
        self_one &= ssim(&a, &a).unwrap() == 1.0;
        for (oh, ow) in [(h / 2, w / 2), (2 * h, 2 * w), (*h, *w), (5, 7)] {
            let got = bicubic_resize(&a, oh, ow).unwrap();
            let want = bicubic_oracle(&a, oh, ow);
            let diff = got
                .data()
                .iter()
                .zip(want.data())
                .map(|(&g, &o)| (f64::from(g) - o).abs())
                .fold(0.0f64, f64::max);
            worst_resize = worst_resize.max(diff);
        }
    }
    verdict(
        "C10 (metric oracles)",
        worst_psnr < 1e-6 && worst_ssim < 1e-6 && worst_resize < 1e-5 && self_one,
        &format!(
            "psnr off by {worst_psnr:.1e}, ssim off by {worst_ssim:.1e}, resize off by {worst_resize:.1e}, self-ssim exactly 1: {self_one}"
        ),
    );
}
