//! File-oriented command surface for the rescaling toolkit. Users are
//! scripts, so every output is a file or machine-readable text, and every
//! command is deterministic for a fixed (flags, config, seed) triple.
//!
//! Config files are `key = value` lines; the keys are the `RunConfig`
//! field names. `train` writes the checkpoint to `--out` and a metrics
//! log to `<out>.log` with one line per optimizer step:
//!
//! ```text
//! step=N loss_pixel=... loss_feat=... loss_lr=... loss_sem=... total=... lr=... ortho_err=...
//! ```
//!
//! JSON reports carry a `schema_version` field (currently 1). `roundtrip`
//! emits {psnr, ssim, lr_l2_vs_bicubic, original_bytes, lr_bytes, cr},
//! where lr_l2_vs_bicubic is the root-mean-square deviation of the
//! quantized LR image from a bicubic reference. `eval` emits {count,
//! mean_psnr, mean_ssim, images: [{name, psnr, ssim}]}.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rescale_core::config::{CodecKind, RunConfig};
use rescale_core::imaging::{
    bicubic_resize, compression_ratio, from_tensor, png_read, png_write, psnr, ssim, to_tensor,
};
use rescale_core::pipeline::RescalerModel;
use rescale_core::training::{pretrain_codec, Trainer};
use rescale_core::Tensor32;
use serde::Serialize;

const SCHEMA_VERSION: u32 = 1;
const CODEC_PRETRAIN_STEPS: usize = 100;
const CODEC_PRETRAIN_LR: f64 = 1e-3;

#[derive(Parser)]
#[command(name = "rescale", about = "Invertible image rescaling: train, downscale, reconstruct, evaluate")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model on a directory of PNGs and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue a previous run; the config must match the checkpoint's.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Downscale one image; the LR PNG is the entire stored representation.
    Downscale {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a full-size image from an LR PNG.
    Upscale {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Downscale + reconstruct in memory and write a quality report.
    Roundtrip {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        json: PathBuf,
        /// Inject the true detail channels instead of the learned prior.
        /// Diagnostic only; deployment never has these channels.
        #[arg(long)]
        debug_true_hf: bool,
    },
    /// Reconstruction metrics over a directory of PNGs.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        json: PathBuf,
    },
    /// Verify a checkpoint's structural invariants; nonzero exit on failure.
    Check {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

#[derive(Serialize)]
struct RoundtripReport {
    schema_version: u32,
    psnr: f64,
    ssim: f64,
    lr_l2_vs_bicubic: f64,
    original_bytes: u64,
    lr_bytes: u64,
    cr: f64,
}

#[derive(Serialize)]
struct EvalImage {
    name: String,
    psnr: f64,
    ssim: f64,
}

#[derive(Serialize)]
struct EvalReport {
    schema_version: u32,
    count: usize,
    mean_psnr: f64,
    mean_ssim: f64,
    images: Vec<EvalImage>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match Cli::parse().cmd {
        Cmd::Train { config, data, out, resume } => cmd_train(&config, &data, &out, resume.as_deref()),
        Cmd::Downscale { ckpt, input, out } => cmd_downscale(&ckpt, &input, &out),
        Cmd::Upscale { ckpt, input, out } => cmd_upscale(&ckpt, &input, &out),
        Cmd::Roundtrip { ckpt, input, json, debug_true_hf } => {
            cmd_roundtrip(&ckpt, &input, &json, debug_true_hf)
        }
        Cmd::Eval { ckpt, data, json } => cmd_eval(&ckpt, &data, &json),
        Cmd::Check { ckpt } => cmd_check(&ckpt),
    }
}

fn load_model(path: &Path) -> Result<RescalerModel<f32>> {
    let (model, _) = RescalerModel::<f32>::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(model)
}

/// PNGs of a directory as [0,1] tensors, sorted by file name so every
/// aggregate is order-deterministic.
fn load_images(dir: &Path) -> Result<Vec<(String, Tensor32)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading image directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("{}: no .png files found", dir.display());
    }
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, to_tensor(&png_read(&p)?)))
        })
        .collect()
}

fn require_scaled_extents(model: &RescalerModel<f32>, x: &Tensor32, name: &str) -> Result<()> {
    let s = model.total_scale();
    let (h, w) = (x.dims()[1], x.dims()[2]);
    if h % s != 0 || w % s != 0 {
        bail!("scale mismatch: {name} is {h}x{w}, which the configured total scale {s} does not divide");
    }
    Ok(())
}

fn cmd_train(config: &Path, data: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::from_file(config)?;
    let images: Vec<Tensor32> = load_images(data)?.into_iter().map(|(_, t)| t).collect();
    let mut trainer = match resume {
        Some(prev) => {
            let (mut model, opt) = RescalerModel::<f32>::load(prev)
                .with_context(|| format!("resuming from {}", prev.display()))?;
            // Only the step target may change across a resume; everything
            // else would silently reshape or reseed the model.
            let mut stored = model.cfg.clone();
            stored.steps = cfg.steps;
            if stored != cfg {
                bail!(
                    "{} disagrees with the config stored in {}; resume with the original settings",
                    config.display(),
                    prev.display()
                );
            }
            model.cfg.steps = cfg.steps;
            match opt {
                Some(opt) => Trainer::with_optimizer(model, opt)?,
                None => Trainer::new(model)?,
            }
        }
        None => {
            let mut model = RescalerModel::<f32>::seeded(&cfg)?;
            if cfg.codec == CodecKind::TinyAe {
                let hist =
                    pretrain_codec(&mut model, &images, CODEC_PRETRAIN_STEPS, CODEC_PRETRAIN_LR)?;
                if let (Some(first), Some(last)) = (hist.first(), hist.last()) {
                    log::info!("codec pretraining: reconstruction loss {first:.6} -> {last:.6}");
                }
            }
            Trainer::new(model)?
        }
    };

    let mut log_name = out.as_os_str().to_owned();
    log_name.push(".log");
    let log_path = PathBuf::from(log_name);
    let mut metrics = fs::File::create(&log_path)
        .with_context(|| format!("creating metrics log {}", log_path.display()))?;
    while trainer.next_step() <= cfg.steps {
        let rec = trainer.run_step(&images)?;
        writeln!(metrics, "{}", rec.log_line())?;
    }
    metrics.flush()?;
    trainer.model.save(out, Some(&trainer.opt))?;
    log::info!("wrote {} and {}", out.display(), log_path.display());
    Ok(())
}

fn cmd_downscale(ckpt: &Path, input: &Path, out: &Path) -> Result<()> {
    let model = load_model(ckpt)?;
    let x: Tensor32 = to_tensor(&png_read(input)?);
    require_scaled_extents(&model, &x, &input.display().to_string())?;
    let (lr, _) = model.downscale(&x)?;
    png_write(out, &from_tensor(&lr)?)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

fn cmd_upscale(ckpt: &Path, input: &Path, out: &Path) -> Result<()> {
    let model = load_model(ckpt)?;
    let lr: Tensor32 = to_tensor(&png_read(input)?);
    let hr = model.reconstruct(&lr)?;
    png_write(out, &from_tensor(&hr)?)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

fn cmd_roundtrip(ckpt: &Path, input: &Path, json: &Path, debug_true_hf: bool) -> Result<()> {
    let model = load_model(ckpt)?;
    let x: Tensor32 = to_tensor(&png_read(input)?);
    require_scaled_extents(&model, &x, &input.display().to_string())?;
    let (lr, hf) = model.downscale(&x)?;
    let recon = if debug_true_hf {
        model.reconstruct_with_hf(&lr, &hf)?
    } else {
        model.reconstruct(&lr)?
    };
    let reference = bicubic_resize(&x, lr.dims()[1], lr.dims()[2])?;
    let deviation = lr.sub(&reference)?;
    let lr_l2_vs_bicubic = deviation.l2_norm() / (deviation.len() as f64).sqrt();

    // The LR PNG is rendered once to measure what transmission would cost.
    let tmp = std::env::temp_dir().join(format!("rescale-lr-{}.png", std::process::id()));
    png_write(&tmp, &from_tensor(&lr)?)?;
    let original_bytes = fs::metadata(input)?.len();
    let lr_bytes = fs::metadata(&tmp)?.len();
    let cr = compression_ratio(input, &tmp)?;
    let _ = fs::remove_file(&tmp);

    let report = RoundtripReport {
        schema_version: SCHEMA_VERSION,
        psnr: psnr(&recon, &x)?,
        ssim: ssim(&recon, &x)?,
        lr_l2_vs_bicubic,
        original_bytes,
        lr_bytes,
        cr,
    };
    let body = serde_json::to_string_pretty(&report)?;
    fs::write(json, &body)?;
    println!("{body}");
    Ok(())
}

fn cmd_eval(ckpt: &Path, data: &Path, json: &Path) -> Result<()> {
    let model = load_model(ckpt)?;
    let mut images = Vec::new();
    for (name, x) in load_images(data)? {
        require_scaled_extents(&model, &x, &name)?;
        let (lr, _) = model.downscale(&x)?;
        let recon = model.reconstruct(&lr)?;
        images.push(EvalImage { name, psnr: psnr(&recon, &x)?, ssim: ssim(&recon, &x)? });
    }
    let n = images.len() as f64;
    let report = EvalReport {
        schema_version: SCHEMA_VERSION,
        count: images.len(),
        mean_psnr: images.iter().map(|r| r.psnr).sum::<f64>() / n,
        mean_ssim: images.iter().map(|r| r.ssim).sum::<f64>() / n,
        images,
    };
    let body = serde_json::to_string_pretty(&report)?;
    fs::write(json, &body)?;
    println!("{body}");
    Ok(())
}

fn cmd_check(ckpt: &Path) -> Result<()> {
    let model = load_model(ckpt)?;
    let failed = model.check_invariants();
    if failed.is_empty() {
        println!("ok: all checkpoint invariants hold");
        return Ok(());
    }
    for name in &failed {
        println!("failed: {name}");
    }
    bail!("{} invariant(s) failed", failed.len());
}
