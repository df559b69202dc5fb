//! The complete rescaling system: invertible rescaler, semantic embedder,
//! noise estimator, and schedule, built from one config and stored as one
//! self-describing checkpoint.

use std::collections::BTreeMap;
use std::path::Path;

use crate::autodiff::Graph;
use crate::config::{CodecKind, RunConfig};
use crate::error::{Error, Result};
use crate::invnet::{
    Codec, InvertibleRescaler, InvertibleVars, LatentCodec, TinyAutoencoder,
    LR_CHANNELS,
};
use crate::nn::ParamVars;
use crate::numerics::rng::SeededRng;
use crate::numerics::tensor::Tensor;
use crate::refiner::{
    refine, NoiseSchedule, PixelSemanticEmbedder, Predictor, PredictorVars, PseVars,
};
use crate::scalar::Scalar;
use crate::training::adamw::{AdamW, WEIGHT_DECAY_DEFAULT};
use crate::training::checkpoint::{load_checkpoint, save_checkpoint};
use crate::transforms::ORTHOGONALITY_BUDGET;

/// Hidden width of the semantic embedder trunk.
pub const PSE_HIDDEN: usize = 32;

/// Hidden width of the conditioned noise estimator.
pub const PREDICTOR_HIDDEN: usize = 8;

/// Coupling-block clamp amplitude.
pub const COUPLING_ALPHA: f64 = 1.0;

/// All trainable state of the system plus the frozen schedule.
#[derive(Clone, Debug)]
pub struct RescalerModel<T> {
    pub cfg: RunConfig,
    pub rescaler: InvertibleRescaler<T>,
    pub pse: PixelSemanticEmbedder<T>,
    pub predictor: Predictor<T>,
    pub sched: NoiseSchedule,
}

impl<T: Scalar> RescalerModel<T> {
    /// Builds the system deterministically from the config seed.
    pub fn seeded(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = SeededRng::new(cfg.seed);
        let codec = match cfg.codec {
            CodecKind::Identity => Codec::Identity,
            CodecKind::TinyAe => {
                Codec::Tiny(TinyAutoencoder::seeded(LR_CHANNELS, &mut rng.split("codec")))
            }
        };
        let c_lat = codec.latent_channels();
        let rescaler = InvertibleRescaler::seeded(
            codec,
            cfg.scale,
            cfg.hidden,
            COUPLING_ALPHA,
            cfg.adp,
            cfg.adp_tile,
            &mut rng.split("rescaler"),
        )?;
        let pse = PixelSemanticEmbedder::seeded(PSE_HIDDEN, cfg.embed_dim, &mut rng.split("pse"));
        let sched = NoiseSchedule::new(cfg.t_max, cfg.beta_start, cfg.beta_end)?;
        let predictor = Predictor::Net(crate::refiner::ConditionedResidualNet::seeded(
            c_lat,
            PREDICTOR_HIDDEN,
            cfg.embed_dim,
            sched.clone(),
            &mut rng.split("predictor"),
        ));
        Ok(Self { cfg: cfg.clone(), rescaler, pse, predictor, sched })
    }

    /// Combined spatial reduction from image to LR image.
    pub fn total_scale(&self) -> usize {
        self.rescaler.total_scale()
    }

    /// Worst-case deviation of the kernel from orthogonality.
    pub fn ortho_error(&self) -> f64 {
        self.rescaler.kernel.ortho_error()
    }

    /// Deployment downscale: the quantized LR image plus the diagnostic
    /// detail channels that are never stored.
    pub fn downscale(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.rescaler.downscale(x)
    }

    /// Full reconstruction from a stored LR image: prior substitution,
    /// inverse transform, refinement, codec decode.
    pub fn reconstruct(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        let c_s = self.pse.forward(lr)?;
        let f_t = self.rescaler.upscale(lr, None)?;
        let f0 = refine(&f_t, &c_s, &self.predictor, &self.sched)?;
        self.rescaler.codec.decode(&f0)
    }

    /// Reconstruction with the true detail channels injected instead of the
    /// prior. Diagnostic only; deployment never has these channels.
    pub fn reconstruct_with_hf(&self, lr: &Tensor<T>, hf: &Tensor<T>) -> Result<Tensor<T>> {
        let c_s = self.pse.forward(lr)?;
        let f_t = self.rescaler.upscale(lr, Some(hf))?;
        let f0 = refine(&f_t, &c_s, &self.predictor, &self.sched)?;
        self.rescaler.codec.decode(&f0)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.rescaler.visit("rescaler", f);
        self.pse.visit("pse", f);
        self.predictor.visit("predictor", f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.rescaler.visit_mut("rescaler", f);
        self.pse.visit_mut("pse", f);
        self.predictor.visit_mut("predictor", f);
    }

    /// Tensors the main training loop updates; the codec stays frozen.
    pub fn visit_trainable_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.rescaler.visit_trainable_mut("rescaler", f);
        self.pse.visit_mut("pse", f);
        self.predictor.visit_mut("predictor", f);
    }

    /// Tape registration mirroring [`Self::visit_trainable_mut`] name for
    /// name in `reg`.
    pub fn register(&self, g: &mut Graph<T>, reg: &mut ParamVars) -> SystemVars {
        SystemVars {
            rescaler: self.rescaler.register(g, "rescaler", reg),
            pse: self.pse.register(g, "pse", Some(reg)),
            predictor: self.predictor.register(g, "predictor", Some(reg)),
        }
    }

    /// Runs the structural invariants and returns the names of violated
    /// ones: orthogonality budget, coupling round-trip, one-step denoise
    /// inversion, parameter finiteness.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut failed = Vec::new();
        if !(self.ortho_error() < ORTHOGONALITY_BUDGET) {
            failed.push("orthogonality".to_string());
        }
        let mut rng = SeededRng::new(0xC0FFEE);
        let dim = self.rescaler.kernel.dim();
        let probe: Tensor<T> = rng.tensor_uniform(&[dim, 6, 6], -1.0, 1.0);
        let roundtrip = (|| -> Result<f64> {
            let mut t = probe.clone();
            for blk in &self.rescaler.blocks {
                t = blk.forward(&t)?;
            }
            for blk in self.rescaler.blocks.iter().rev() {
                t = blk.inverse(&t)?;
            }
            Ok(crate::scalar::to_f64(t.sub(&probe)?.max_abs()))
        })();
        if !matches!(roundtrip, Ok(e) if e < 1e-4) {
            failed.push("coupling-roundtrip".to_string());
        }
        let c_lat = self.rescaler.codec.latent_channels();
        let clean: Tensor<T> = rng.tensor_uniform(&[c_lat, 4, 4], -1.0, 1.0);
        let eps: Tensor<T> = rng.tensor_uniform(&[c_lat, 4, 4], -1.0, 1.0);
        let inversion = (|| -> Result<f64> {
            let t = self.sched.t_max();
            let ab = self.sched.alpha_bar(t)?;
            let f_t = clean
                .scale(crate::scalar::from_f64::<T>(ab.sqrt()))
                .add(&eps.scale(crate::scalar::from_f64::<T>((1.0 - ab).sqrt())))?;
            let back = crate::refiner::one_step_denoise(&f_t, &eps, &self.sched, t)?;
            Ok(crate::scalar::to_f64(back.sub(&clean)?.max_abs()))
        })();
        if !matches!(inversion, Ok(e) if e < 1e-4) {
            failed.push("denoise-inversion".to_string());
        }
        let mut finite = true;
        self.visit(&mut |_, t| {
            if t.check_finite("").is_err() {
                finite = false;
            }
        });
        if !finite {
            failed.push("finite-parameters".to_string());
        }
        failed
    }
}

impl RescalerModel<f32> {
    /// Writes the config, every model tensor, and (optionally) optimizer
    /// moments and the step counter as one checkpoint.
    pub fn save(&self, path: &Path, opt: Option<&AdamW<f32>>) -> Result<()> {
        let mut tensors = self.cfg.scalar_entries();
        self.visit(&mut |name, t| tensors.push((name.to_string(), t.clone())));
        if let Some(opt) = opt {
            for name in opt.moment_names() {
                let (m, v) = opt.moment(&name).unwrap();
                tensors.push((format!("opt.m.{name}"), m.clone()));
                tensors.push((format!("opt.v.{name}"), v.clone()));
            }
            tensors.push(("trainer.step".to_string(), Tensor::scalar(opt.step() as f32)));
        }
        save_checkpoint(path, &tensors)
    }

    /// Rebuilds the system from a checkpoint, restoring optimizer state
    /// when the checkpoint carries it.
    pub fn load(path: &Path) -> Result<(Self, Option<AdamW<f32>>)> {
        let tensors = load_checkpoint(path)?;
        let cfg = RunConfig::from_scalar_entries(&tensors)?;
        let mut model = Self::seeded(&cfg)?;
        let mut table: BTreeMap<String, Tensor<f32>> = tensors.into_iter().collect();
        let mut missing = Vec::new();
        let mut bad_shape = Vec::new();
        model.visit_mut(&mut |name, t| match table.remove(name) {
            Some(stored) if stored.dims() == t.dims() => *t = stored,
            Some(_) => bad_shape.push(name.to_string()),
            None => missing.push(name.to_string()),
        });
        if let Some(name) = missing.first() {
            return Err(Error::Config(format!("checkpoint is missing tensor {name}")));
        }
        if let Some(name) = bad_shape.first() {
            return Err(Error::Config(format!("checkpoint tensor {name} has the wrong shape")));
        }
        let step = match table.remove("trainer.step") {
            Some(t) => {
                let v = t.item();
                if !(v.is_finite() && v >= 0.0 && v.fract() == 0.0) {
                    return Err(Error::Config(format!("trainer.step holds a non-integer: {v}")));
                }
                Some(v as usize)
            }
            None => None,
        };
        let mut opt = None;
        if let Some(step) = step {
            let mut o = AdamW::new(cfg.lr, WEIGHT_DECAY_DEFAULT, cfg.lr_halve_every)?;
            o.set_step(step);
            let moment_names: Vec<String> = table
                .keys()
                .filter_map(|k| k.strip_prefix("opt.m.").map(str::to_string))
                .collect();
            for name in moment_names {
                let m = table.remove(&format!("opt.m.{name}")).unwrap();
                let v = table
                    .remove(&format!("opt.v.{name}"))
                    .ok_or_else(|| Error::Config(format!("moment opt.v.{name} is missing")))?;
                o.set_moment(name, m, v)?;
            }
            opt = Some(o);
        }
        let leftover: Vec<String> =
            table.keys().filter(|k| !k.starts_with("cfg.")).cloned().collect();
        if let Some(name) = leftover.first() {
            return Err(Error::Config(format!("checkpoint has an unexpected tensor {name}")));
        }
        Ok((model, opt))
    }
}

/// Tape handles for the whole system.
#[derive(Clone, Debug)]
pub struct SystemVars {
    pub rescaler: InvertibleVars,
    pub pse: PseVars,
    pub predictor: PredictorVars,
}
