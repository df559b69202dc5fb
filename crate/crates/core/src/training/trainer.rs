//! The end-to-end training step: taped encode, quantized downscale,
//! prior-substituted upscale, refinement, decode, the pooled four-term
//! objective, one optimizer step, and kernel reprojection.

use std::collections::BTreeMap;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::imaging::{crop_batch, resize::bicubic_resize};
use crate::nn::ParamVars;
use crate::numerics::rng::SeededRng;
use crate::numerics::tensor::Tensor;
use crate::pipeline::RescalerModel;
use crate::refiner::{FrozenRandomTeacher, SemanticTeacher};
use crate::scalar::{to_f64, Scalar};
use crate::training::adamw::{AdamW, WEIGHT_DECAY_DEFAULT};
use crate::training::loss::{
    taped_loss_total, taped_rms_pooled, taped_sem_pooled, FeatureExtractor, FrozenRandomFeatures,
    LossParts, LossWeights,
};

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub parts: LossParts,
    pub total: f64,
    pub lr: f64,
    pub ortho_err: f64,
}

impl TrainRecord {
    /// The line-oriented log schema: space-separated key=value pairs.
    pub fn log_line(&self) -> String {
        format!(
            "step={} loss_pixel={:.8} loss_feat={:.8} loss_lr={:.8} loss_sem={:.8} total={:.8} lr={:.6e} ortho_err={:.3e}",
            self.step,
            self.parts.pixel,
            self.parts.feat,
            self.parts.lr,
            self.parts.sem,
            self.total,
            self.lr,
            self.ortho_err
        )
    }
}

/// Owns the model plus everything frozen that training needs: the semantic
/// teacher, the perceptual feature net, loss weights, and the optimizer.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: RescalerModel<T>,
    pub teacher: FrozenRandomTeacher<T>,
    pub features: FrozenRandomFeatures<T>,
    pub weights: LossWeights,
    pub opt: AdamW<T>,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh trainer. The teacher and feature net derive deterministically
    /// from the config seed, so they are identical across resumed runs.
    pub fn new(model: RescalerModel<T>) -> Result<Self> {
        let opt = AdamW::new(model.cfg.lr, WEIGHT_DECAY_DEFAULT, model.cfg.lr_halve_every)?;
        Self::with_optimizer(model, opt)
    }

    /// Trainer around restored optimizer state, for resumed runs.
    pub fn with_optimizer(model: RescalerModel<T>, opt: AdamW<T>) -> Result<Self> {
        let root = SeededRng::new(model.cfg.seed);
        let teacher = FrozenRandomTeacher::seeded(model.cfg.embed_dim, &mut root.split("teacher"));
        let features = FrozenRandomFeatures::seeded(&mut root.split("features"));
        let weights = model.cfg.loss_weights();
        weights.validate()?;
        Ok(Self { model, teacher, features, weights, opt })
    }

    /// 1-based index of the step the next call to `train_step` will run.
    pub fn next_step(&self) -> usize {
        self.opt.step() + 1
    }

    /// The batch for a given 1-based step: a pure function of (seed, step),
    /// so resumed runs see the same data as uninterrupted ones.
    pub fn assemble_batch(&self, images: &[Tensor<T>], step: usize) -> Result<Vec<Tensor<T>>> {
        let mut rng = SeededRng::new(self.model.cfg.seed).split(&format!("batch{step}"));
        crop_batch(images, self.model.cfg.crop, self.model.cfg.batch, &mut rng)
    }

    /// Assembles the next batch and runs one full training step.
    pub fn run_step(&mut self, images: &[Tensor<T>]) -> Result<TrainRecord> {
        let batch = self.assemble_batch(images, self.next_step())?;
        self.train_step(&batch)
    }

    /// One training step over an explicit batch, updating every trainable
    /// parameter.
    pub fn train_step(&mut self, batch: &[Tensor<T>]) -> Result<TrainRecord> {
        self.train_step_filtered(batch, &|_| true)
    }

    /// One training step that only updates parameters whose name passes the
    /// filter; everything else keeps its value. The ablation runs train the
    /// prior alone this way.
    pub fn train_step_filtered(
        &mut self,
        batch: &[Tensor<T>],
        keep: &dyn Fn(&str) -> bool,
    ) -> Result<TrainRecord> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("training batch is empty".into()));
        }
        let total_scale = self.model.total_scale();
        for x in batch {
            if x.rank() != 3
                || x.dims()[0] != 3
                || x.dims()[1] % total_scale != 0
                || x.dims()[2] % total_scale != 0
            {
                return Err(Error::ShapeMismatch(format!(
                    "batch item {:?} is not divisible by the total scale {total_scale}",
                    x.dims()
                )));
            }
        }

        let mut g = Graph::new();
        let mut reg = ParamVars::new();
        let vars = self.model.register(&mut g, &mut reg);
        let feat_vars = self.features.register(&mut g, "features");

        let mut pixel_pairs = Vec::with_capacity(batch.len());
        let mut feat_pairs = Vec::with_capacity(batch.len());
        let mut lr_pairs = Vec::with_capacity(batch.len());
        let mut sem_pairs = Vec::with_capacity(batch.len());
        for (i, x) in batch.iter().enumerate() {
            let (lh, lw) = (x.dims()[1] / total_scale, x.dims()[2] / total_scale);
            let xv = g.leaf(x.clone(), format!("batch.{i}.x"));
            let latent = vars.rescaler.codec.encode(&mut g, xv)?;
            let (lr_q, _hf) = vars.rescaler.downscale(&mut g, latent)?;
            let c_s = vars.pse.forward(&mut g, lr_q)?;
            let prior = vars.rescaler.adp_map(&mut g, lh, lw)?;
            let f_t = vars.rescaler.upscale(&mut g, lr_q, prior)?;
            let f0 = vars.predictor.refine(&mut g, f_t, c_s)?;
            let xhat = vars.rescaler.codec.decode(&mut g, f0)?;
            let feat_hat = feat_vars.forward(&mut g, xhat)?;

            let lr_target = g.leaf(bicubic_resize(x, lh, lw)?, format!("batch.{i}.lr_target"));
            let feat_target =
                g.leaf(self.features.features(x)?, format!("batch.{i}.feat_target"));
            let sem_target = g.leaf(self.teacher.embed(x)?, format!("batch.{i}.sem_target"));

            pixel_pairs.push((xhat, xv));
            feat_pairs.push((feat_hat, feat_target));
            lr_pairs.push((lr_q, lr_target));
            sem_pairs.push((c_s, sem_target));
        }

        let lp = taped_rms_pooled(&mut g, &pixel_pairs)?;
        let lf = taped_rms_pooled(&mut g, &feat_pairs)?;
        let llr = taped_rms_pooled(&mut g, &lr_pairs)?;
        let lsem = taped_sem_pooled(&mut g, &sem_pairs)?;
        let total = taped_loss_total(&mut g, lp, lf, llr, lsem, &self.weights)?;

        if let Some((_, label)) = g.first_non_finite() {
            return Err(Error::NonFinite(format!("tensor {label} during step {}", self.next_step())));
        }
        let parts = LossParts {
            pixel: to_f64(g.value(lp).item()),
            feat: to_f64(g.value(lf).item()),
            lr: to_f64(g.value(llr).item()),
            sem: to_f64(g.value(lsem).item()),
        };
        let total_v = to_f64(g.value(total).item());

        let grads = g.backward(total)?;
        let mut grad_map: BTreeMap<&str, &Tensor<T>> = BTreeMap::new();
        for (name, var) in &reg {
            if let Some(gt) = grads.get(*var) {
                grad_map.insert(name, gt);
            }
        }

        let t = self.opt.begin_step();
        let opt = &mut self.opt;
        let mut err: Option<Error> = None;
        let mut kernel_moved = false;
        self.model.visit_trainable_mut(&mut |name, param| {
            if err.is_some() || !keep(name) {
                return;
            }
            match grad_map.get(name) {
                Some(gt) => {
                    if let Err(e) = opt.update(name, t, param, gt) {
                        err = Some(e);
                    } else if name.ends_with(".kernel.w") {
                        kernel_moved = true;
                    }
                }
                None => {
                    err = Some(Error::InvalidArgument(format!(
                        "parameter {name} received no gradient"
                    )));
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if kernel_moved {
            self.model.rescaler.kernel.reproject()?;
        }

        Ok(TrainRecord {
            step: t,
            parts,
            total: total_v,
            lr: opt.lr_at(t),
            ortho_err: self.model.ortho_error(),
        })
    }
}

/// Reconstruction pretraining for the lossy codec, run before the main loop
/// with the rest of the model untouched. The identity codec needs none and
/// yields an empty history. Returns the pooled reconstruction loss per step.
pub fn pretrain_codec<T: Scalar>(
    model: &mut RescalerModel<T>,
    images: &[Tensor<T>],
    steps: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    use crate::invnet::{Codec, CodecVars};
    if matches!(model.rescaler.codec, Codec::Identity) {
        return Ok(Vec::new());
    }
    let mut opt = AdamW::<T>::new(lr, 0.0, steps.max(1))?;
    let mut history = Vec::with_capacity(steps);
    for _ in 0..steps {
        let t = opt.begin_step();
        let mut rng =
            SeededRng::new(model.cfg.seed).split(&format!("codec-pretrain{t}"));
        let batch = crop_batch(images, model.cfg.crop, model.cfg.batch, &mut rng)?;

        let mut g = Graph::new();
        let mut reg = ParamVars::new();
        let cvars = CodecVars::register_trainable(&model.rescaler.codec, &mut g, "codec", &mut reg);
        let mut pairs = Vec::with_capacity(batch.len());
        for (i, x) in batch.iter().enumerate() {
            let xv = g.leaf(x.clone(), format!("batch.{i}.x"));
            let lat = cvars.encode(&mut g, xv)?;
            let back = cvars.decode(&mut g, lat)?;
            pairs.push((back, xv));
        }
        let loss = taped_rms_pooled(&mut g, &pairs)?;
        if let Some((_, label)) = g.first_non_finite() {
            return Err(Error::NonFinite(format!("tensor {label} during codec pretraining")));
        }
        history.push(to_f64(g.value(loss).item()));
        let grads = g.backward(loss)?;
        let mut grad_map: BTreeMap<String, Tensor<T>> = BTreeMap::new();
        for (name, var) in &reg {
            if let Some(gt) = grads.get(*var) {
                grad_map.insert(name.clone(), gt.clone());
            }
        }
        let mut err: Option<Error> = None;
        model.rescaler.codec.visit_mut("codec", &mut |name, param| {
            if err.is_some() {
                return;
            }
            match grad_map.get(name) {
                Some(gt) => {
                    if let Err(e) = opt.update(name, t, param, gt) {
                        err = Some(e);
                    }
                }
                None => {
                    err = Some(Error::InvalidArgument(format!(
                        "codec parameter {name} received no gradient"
                    )));
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(history)
}
