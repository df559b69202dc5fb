//! The four-term training objective: pixel and feature reconstruction,
//! low-resolution fidelity against a bicubic reference, and semantic
//! alignment between the embedder and the teacher.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::imaging::resize::bicubic_resize;
use crate::nn::{relu, Conv2d, ConvVars};
use crate::numerics::rng::SeededRng;
use crate::numerics::tensor::Tensor;
use crate::refiner::SemanticTeacher;
use crate::scalar::{to_f64, Scalar};

/// Weights of the four loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub w_pixel: f64,
    pub w_feat: f64,
    pub w_lr: f64,
    pub w_sem: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_pixel: 2.0, w_feat: 5.0, w_lr: 3.0, w_sem: 3.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_pixel", self.w_pixel),
            ("w_feat", self.w_feat),
            ("w_lr", self.w_lr),
            ("w_sem", self.w_sem),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!("loss weight {name} must be nonnegative, got {w}")));
            }
        }
        Ok(())
    }
}

/// The four loss values from one step, before weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub pixel: f64,
    pub feat: f64,
    pub lr: f64,
    pub sem: f64,
}

/// Root of the mean of squared elementwise differences, accumulated in f64.
/// This reduction keeps image-shaped losses resolution independent.
pub fn rms_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "loss operands differ in shape: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut sum = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = to_f64(x) - to_f64(y);
        sum += d * d;
    }
    Ok((sum / a.len() as f64).sqrt())
}

/// Pixel-space reconstruction loss.
pub fn loss_pixel<T: Scalar>(xhat: &Tensor<T>, x: &Tensor<T>) -> Result<f64> {
    rms_diff(xhat, x)
}

/// Feature-space reconstruction loss under a fixed extractor.
pub fn loss_feat<T: Scalar>(
    xhat: &Tensor<T>,
    x: &Tensor<T>,
    fx: &dyn FeatureExtractor<T>,
) -> Result<f64> {
    rms_diff(&fx.features(xhat)?, &fx.features(x)?)
}

/// Fidelity of the produced LR image against a bicubic downscale of the
/// original, so the stored image stays viewable on its own.
pub fn loss_lr<T: Scalar>(lr_pred: &Tensor<T>, x: &Tensor<T>, s_total: usize) -> Result<f64> {
    if x.rank() != 3 || s_total == 0 || x.dims()[1] % s_total != 0 || x.dims()[2] % s_total != 0 {
        return Err(Error::ShapeMismatch(format!(
            "image {:?} is not divisible by total scale {s_total}",
            x.dims()
        )));
    }
    let (h, w) = (x.dims()[1] / s_total, x.dims()[2] / s_total);
    if lr_pred.dims() != [3, h, w] {
        return Err(Error::ShapeMismatch(format!(
            "LR prediction {:?} does not match target extent (3,{h},{w})",
            lr_pred.dims()
        )));
    }
    rms_diff(lr_pred, &bicubic_resize(x, h, w)?)
}

/// Alignment between the embedder output and the teacher embedding of the
/// original image. Euclidean distance, not its mean-reduced variant: the
/// embedding dimension is a fixed hyperparameter, so there is no extent to
/// normalize away, and orthogonal unit vectors score exactly sqrt(2).
pub fn loss_sem<T: Scalar>(
    c_s: &Tensor<T>,
    x: &Tensor<T>,
    teacher: &dyn SemanticTeacher<T>,
) -> Result<f64> {
    let z = teacher.embed(x)?;
    if c_s.dims() != z.dims() {
        return Err(Error::ShapeMismatch(format!(
            "embedding dimensions differ: {:?} vs {:?}",
            c_s.dims(),
            z.dims()
        )));
    }
    let mut sum = 0.0f64;
    for (&a, &b) in c_s.data().iter().zip(z.data()) {
        let d = to_f64(a) - to_f64(b);
        sum += d * d;
    }
    Ok(sum.sqrt())
}

/// Weighted sum of the four parts. Rejects non-finite parts instead of
/// propagating them silently.
pub fn loss_total(parts: &LossParts, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    for (name, v) in [
        ("pixel", parts.pixel),
        ("feat", parts.feat),
        ("lr", parts.lr),
        ("sem", parts.sem),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss part {name} is {v}")));
        }
    }
    Ok(w.w_pixel * parts.pixel + w.w_feat * parts.feat + w.w_lr * parts.lr + w.w_sem * parts.sem)
}

/// Taped root-mean-square difference pooled over several (prediction,
/// target) pairs. Squared differences are summed across all pairs before
/// the single square root, so for a batch the minimizer of the pooled loss
/// coincides with the minimizer of the summed squared error.
pub fn taped_rms_pooled<T: Scalar>(g: &mut Graph<T>, pairs: &[(Var, Var)]) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("pooled loss needs at least one pair".into()));
    }
    let mut total = None;
    let mut count = 0usize;
    for &(a, b) in pairs {
        let d = g.sub(a, b)?;
        let sq = g.mul(d, d)?;
        let s = g.sum_all(sq);
        count += g.value(a).len();
        total = Some(match total {
            None => s,
            Some(t) => g.add(t, s)?,
        });
    }
    let total = total.unwrap();
    let mean = g.scale(total, 1.0 / count as f64);
    Ok(g.sqrt_guarded(mean))
}

/// Taped embedding loss pooled over a batch: the root of the mean over
/// items of squared Euclidean distances. One pair reduces to the plain
/// Euclidean distance.
pub fn taped_sem_pooled<T: Scalar>(g: &mut Graph<T>, pairs: &[(Var, Var)]) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("pooled loss needs at least one pair".into()));
    }
    let mut total = None;
    for &(a, b) in pairs {
        let d = g.sub(a, b)?;
        let sq = g.mul(d, d)?;
        let s = g.sum_all(sq);
        total = Some(match total {
            None => s,
            Some(t) => g.add(t, s)?,
        });
    }
    let total = total.unwrap();
    let mean = g.scale(total, 1.0 / pairs.len() as f64);
    Ok(g.sqrt_guarded(mean))
}

/// Taped weighted total.
pub fn taped_loss_total<T: Scalar>(
    g: &mut Graph<T>,
    pixel: Var,
    feat: Var,
    lr: Var,
    sem: Var,
    w: &LossWeights,
) -> Result<Var> {
    w.validate()?;
    let p = g.scale(pixel, w.w_pixel);
    let f = g.scale(feat, w.w_feat);
    let l = g.scale(lr, w.w_lr);
    let s = g.scale(sem, w.w_sem);
    let pf = g.add(p, f)?;
    let pfl = g.add(pf, l)?;
    g.add(pfl, s)
}

/// Maps an image to a feature tensor for the feature-space loss.
pub trait FeatureExtractor<T: Scalar> {
    fn features(&self, img: &Tensor<T>) -> Result<Tensor<T>>;
}

const FEAT_H1: usize = 8;
const FEAT_H2: usize = 16;

/// Frozen seeded stand-in for a pretrained perceptual feature network:
/// three stride-2 convolutions with ReLU between them. Never trained.
#[derive(Clone, Debug)]
pub struct FrozenRandomFeatures<T> {
    conv1: Conv2d<T>,
    conv2: Conv2d<T>,
    conv3: Conv2d<T>,
}

impl<T: Scalar> FrozenRandomFeatures<T> {
    pub fn seeded(rng: &mut SeededRng) -> Self {
        Self {
            conv1: Conv2d::seeded(3, FEAT_H1, 3, 2, 1, rng),
            conv2: Conv2d::seeded(FEAT_H1, FEAT_H2, 3, 2, 1, rng),
            conv3: Conv2d::seeded(FEAT_H2, FEAT_H2, 3, 2, 1, rng),
        }
    }

    /// Tape registration. The extractor is frozen, so its tensors never
    /// join a trainable registry; gradients still flow through to inputs.
    pub fn register(&self, g: &mut Graph<T>, prefix: &str) -> FeatureVars {
        FeatureVars {
            conv1: self.conv1.register(g, &format!("{prefix}.conv1"), None),
            conv2: self.conv2.register(g, &format!("{prefix}.conv2"), None),
            conv3: self.conv3.register(g, &format!("{prefix}.conv3"), None),
        }
    }
}

impl<T: Scalar> FeatureExtractor<T> for FrozenRandomFeatures<T> {
    fn features(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        let h = relu(&self.conv1.forward(img)?);
        let h = relu(&self.conv2.forward(&h)?);
        self.conv3.forward(&h)
    }
}

/// Tape handles for the frozen feature extractor.
#[derive(Clone, Copy, Debug)]
pub struct FeatureVars {
    conv1: ConvVars,
    conv2: ConvVars,
    conv3: ConvVars,
}

impl FeatureVars {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, x)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, h)?;
        let h = g.relu(h);
        self.conv3.forward(g, h)
    }
}
