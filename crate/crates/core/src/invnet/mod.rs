//! The invertible latent rescaler: orthogonal transform, coupling blocks,
//! channel split into a viewable LR image plus discarded detail, and the
//! stored prior that replaces the detail at upscale time.

pub mod adp;
pub mod codec;
pub mod coupling;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::ParamVars;
use crate::numerics::rng::SeededRng;
use crate::numerics::tensor::{concat0, Tensor};
use crate::scalar::{from_f64, Scalar};
use crate::transforms::{lrt_forward, lrt_inverse, OrthogonalKernel};

pub use adp::{AdaptiveDetailPrior, AdpKind};
pub use codec::{Codec, CodecVars, LatentCodec, TinyAutoencoder};
pub use coupling::{CouplingBlock, CouplingVars};

/// Channels kept as the viewable LR image.
pub const LR_CHANNELS: usize = 3;

/// Number of coupling blocks in the rescaler.
pub const NUM_BLOCKS: usize = 3;

/// Clamp to [0,1], then round to the 255-level grid, half away from zero,
/// matching how the PNG writer will round.
pub fn quantize<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let levels = from_f64::<T>(255.0);
    x.map(|v| {
        let c = if v < T::zero() {
            T::zero()
        } else if v > T::one() {
            T::one()
        } else {
            v
        };
        (c * levels).round() / levels
    })
}

/// The invertible half of the system: codec, orthogonal kernel, coupling
/// blocks, and the stored detail prior.
#[derive(Clone, Debug)]
pub struct InvertibleRescaler<T> {
    pub codec: Codec<T>,
    pub kernel: OrthogonalKernel<T>,
    pub blocks: Vec<CouplingBlock<T>>,
    pub adp: AdaptiveDetailPrior<T>,
    pub scale: usize,
}

impl<T: Scalar> InvertibleRescaler<T> {
    /// Randomly initialized model. The kernel is orthogonal by construction
    /// and the subnets carry small nonzero weights.
    pub fn seeded(
        codec: Codec<T>,
        scale: usize,
        hidden: usize,
        alpha: f64,
        adp_kind: AdpKind,
        adp_tile: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let c_lat = codec.latent_channels();
        let dim = c_lat * scale * scale;
        if scale < 2 || dim <= LR_CHANNELS {
            return Err(Error::Config(format!(
                "scale {scale} with {c_lat} latent channels leaves no detail branch"
            )));
        }
        let kernel = OrthogonalKernel::random(c_lat, scale, &mut rng.split("kernel"))?;
        let n_b = dim - LR_CHANNELS;
        let blocks = (0..NUM_BLOCKS)
            .map(|i| {
                CouplingBlock::seeded(LR_CHANNELS, n_b, hidden, alpha, &mut rng.split(&format!("block{i}")))
            })
            .collect();
        let adp = AdaptiveDetailPrior::new(adp_kind, n_b, adp_tile, &mut rng.split("adp"));
        Ok(Self { codec, kernel, blocks, adp, scale })
    }

    /// Identity kernel, zero subnets, zeros prior, identity codec: a pure
    /// channel rearrangement, useful as an algebraic reference point.
    pub fn identity_rearrangement(scale: usize, adp_kind: AdpKind, adp_tile: usize) -> Result<Self> {
        let dim = LR_CHANNELS * scale * scale;
        if scale < 2 {
            return Err(Error::Config(format!("scale {scale} leaves no detail branch")));
        }
        let n_b = dim - LR_CHANNELS;
        let mut rng = SeededRng::new(0);
        Ok(Self {
            codec: Codec::Identity,
            kernel: OrthogonalKernel::identity(LR_CHANNELS, scale),
            blocks: (0..NUM_BLOCKS).map(|_| CouplingBlock::zeros(LR_CHANNELS, n_b, 4, 1.0)).collect(),
            adp: AdaptiveDetailPrior::new(adp_kind, n_b, adp_tile, &mut rng),
            scale,
        })
    }

    /// Channels in the discarded detail branch.
    pub fn hf_channels(&self) -> usize {
        self.kernel.dim() - LR_CHANNELS
    }

    /// Combined spatial reduction from image to LR image.
    pub fn total_scale(&self) -> usize {
        self.scale * self.codec.spatial_factor()
    }

    /// Encode, transform, couple, split; returns the LR image and the
    /// discarded detail channels. `do_quantize: false` is the diagnostic
    /// path used by the exact-inversion properties.
    pub fn downscale_full(&self, x: &Tensor<T>, do_quantize: bool) -> Result<(Tensor<T>, Tensor<T>)> {
        let latent = self.codec.encode(x)?;
        let mut t = lrt_forward(&latent, &self.kernel)?;
        for blk in &self.blocks {
            t = blk.forward(&t)?;
        }
        t.check_finite("downscale activations")?;
        let lr = t.narrow0(0, LR_CHANNELS)?;
        let hf = t.narrow0(LR_CHANNELS, self.hf_channels())?;
        let lr = if do_quantize { quantize(&lr) } else { lr };
        Ok((lr, hf))
    }

    /// The deployment downscale: quantized LR plus the detail channels that
    /// exist only for diagnostics and training, never for storage.
    pub fn downscale(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.downscale_full(x, true)
    }

    /// Rebuild the pre-refinement latent from an LR image, substituting the
    /// stored prior (or an explicit override) for the discarded channels.
    pub fn upscale(&self, lr: &Tensor<T>, hf_override: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        if lr.rank() != 3 || lr.dims()[0] != LR_CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "upscale expects a (3,h,w) LR image, got {:?}",
                lr.dims()
            )));
        }
        let (h, w) = (lr.dims()[1], lr.dims()[2]);
        let expect = [self.hf_channels(), h, w];
        let hf = match hf_override {
            Some(t) => {
                if t.dims() != expect {
                    return Err(Error::ShapeMismatch(format!(
                        "detail override shape {:?}, expected {:?}",
                        t.dims(),
                        expect
                    )));
                }
                t.clone()
            }
            None => self.adp.map(h, w),
        };
        let mut t = concat0(&[lr, &hf])?;
        for blk in self.blocks.iter().rev() {
            t = blk.inverse(&t)?;
        }
        t.check_finite("upscale activations")?;
        lrt_inverse(&t, &self.kernel)
    }

    /// Enumerates every tensor, trainable or not, under the given prefix.
    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.kernel.visit(&format!("{prefix}.kernel"), f);
        for (i, blk) in self.blocks.iter().enumerate() {
            blk.visit(&format!("{prefix}.blocks.{i}"), f);
        }
        self.adp.visit(&format!("{prefix}.adp"), f);
        self.codec.visit(&format!("{prefix}.codec"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.kernel.visit_mut(&format!("{prefix}.kernel"), f);
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            blk.visit_mut(&format!("{prefix}.blocks.{i}"), f);
        }
        self.adp.visit_mut(&format!("{prefix}.adp"), f);
        self.codec.visit_mut(&format!("{prefix}.codec"), f);
    }

    /// Enumerates the tensors updated by the main training loop: kernel,
    /// coupling subnets, and the prior when learnable. The codec never
    /// trains here (it is pretrained and then frozen).
    pub fn visit_trainable_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.kernel.visit_mut(&format!("{prefix}.kernel"), f);
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            blk.visit_mut(&format!("{prefix}.blocks.{i}"), f);
        }
        if self.adp.trainable() {
            self.adp.visit_mut(&format!("{prefix}.adp"), f);
        }
    }

    /// Tape registration mirroring the trainable set of
    /// [`Self::visit_trainable_mut`] name for name.
    pub fn register(&self, g: &mut Graph<T>, prefix: &str, reg: &mut ParamVars) -> InvertibleVars {
        let kernel_w = g.leaf(self.kernel.w().clone(), format!("{prefix}.kernel.w"));
        reg.push((format!("{prefix}.kernel.w"), kernel_w));
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, blk)| blk.register(g, &format!("{prefix}.blocks.{i}"), Some(reg)))
            .collect();
        let adp_tile = self.adp.register(g, &format!("{prefix}.adp"), Some(reg));
        let codec = self.codec.register(g, &format!("{prefix}.codec"));
        InvertibleVars { kernel_w, blocks, adp_tile, codec, scale: self.scale, n_b: self.hf_channels() }
    }
}

/// Tape handles for the invertible rescaler.
#[derive(Clone, Debug)]
pub struct InvertibleVars {
    pub kernel_w: Var,
    pub blocks: Vec<CouplingVars>,
    pub adp_tile: Var,
    pub codec: CodecVars,
    pub scale: usize,
    pub n_b: usize,
}

impl InvertibleVars {
    /// Taped downscale with straight-through quantization. Returns the
    /// quantized LR handle and the discarded-detail handle.
    pub fn downscale<T: Scalar>(&self, g: &mut Graph<T>, latent: Var) -> Result<(Var, Var)> {
        let u = g.pixel_unshuffle(latent, self.scale)?;
        let dims = g.value(u).dims().to_vec();
        let (n, h, w) = (dims[0], dims[1], dims[2]);
        let flat = g.reshape(u, &[n, h * w])?;
        let mixed = g.matmul(self.kernel_w, flat)?;
        let mut t = g.reshape(mixed, &[n, h, w])?;
        for blk in &self.blocks {
            t = blk.forward(g, t)?;
        }
        let lr = g.narrow0(t, 0, LR_CHANNELS)?;
        let hf = g.narrow0(t, LR_CHANNELS, self.n_b)?;
        let lr_q = g.quantize_ste(lr);
        Ok((lr_q, hf))
    }

    /// Taped upscale from an LR handle and a detail handle (usually the
    /// tiled prior from [`Self::adp_map`]).
    pub fn upscale<T: Scalar>(&self, g: &mut Graph<T>, lr: Var, hf: Var) -> Result<Var> {
        let mut t = g.concat0(&[lr, hf])?;
        for blk in self.blocks.iter().rev() {
            t = blk.inverse(g, t)?;
        }
        let dims = g.value(t).dims().to_vec();
        let (n, h, w) = (dims[0], dims[1], dims[2]);
        let flat = g.reshape(t, &[n, h * w])?;
        let wt = g.transpose(self.kernel_w)?;
        let unmixed = g.matmul(wt, flat)?;
        let cube = g.reshape(unmixed, &[n, h, w])?;
        g.pixel_shuffle(cube, self.scale)
    }

    /// Tiled prior for an (h, w) LR plane.
    pub fn adp_map<T: Scalar>(&self, g: &mut Graph<T>, h: usize, w: usize) -> Result<Var> {
        g.tile_spatial(self.adp_tile, h, w)
    }
}
