//! The stored detail prior: a learnable tile substituted for the discarded
//! high-frequency channels at upscale time.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::ParamVars;
use crate::numerics::rng::SeededRng;
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// How the prior is populated and whether it trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdpKind {
    /// All-zero, fixed. The ablation baseline.
    Zeros,
    /// Uniform(-0.5, 0.5) draw, fixed. The degradation baseline.
    Random,
    /// Starts at zero and receives gradient.
    Learnable,
}

impl AdpKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zeros" => Ok(Self::Zeros),
            "random" => Ok(Self::Random),
            "learnable" => Ok(Self::Learnable),
            other => Err(Error::Config(format!(
                "unknown adp kind '{other}' (expected zeros|random|learnable)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Zeros => "zeros",
            Self::Random => "random",
            Self::Learnable => "learnable",
        }
    }
}

/// A (C_hf, P, P) tile tiled across the LR plane, truncated at the edges.
/// P = 1 degenerates to one scalar per channel.
#[derive(Clone, Debug)]
pub struct AdaptiveDetailPrior<T> {
    pub tile: Tensor<T>,
    pub kind: AdpKind,
}

impl<T: Scalar> AdaptiveDetailPrior<T> {
    pub fn new(kind: AdpKind, channels: usize, tile_size: usize, rng: &mut SeededRng) -> Self {
        let dims = [channels, tile_size, tile_size];
        let tile = match kind {
            AdpKind::Zeros | AdpKind::Learnable => Tensor::zeros(&dims),
            AdpKind::Random => rng.tensor_uniform(&dims, -0.5, 0.5),
        };
        Self { tile, kind }
    }

    pub fn channels(&self) -> usize {
        self.tile.dims()[0]
    }

    pub fn tile_size(&self) -> usize {
        self.tile.dims()[1]
    }

    pub fn trainable(&self) -> bool {
        self.kind == AdpKind::Learnable
    }

    /// The compensation map for an (h, w) LR plane.
    pub fn map(&self, h: usize, w: usize) -> Tensor<T> {
        let (c, ph, pw) = (self.channels(), self.tile.dims()[1], self.tile.dims()[2]);
        let mut out = Tensor::zeros(&[c, h, w]);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = self.tile.data()[ci * ph * pw + (y % ph) * pw + (x % pw)];
                    out.data_mut()[ci * h * w + y * w + x] = v;
                }
            }
        }
        out
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{prefix}.tile"), &self.tile);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.tile"), &mut self.tile);
    }

    /// Tape handle for the tile; registered as trainable only for the
    /// learnable kind.
    pub fn register(&self, g: &mut Graph<T>, prefix: &str, reg: Option<&mut ParamVars>) -> Var {
        let v = g.leaf(self.tile.clone(), format!("{prefix}.tile"));
        if let (Some(reg), true) = (reg, self.trainable()) {
            reg.push((format!("{prefix}.tile"), v));
        }
        v
    }
}
