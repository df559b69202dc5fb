//! Pluggable latent codec. The default identity codec works directly on
//! pixels; the tiny autoencoder trades exactness for a 4x spatial reduction
//! and is pretrained on the task dataset, then frozen.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvVars, ParamVars};
use crate::numerics::rng::SeededRng;
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;
use crate::transforms::pixel_shuffle;

/// Image <-> latent mapping used around the invertible rescaler.
pub trait LatentCodec<T: Scalar> {
    fn encode(&self, img: &Tensor<T>) -> Result<Tensor<T>>;
    fn decode(&self, lat: &Tensor<T>) -> Result<Tensor<T>>;
    fn latent_channels(&self) -> usize;
    /// Spatial reduction factor of encode (1 for identity, 4 for tiny-ae).
    fn spatial_factor(&self) -> usize;
}

/// Two stride-2 convolutions down, two shuffle upsamplings back.
#[derive(Clone, Debug)]
pub struct TinyAutoencoder<T> {
    pub enc1: Conv2d<T>,
    pub enc2: Conv2d<T>,
    pub dec1: Conv2d<T>,
    pub dec2: Conv2d<T>,
    c_lat: usize,
}

const AE_HIDDEN: usize = 8;

impl<T: Scalar> TinyAutoencoder<T> {
    pub fn seeded(c_lat: usize, rng: &mut SeededRng) -> Self {
        Self {
            enc1: Conv2d::seeded(3, AE_HIDDEN, 3, 2, 1, rng),
            enc2: Conv2d::seeded(AE_HIDDEN, c_lat, 3, 2, 1, rng),
            dec1: Conv2d::seeded(c_lat, AE_HIDDEN * 4, 3, 1, 1, rng),
            dec2: Conv2d::seeded(AE_HIDDEN, 3 * 4, 3, 1, 1, rng),
            c_lat,
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.enc1.visit(&format!("{prefix}.enc1"), f);
        self.enc2.visit(&format!("{prefix}.enc2"), f);
        self.dec1.visit(&format!("{prefix}.dec1"), f);
        self.dec2.visit(&format!("{prefix}.dec2"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.enc1.visit_mut(&format!("{prefix}.enc1"), f);
        self.enc2.visit_mut(&format!("{prefix}.enc2"), f);
        self.dec1.visit_mut(&format!("{prefix}.dec1"), f);
        self.dec2.visit_mut(&format!("{prefix}.dec2"), f);
    }
}

impl<T: Scalar> LatentCodec<T> for TinyAutoencoder<T> {
    fn encode(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        if img.rank() != 3 || img.dims()[0] != 3 || img.dims()[1] % 4 != 0 || img.dims()[2] % 4 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "tiny-ae encode expects (3, 4k, 4k) input, got {:?}",
                img.dims()
            )));
        }
        self.enc2.forward(&crate::nn::relu(&self.enc1.forward(img)?))
    }

    fn decode(&self, lat: &Tensor<T>) -> Result<Tensor<T>> {
        let h = pixel_shuffle(&self.dec1.forward(lat)?, 2)?;
        pixel_shuffle(&self.dec2.forward(&crate::nn::relu(&h))?, 2)
    }

    fn latent_channels(&self) -> usize {
        self.c_lat
    }

    fn spatial_factor(&self) -> usize {
        4
    }
}

/// Concrete codec storage for the model.
#[derive(Clone, Debug)]
pub enum Codec<T> {
    Identity,
    Tiny(TinyAutoencoder<T>),
}

impl<T: Scalar> Codec<T> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Codec::Identity => "identity",
            Codec::Tiny(_) => "tiny-ae",
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        if let Codec::Tiny(ae) = self {
            ae.visit(prefix, f);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        if let Codec::Tiny(ae) = self {
            ae.visit_mut(prefix, f);
        }
    }

    /// Puts decode-path (and encode-path) parameters on the tape. The codec
    /// is frozen during main training, so handles never join the trainable
    /// registry here; pretraining registers them itself.
    pub fn register(&self, g: &mut Graph<T>, prefix: &str) -> CodecVars {
        match self {
            Codec::Identity => CodecVars::Identity,
            Codec::Tiny(ae) => CodecVars::Tiny {
                enc1: ae.enc1.register(g, &format!("{prefix}.enc1"), None),
                enc2: ae.enc2.register(g, &format!("{prefix}.enc2"), None),
                dec1: ae.dec1.register(g, &format!("{prefix}.dec1"), None),
                dec2: ae.dec2.register(g, &format!("{prefix}.dec2"), None),
            },
        }
    }
}

impl<T: Scalar> LatentCodec<T> for Codec<T> {
    fn encode(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Codec::Identity => Ok(img.clone()),
            Codec::Tiny(ae) => ae.encode(img),
        }
    }

    fn decode(&self, lat: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Codec::Identity => Ok(lat.clone()),
            Codec::Tiny(ae) => ae.decode(lat),
        }
    }

    fn latent_channels(&self) -> usize {
        match self {
            Codec::Identity => 3,
            Codec::Tiny(ae) => ae.latent_channels(),
        }
    }

    fn spatial_factor(&self) -> usize {
        match self {
            Codec::Identity => 1,
            Codec::Tiny(ae) => ae.spatial_factor(),
        }
    }
}

/// Tape handles for the codec.
#[derive(Clone, Copy, Debug)]
pub enum CodecVars {
    Identity,
    Tiny { enc1: ConvVars, enc2: ConvVars, dec1: ConvVars, dec2: ConvVars },
}

impl CodecVars {
    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, img: Var) -> Result<Var> {
        match self {
            CodecVars::Identity => Ok(img),
            CodecVars::Tiny { enc1, enc2, .. } => {
                let h = enc1.forward(g, img)?;
                let h = g.relu(h);
                enc2.forward(g, h)
            }
        }
    }

    pub fn decode<T: Scalar>(&self, g: &mut Graph<T>, lat: Var) -> Result<Var> {
        match self {
            CodecVars::Identity => Ok(lat),
            CodecVars::Tiny { dec1, dec2, .. } => {
                let h = dec1.forward(g, lat)?;
                let h = g.pixel_shuffle(h, 2)?;
                let h = g.relu(h);
                let h = dec2.forward(g, h)?;
                g.pixel_shuffle(h, 2)
            }
        }
    }

    /// Pretraining registration: same tensors, but collected as trainables.
    pub fn register_trainable<T: Scalar>(
        codec: &Codec<T>,
        g: &mut Graph<T>,
        prefix: &str,
        reg: &mut ParamVars,
    ) -> CodecVars {
        match codec {
            Codec::Identity => CodecVars::Identity,
            Codec::Tiny(ae) => CodecVars::Tiny {
                enc1: ae.enc1.register(g, &format!("{prefix}.enc1"), Some(reg)),
                enc2: ae.enc2.register(g, &format!("{prefix}.enc2"), Some(reg)),
                dec1: ae.dec1.register(g, &format!("{prefix}.dec1"), Some(reg)),
                dec2: ae.dec2.register(g, &format!("{prefix}.dec2"), Some(reg)),
            },
        }
    }
}
