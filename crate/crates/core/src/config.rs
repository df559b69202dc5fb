//! Run configuration: plain-text `key = value` files, validation, and the
//! exact encoding of every setting into checkpoint scalar tensors so a
//! checkpoint is self-describing.

use std::path::Path;

use crate::error::{Error, Result};
use crate::invnet::AdpKind;
use crate::numerics::tensor::Tensor;
use crate::training::loss::LossWeights;

/// Which latent codec the model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodecKind {
    Identity,
    TinyAe,
}

impl CodecKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "tiny-ae" => Ok(Self::TinyAe),
            other => Err(Error::Config(format!("unknown codec '{other}' (expected identity|tiny-ae)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::TinyAe => "tiny-ae",
        }
    }

    /// Spatial reduction the codec contributes on top of the latent scale.
    pub fn spatial_factor(&self) -> usize {
        match self {
            Self::Identity => 1,
            Self::TinyAe => 4,
        }
    }
}

/// Every tunable of a run. Field names double as config-file keys.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scale: usize,
    pub codec: CodecKind,
    pub hidden: usize,
    pub adp: AdpKind,
    pub adp_tile: usize,
    pub embed_dim: usize,
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub w_pixel: f64,
    pub w_feat: f64,
    pub w_lr: f64,
    pub w_sem: f64,
    pub lr: f64,
    pub lr_halve_every: usize,
    pub steps: usize,
    pub batch: usize,
    pub crop: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scale: 4,
            codec: CodecKind::Identity,
            hidden: 32,
            adp: AdpKind::Learnable,
            adp_tile: 8,
            embed_dim: 64,
            t_max: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            w_pixel: 2.0,
            w_feat: 5.0,
            w_lr: 3.0,
            w_sem: 3.0,
            lr: 1e-4,
            lr_halve_every: 5000,
            steps: 200,
            batch: 4,
            crop: 64,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Parses `key = value` lines over the defaults. Full-line `#` comments
    /// and blank lines are allowed; unknown and repeated keys are errors.
    pub fn from_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key.to_string()) {
                return Err(Error::Config(format!("line {}: key '{key}' set twice", lineno + 1)));
            }
            seen.push(key.to_string());
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{value}'")))
        }
        match key {
            "scale" => self.scale = num(key, value)?,
            "codec" => self.codec = CodecKind::parse(value)?,
            "hidden" => self.hidden = num(key, value)?,
            "adp" => self.adp = AdpKind::parse(value)?,
            "adp_tile" => self.adp_tile = num(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "t_max" => self.t_max = num(key, value)?,
            "beta_start" => self.beta_start = num(key, value)?,
            "beta_end" => self.beta_end = num(key, value)?,
            "w_pixel" => self.w_pixel = num(key, value)?,
            "w_feat" => self.w_feat = num(key, value)?,
            "w_lr" => self.w_lr = num(key, value)?,
            "w_sem" => self.w_sem = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "lr_halve_every" => self.lr_halve_every = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "crop" => self.crop = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if ![2, 4, 8].contains(&self.scale) {
            return Err(Error::Config(format!("scale must be 2, 4 or 8, got {}", self.scale)));
        }
        for (name, v) in [
            ("hidden", self.hidden),
            ("adp_tile", self.adp_tile),
            ("embed_dim", self.embed_dim),
            ("t_max", self.t_max),
            ("lr_halve_every", self.lr_halve_every),
            ("batch", self.batch),
            ("crop", self.crop),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.beta_start > 0.0 && self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            return Err(Error::Config(format!(
                "noise schedule needs 0 < beta_start <= beta_end < 1, got {} and {}",
                self.beta_start, self.beta_end
            )));
        }
        self.loss_weights().validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        let total = self.total_scale();
        if self.crop % total != 0 {
            return Err(Error::Config(format!(
                "crop {} is not divisible by the total scale {total}",
                self.crop
            )));
        }
        Ok(())
    }

    /// Combined spatial reduction from image to LR image.
    pub fn total_scale(&self) -> usize {
        self.scale * self.codec.spatial_factor()
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { w_pixel: self.w_pixel, w_feat: self.w_feat, w_lr: self.w_lr, w_sem: self.w_sem }
    }

    /// Encodes every setting as `cfg.*` checkpoint tensors. Small integers
    /// and enum codes become rank-0 scalars; f64 values and the u64 seed are
    /// stored as 16-bit chunk vectors so no bits are lost in f32 storage.
    pub fn scalar_entries(&self) -> Vec<(String, Tensor<f32>)> {
        let adp_code = match self.adp {
            AdpKind::Zeros => 0.0,
            AdpKind::Random => 1.0,
            AdpKind::Learnable => 2.0,
        };
        let codec_code = match self.codec {
            CodecKind::Identity => 0.0,
            CodecKind::TinyAe => 1.0,
        };
        vec![
            ("cfg.scale".into(), Tensor::scalar(self.scale as f32)),
            ("cfg.codec".into(), Tensor::scalar(codec_code)),
            ("cfg.hidden".into(), Tensor::scalar(self.hidden as f32)),
            ("cfg.adp".into(), Tensor::scalar(adp_code)),
            ("cfg.adp_tile".into(), Tensor::scalar(self.adp_tile as f32)),
            ("cfg.embed_dim".into(), Tensor::scalar(self.embed_dim as f32)),
            ("cfg.t_max".into(), Tensor::scalar(self.t_max as f32)),
            ("cfg.beta_start".into(), bits_tensor(self.beta_start.to_bits())),
            ("cfg.beta_end".into(), bits_tensor(self.beta_end.to_bits())),
            ("cfg.w_pixel".into(), bits_tensor(self.w_pixel.to_bits())),
            ("cfg.w_feat".into(), bits_tensor(self.w_feat.to_bits())),
            ("cfg.w_lr".into(), bits_tensor(self.w_lr.to_bits())),
            ("cfg.w_sem".into(), bits_tensor(self.w_sem.to_bits())),
            ("cfg.lr".into(), bits_tensor(self.lr.to_bits())),
            ("cfg.lr_halve_every".into(), Tensor::scalar(self.lr_halve_every as f32)),
            ("cfg.steps".into(), Tensor::scalar(self.steps as f32)),
            ("cfg.batch".into(), Tensor::scalar(self.batch as f32)),
            ("cfg.crop".into(), Tensor::scalar(self.crop as f32)),
            ("cfg.seed".into(), bits_tensor(self.seed)),
        ]
    }

    /// Rebuilds a config from checkpoint tensors, ignoring non-`cfg.` names.
    pub fn from_scalar_entries(entries: &[(String, Tensor<f32>)]) -> Result<Self> {
        let get = |name: &str| -> Result<&Tensor<f32>> {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Config(format!("checkpoint is missing {name}")))
        };
        let int = |name: &str| -> Result<usize> {
            let t = get(name)?;
            let v = t.item();
            if !(v.is_finite() && v >= 0.0 && v.fract() == 0.0) {
                return Err(Error::Config(format!("{name} holds a non-integer: {v}")));
            }
            Ok(v as usize)
        };
        let cfg = Self {
            scale: int("cfg.scale")?,
            codec: match int("cfg.codec")? {
                0 => CodecKind::Identity,
                1 => CodecKind::TinyAe,
                c => return Err(Error::Config(format!("unknown codec code {c}"))),
            },
            hidden: int("cfg.hidden")?,
            adp: match int("cfg.adp")? {
                0 => AdpKind::Zeros,
                1 => AdpKind::Random,
                2 => AdpKind::Learnable,
                c => return Err(Error::Config(format!("unknown adp code {c}"))),
            },
            adp_tile: int("cfg.adp_tile")?,
            embed_dim: int("cfg.embed_dim")?,
            t_max: int("cfg.t_max")?,
            beta_start: f64::from_bits(tensor_bits(get("cfg.beta_start")?)?),
            beta_end: f64::from_bits(tensor_bits(get("cfg.beta_end")?)?),
            w_pixel: f64::from_bits(tensor_bits(get("cfg.w_pixel")?)?),
            w_feat: f64::from_bits(tensor_bits(get("cfg.w_feat")?)?),
            w_lr: f64::from_bits(tensor_bits(get("cfg.w_lr")?)?),
            w_sem: f64::from_bits(tensor_bits(get("cfg.w_sem")?)?),
            lr: f64::from_bits(tensor_bits(get("cfg.lr")?)?),
            lr_halve_every: int("cfg.lr_halve_every")?,
            steps: int("cfg.steps")?,
            batch: int("cfg.batch")?,
            crop: int("cfg.crop")?,
            seed: tensor_bits(get("cfg.seed")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// 64 bits as four exact 16-bit chunks, least significant first.
fn bits_tensor(bits: u64) -> Tensor<f32> {
    let data = (0..4).map(|i| ((bits >> (16 * i)) & 0xFFFF) as f32).collect();
    Tensor::new(&[4], data).unwrap()
}

fn tensor_bits(t: &Tensor<f32>) -> Result<u64> {
    if t.dims() != [4] {
        return Err(Error::Config(format!("bit-chunk tensor must have shape [4], got {:?}", t.dims())));
    }
    let mut bits = 0u64;
    for (i, &c) in t.data().iter().enumerate() {
        if !(c.is_finite() && c >= 0.0 && c <= 65535.0 && c.fract() == 0.0) {
            return Err(Error::Config(format!("bit chunk {i} out of range: {c}")));
        }
        bits |= (c as u64) << (16 * i);
    }
    Ok(bits)
}
