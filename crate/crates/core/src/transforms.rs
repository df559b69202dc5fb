//! Spatial rearrangement, the fixed Haar baseline, and the learnable
//! orthogonal per-site transform with its transpose inverse.

use crate::error::{Error, Result};
use crate::numerics::rng::SeededRng;
use crate::numerics::svd::{orthogonal_project, orthogonality_error};
use crate::numerics::tensor::{matmul, transpose, Tensor};
use crate::scalar::{from_f64, Scalar};

/// Largest tolerated ‖WᵀW − I‖∞ for a kernel to count as orthogonal.
pub const ORTHOGONALITY_BUDGET: f64 = 1e-4;

fn check_rank3<T: Scalar>(x: &Tensor<T>, what: &str) -> Result<()> {
    if x.rank() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "{what} expects a (C,H,W) tensor, got {:?}",
            x.dims()
        )));
    }
    Ok(())
}

/// Space-to-depth: output channel c·s² + dy·s + dx at (h,w) takes the input
/// value of channel c at (h·s + dy, w·s + dx).
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    check_rank3(x, "pixel_unshuffle")?;
    let (c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::ShapeMismatch(format!(
            "spatial extents ({h},{w}) not divisible by scale {s}"
        )));
    }
    let (oh, ow) = (h / s, w / s);
    let mut out = Tensor::zeros(&[c * s * s, oh, ow]);
    let src = x.data();
    let dst = out.data_mut();
    for ci in 0..c {
        for dy in 0..s {
            for dx in 0..s {
                let oc = ci * s * s + dy * s + dx;
                for oy in 0..oh {
                    let src_row = ci * h * w + (oy * s + dy) * w + dx;
                    let dst_row = oc * oh * ow + oy * ow;
                    for ox in 0..ow {
                        dst[dst_row + ox] = src[src_row + ox * s];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Depth-to-space, the exact inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    check_rank3(x, "pixel_shuffle")?;
    let (cs2, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    if s == 0 || cs2 % (s * s) != 0 {
        return Err(Error::ShapeMismatch(format!(
            "channel count {cs2} not divisible by s²={}",
            s * s
        )));
    }
    let c = cs2 / (s * s);
    let mut out = Tensor::zeros(&[c, h * s, w * s]);
    let src = x.data();
    let dst = out.data_mut();
    for ci in 0..c {
        for dy in 0..s {
            for dx in 0..s {
                let ic = ci * s * s + dy * s + dx;
                for iy in 0..h {
                    let src_row = ic * h * w + iy * w;
                    let dst_row = ci * (h * s) * (w * s) + (iy * s + dy) * (w * s) + dx;
                    for ix in 0..w {
                        dst[dst_row + ix * s] = src[src_row + ix];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Orthonormal 2D Haar step. Per 2x2 block (a,b / c,d) the four outputs are
/// LL=(a+b+c+d)/2, LH=(a-b+c-d)/2, HL=(a+b-c-d)/2, HH=(a-b-c+d)/2, emitted
/// as channels LL,LH,HL,HH per input channel. A constant image of value v
/// therefore has LL = 2v.
pub fn haar_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    check_rank3(x, "haar_forward")?;
    let (c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!("odd spatial extents ({h},{w})")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let half = from_f64::<T>(0.5);
    let mut out = Tensor::zeros(&[4 * c, oh, ow]);
    let src = x.data();
    let dst = out.data_mut();
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = ci * h * w + (2 * oy) * w + 2 * ox;
                let a = src[base];
                let b = src[base + 1];
                let cc = src[base + w];
                let d = src[base + w + 1];
                let site = oy * ow + ox;
                dst[(ci * 4) * oh * ow + site] = (a + b + cc + d) * half;
                dst[(ci * 4 + 1) * oh * ow + site] = (a - b + cc - d) * half;
                dst[(ci * 4 + 2) * oh * ow + site] = (a + b - cc - d) * half;
                dst[(ci * 4 + 3) * oh * ow + site] = (a - b - cc + d) * half;
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`haar_forward`].
pub fn haar_inverse<T: Scalar>(y: &Tensor<T>) -> Result<Tensor<T>> {
    check_rank3(y, "haar_inverse")?;
    let (c4, h, w) = (y.dims()[0], y.dims()[1], y.dims()[2]);
    if c4 % 4 != 0 {
        return Err(Error::ShapeMismatch(format!("channel count {c4} not divisible by 4")));
    }
    let c = c4 / 4;
    let half = from_f64::<T>(0.5);
    let mut out = Tensor::zeros(&[c, 2 * h, 2 * w]);
    let src = y.data();
    let dst = out.data_mut();
    for ci in 0..c {
        for iy in 0..h {
            for ix in 0..w {
                let site = iy * w + ix;
                let ll = src[(ci * 4) * h * w + site];
                let lh = src[(ci * 4 + 1) * h * w + site];
                let hl = src[(ci * 4 + 2) * h * w + site];
                let hh = src[(ci * 4 + 3) * h * w + site];
                let base = ci * (2 * h) * (2 * w) + (2 * iy) * (2 * w) + 2 * ix;
                dst[base] = (ll + lh + hl + hh) * half;
                dst[base + 1] = (ll - lh + hl - hh) * half;
                dst[base + 2 * w] = (ll + lh - hl - hh) * half;
                dst[base + 2 * w + 1] = (ll - lh - hl + hh) * half;
            }
        }
    }
    Ok(out)
}

/// The dense matrix that makes the per-site transform reproduce
/// [`haar_forward`]: block-diagonal, one 4x4 Haar block per input channel,
/// acting on pixel-unshuffled channel vectors at scale 2.
pub fn haar_kernel_matrix<T: Scalar>(channels: usize) -> Tensor<T> {
    let h4: [[f64; 4]; 4] = [
        [0.5, 0.5, 0.5, 0.5],
        [0.5, -0.5, 0.5, -0.5],
        [0.5, 0.5, -0.5, -0.5],
        [0.5, -0.5, -0.5, 0.5],
    ];
    let n = 4 * channels;
    Tensor::from_fn(&[n, n], |idx| {
        let (i, j) = (idx / n, idx % n);
        if i / 4 == j / 4 {
            from_f64(h4[i % 4][j % 4])
        } else {
            T::zero()
        }
    })
}

/// The learnable per-site matrix of the reversible transform, kept within
/// the orthogonality budget so its transpose is a valid inverse.
#[derive(Clone, Debug)]
pub struct OrthogonalKernel<T> {
    w: Tensor<T>,
    scale: usize,
    channels_in: usize,
}

impl<T: Scalar> OrthogonalKernel<T> {
    pub fn identity(channels_in: usize, scale: usize) -> Self {
        Self { w: Tensor::eye(channels_in * scale * scale), scale, channels_in }
    }

    /// Uniform(-1/sqrt(n), 1/sqrt(n)) draw followed by orthogonal projection.
    pub fn random(channels_in: usize, scale: usize, rng: &mut SeededRng) -> Result<Self> {
        let n = channels_in * scale * scale;
        let lim = 1.0 / (n as f64).sqrt();
        let draw: Tensor<T> = rng.tensor_uniform(&[n, n], -lim, lim);
        let w = orthogonal_project(&draw)?;
        Ok(Self { w, scale, channels_in })
    }

    /// Wraps an explicit matrix, enforcing shape and the orthogonality budget.
    pub fn from_matrix(w: Tensor<T>, channels_in: usize, scale: usize) -> Result<Self> {
        let n = channels_in * scale * scale;
        if w.dims() != [n, n] {
            return Err(Error::ShapeMismatch(format!(
                "kernel must be {n}x{n} for C={channels_in}, s={scale}, got {:?}",
                w.dims()
            )));
        }
        let k = Self { w, scale, channels_in };
        if k.ortho_error() >= ORTHOGONALITY_BUDGET {
            return Err(Error::InvalidArgument(format!(
                "kernel breaks the orthogonality budget: {:.3e}",
                k.ortho_error()
            )));
        }
        Ok(k)
    }

    /// Scale-2 kernel that reproduces the Haar transform exactly.
    pub fn haar(channels_in: usize) -> Self {
        Self { w: haar_kernel_matrix(channels_in), scale: 2, channels_in }
    }

    pub fn w(&self) -> &Tensor<T> {
        &self.w
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn channels_in(&self) -> usize {
        self.channels_in
    }

    pub fn dim(&self) -> usize {
        self.channels_in * self.scale * self.scale
    }

    pub fn ortho_error(&self) -> f64 {
        orthogonality_error(&self.w)
    }

    /// Projects w back onto the orthogonal manifold; run after every
    /// optimizer update so the transpose stays an exact inverse.
    pub fn reproject(&mut self) -> Result<()> {
        self.w = orthogonal_project(&self.w)?;
        Ok(())
    }

    pub(crate) fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{prefix}.w"), &self.w);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.w"), &mut self.w);
    }
}

/// Pixel-unshuffle, then replace every spatial site's channel vector v by
/// W·v. The unshuffled (n,h,w) tensor is row-major, so the per-site products
/// collapse into one (n,n)x(n,h·w) matrix product.
pub fn lrt_forward<T: Scalar>(x: &Tensor<T>, k: &OrthogonalKernel<T>) -> Result<Tensor<T>> {
    check_rank3(x, "lrt_forward")?;
    if x.dims()[0] != k.channels_in {
        return Err(Error::ShapeMismatch(format!(
            "kernel expects {} input channels, got {}",
            k.channels_in,
            x.dims()[0]
        )));
    }
    let u = pixel_unshuffle(x, k.scale)?;
    let (n, h, w) = (u.dims()[0], u.dims()[1], u.dims()[2]);
    let flat = u.reshape(&[n, h * w])?;
    let mixed = matmul(&k.w, &flat)?;
    mixed.reshape(&[n, h, w])
}

/// Per-site Wᵀ·v, then pixel-shuffle; exact inverse of [`lrt_forward`]
/// whenever the kernel's orthogonality budget holds.
pub fn lrt_inverse<T: Scalar>(y: &Tensor<T>, k: &OrthogonalKernel<T>) -> Result<Tensor<T>> {
    check_rank3(y, "lrt_inverse")?;
    let n = k.dim();
    if y.dims()[0] != n {
        return Err(Error::ShapeMismatch(format!(
            "kernel expects {n} channels, got {}",
            y.dims()[0]
        )));
    }
    let (h, w) = (y.dims()[1], y.dims()[2]);
    let flat = y.reshape(&[n, h * w])?;
    let unmixed = matmul(&transpose(&k.w)?, &flat)?;
    pixel_shuffle(&unmixed.reshape(&[n, h, w])?, k.scale)
}
