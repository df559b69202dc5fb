//! Reconstruction quality metrics over [0,1] tensors, computed in f64.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::{to_f64, Scalar};

/// Cap reported instead of infinity when the squared error underflows.
pub const PSNR_CAP_DB: f64 = 99.0;
const PSNR_MSE_FLOOR: f64 = 1e-10;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// 10 * log10(1 / MSE) against a dynamic range of 1, capped at 99 dB.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!("psnr: {:?} vs {:?}", a.dims(), b.dims())));
    }
    let mut acc = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = to_f64(x) - to_f64(y);
        acc += d * d;
    }
    let mse = acc / a.len() as f64;
    if mse < PSNR_MSE_FLOOR {
        Ok(PSNR_CAP_DB)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0f64; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-window separable Gaussian filter of an (H, W) f64 plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0f64; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, &wt) in k.iter().enumerate() {
                acc += wt * plane[y * w + x + t];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, &wt) in k.iter().enumerate() {
                acc += wt * rows[(y + t) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean local structural similarity: 11x11 Gaussian window, sigma 1.5,
/// K1 = 0.01, K2 = 0.03, dynamic range 1, per channel, averaged over all
/// valid window positions and channels.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!("ssim: {:?} vs {:?}", a.dims(), b.dims())));
    }
    if a.rank() != 3 {
        return Err(Error::ShapeMismatch(format!("ssim expects (C,H,W), got {:?}", a.dims())));
    }
    let (c, h, w) = (a.dims()[0], a.dims()[1], a.dims()[2]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs extents of at least {SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ci in 0..c {
        let plane = h * w;
        let xs: Vec<f64> = a.data()[ci * plane..(ci + 1) * plane].iter().map(|&v| to_f64(v)).collect();
        let ys: Vec<f64> = b.data()[ci * plane..(ci + 1) * plane].iter().map(|&v| to_f64(v)).collect();
        let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| x * y).collect();
        let mx = filter_valid(&xs, h, w, &k);
        let my = filter_valid(&ys, h, w, &k);
        let mxx = filter_valid(&xx, h, w, &k);
        let myy = filter_valid(&yy, h, w, &k);
        let mxy = filter_valid(&xy, h, w, &k);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cov = mxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Byte size of the original file divided by byte size of the LR artifact.
pub fn compression_ratio(original: &Path, lr: &Path) -> Result<f64> {
    let o = std::fs::metadata(original)?.len();
    let l = std::fs::metadata(lr)?.len();
    if l == 0 {
        return Err(Error::InvalidArgument(format!("{} is empty", lr.display())));
    }
    Ok(o as f64 / l as f64)
}
