//! Separable cubic-convolution resampling, kernel parameter -0.5, pixel-
//! center alignment, clamped edges. No antialiasing prefilter.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::{from_f64, to_f64, Scalar};

const A: f64 = -0.5;

fn cubic(s: f64) -> f64 {
    let s = s.abs();
    if s <= 1.0 {
        ((A + 2.0) * s - (A + 3.0)) * s * s + 1.0
    } else if s < 2.0 {
        ((A * s - 5.0 * A) * s + 8.0 * A) * s - 4.0 * A
    } else {
        0.0
    }
}

/// Per output coordinate: four clamped source indices and weights normalized
/// to sum 1, so constants pass through exactly.
fn axis_taps(n_in: usize, n_out: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let src = (i as f64 + 0.5) * scale - 0.5;
            let base = src.floor() as isize;
            let mut idx = [0usize; 4];
            let mut wt = [0f64; 4];
            let mut sum = 0.0;
            for k in 0..4 {
                let j = base - 1 + k as isize;
                idx[k] = j.clamp(0, n_in as isize - 1) as usize;
                wt[k] = cubic(src - j as f64);
                sum += wt[k];
            }
            for w in &mut wt {
                *w /= sum;
            }
            (idx, wt)
        })
        .collect()
}

pub fn bicubic_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(Error::ShapeMismatch(format!("resize expects (C,H,W), got {:?}", x.dims())));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("target extents must be positive".into()));
    }
    let (c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let col_taps = axis_taps(w, out_w);
    let row_taps = axis_taps(h, out_h);

    // horizontal pass into an f64 plane, then vertical
    let mut mid = vec![0f64; c * h * out_w];
    for ci in 0..c {
        for y in 0..h {
            let src = ci * h * w + y * w;
            let dst = ci * h * out_w + y * out_w;
            for (ox, (idx, wt)) in col_taps.iter().enumerate() {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wt[k] * to_f64(x.data()[src + idx[k]]);
                }
                mid[dst + ox] = acc;
            }
        }
    }
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    for ci in 0..c {
        for (oy, (idx, wt)) in row_taps.iter().enumerate() {
            let dst = ci * out_h * out_w + oy * out_w;
            for ox in 0..out_w {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wt[k] * mid[ci * h * out_w + idx[k] * out_w + ox];
                }
                out.data_mut()[dst + ox] = from_f64(acc);
            }
        }
    }
    Ok(out)
}
