//! Small-matrix SVD via one-sided Jacobi rotations, and the orthogonal
//! projection W -> U V^T built on it.
//!
//! Internals accumulate in f64 regardless of the working scalar type; the
//! 1e-5 orthogonality tolerances are not reliably reachable in pure f32.

use crate::error::{Error, Result};
use crate::numerics::tensor::{matmul, transpose, Tensor};
use crate::scalar::{from_f64, to_f64, Scalar};

/// Maximum supported matrix side. Kernels in this crate are at most
/// channels * scale^2 = 3 * 8^2 = 192.
pub const MAX_SVD_DIM: usize = 256;

const MAX_SWEEPS: usize = 64;

/// Factors of `w = u * diag(sigma) * v^T` with `sigma` nonincreasing.
#[derive(Clone, Debug)]
pub struct Svd<T> {
    pub u: Tensor<T>,
    /// Rank-1 tensor of singular values, nonnegative, sorted descending.
    pub sigma: Tensor<T>,
    pub v: Tensor<T>,
}

impl<T: Scalar> Svd<T> {
    /// Recomposes `u * diag(sigma) * v^T`, for reconstruction checks.
    pub fn reconstruct(&self) -> Result<Tensor<T>> {
        let n = self.sigma.len();
        let mut scaled = self.u.clone();
        for i in 0..n {
            for j in 0..n {
                let v = scaled.at(&[i, j]) * self.sigma.data()[j];
                scaled.set(&[i, j], v);
            }
        }
        matmul(&scaled, &transpose(&self.v)?)
    }
}

/// One-sided Jacobi SVD of a square matrix with side <= [`MAX_SVD_DIM`].
pub fn svd_square<T: Scalar>(w: &Tensor<T>) -> Result<Svd<T>> {
    let n = check_square(w)?;
    w.check_finite("svd input")?;

    // Column-major working copy in f64; we rotate columns of b until they
    // are mutually orthogonal, accumulating the rotations into v.
    let mut b = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            b[j * n + i] = to_f64(w.data()[i * n + j]);
        }
    }
    let mut v = vec![0.0f64; n * n];
    for j in 0..n {
        v[j * n + j] = 1.0;
    }

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut app, mut aqq, mut apq) = (0.0f64, 0.0f64, 0.0f64);
                for i in 0..n {
                    let bp = b[p * n + i];
                    let bq = b[q * n + i];
                    app += bp * bp;
                    aqq += bq * bq;
                    apq += bp * bq;
                }
                if apq.abs() <= 1e-15 * (app * aqq).sqrt().max(f64::MIN_POSITIVE) {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let bp = b[p * n + i];
                    let bq = b[q * n + i];
                    b[p * n + i] = c * bp - s * bq;
                    b[q * n + i] = s * bp + c * bq;
                }
                for i in 0..n {
                    let vp = v[p * n + i];
                    let vq = v[q * n + i];
                    v[p * n + i] = c * vp - s * vq;
                    v[q * n + i] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdDidNotConverge(MAX_SWEEPS));
    }

    // Singular values are column norms; sort descending.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| b[j * n + i] * b[j * n + i]).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&a, &c| norms[c].partial_cmp(&norms[a]).unwrap());

    let sigma_max = norms[order[0]].max(f64::MIN_POSITIVE);
    let mut u = vec![0.0f64; n * n];
    let mut vt_sorted = vec![0.0f64; n * n];
    let mut sigma = vec![0.0f64; n];
    let mut deficient = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        sigma[slot] = norms[j];
        for i in 0..n {
            vt_sorted[slot * n + i] = v[j * n + i];
        }
        if norms[j] > sigma_max * 1e-13 {
            for i in 0..n {
                u[slot * n + i] = b[j * n + i] / norms[j];
            }
        } else {
            deficient.push(slot);
        }
    }
    if !deficient.is_empty() {
        complete_basis(&mut u, n, &deficient);
    }

    // u and vt_sorted hold columns contiguously; emit row-major matrices.
    let col_major_to_tensor = |cols: &[f64]| -> Tensor<T> {
        Tensor::from_fn(&[n, n], |idx| {
            let (i, j) = (idx / n, idx % n);
            from_f64(cols[j * n + i])
        })
    };
    Ok(Svd {
        u: col_major_to_tensor(&u),
        sigma: Tensor::new(&[n], sigma.iter().map(|&s| from_f64(s)).collect())?,
        v: col_major_to_tensor(&vt_sorted),
    })
}

/// Nearest-orthogonal projection `U V^T` of a square matrix.
pub fn orthogonal_project<T: Scalar>(w: &Tensor<T>) -> Result<Tensor<T>> {
    let n = check_square(w)?;
    let svd = svd_square(w)?;
    // Multiply in f64 so the result's orthogonality error stays at the
    // rounding floor of the working type.
    let u64t: Tensor<f64> = svd.u.cast();
    let v64t: Tensor<f64> = svd.v.cast();
    let proj = matmul(&u64t, &transpose(&v64t)?)?;
    debug_assert_eq!(proj.dims(), &[n, n]);
    Ok(proj.cast())
}

/// Max-abs of `w^T w - I`, the orthogonality defect.
pub fn orthogonality_error<T: Scalar>(w: &Tensor<T>) -> f64 {
    let n = w.dims()[0];
    let w64: Tensor<f64> = w.cast();
    let gram = matmul(&transpose(&w64).unwrap(), &w64).unwrap();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram.at(&[i, j]) - target).abs());
        }
    }
    worst
}

fn check_square<T: Scalar>(w: &Tensor<T>) -> Result<usize> {
    if w.rank() != 2 || w.dims()[0] != w.dims()[1] {
        return Err(Error::ShapeMismatch(format!(
            "expected square rank-2 matrix, got {:?}",
            w.dims()
        )));
    }
    let n = w.dims()[0];
    if n > MAX_SVD_DIM {
        return Err(Error::InvalidArgument(format!(
            "matrix side {n} exceeds SVD limit {MAX_SVD_DIM}"
        )));
    }
    Ok(n)
}

/// Fills near-zero columns of u (column-major) with vectors orthogonal to
/// the existing ones, deterministically from the standard basis.
fn complete_basis(u: &mut [f64], n: usize, deficient: &[usize]) {
    let mut filled: Vec<usize> = (0..n).filter(|s| !deficient.contains(s)).collect();
    for &slot in deficient {
        let mut chosen = None;
        for k in 0..n {
            let mut cand = vec![0.0f64; n];
            cand[k] = 1.0;
            // Two rounds of Gram-Schmidt against all filled columns.
            for _ in 0..2 {
                for &f in &filled {
                    let dot: f64 = (0..n).map(|i| cand[i] * u[f * n + i]).sum();
                    for i in 0..n {
                        cand[i] -= dot * u[f * n + i];
                    }
                }
            }
            let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.5 {
                for i in 0..n {
                    u[slot * n + i] = cand[i] / norm;
                }
                chosen = Some(());
                break;
            }
        }
        debug_assert!(chosen.is_some(), "basis completion found no candidate");
        filled.push(slot);
    }
}
