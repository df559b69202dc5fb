//! Central-difference gradient probes for verifying analytic gradients.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::{from_f64, to_f64, Scalar};

/// Default probe step. Chosen for f32-friendly magnitudes; callers running
/// f64 checks may pass a smaller h.
pub const DEFAULT_H: f64 = 1e-3;

/// Numerically differentiates `f` at `x` with central differences,
/// accumulating in f64. `f` must be deterministic.
pub fn finite_diff_grad<T, F>(f: F, x: &Tensor<T>, h: f64) -> Result<Tensor<T>>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Result<T>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let mut grad = Tensor::zeros(x.dims());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + from_f64::<T>(h);
        let up = to_f64(f(&probe)?);
        probe.data_mut()[i] = orig - from_f64::<T>(h);
        let down = to_f64(f(&probe)?);
        probe.data_mut()[i] = orig;
        let d = (up - down) / (2.0 * h);
        if !d.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite difference at flat index {i} is not finite"
            )));
        }
        grad.data_mut()[i] = from_f64(d);
    }
    Ok(grad)
}

/// Worst relative disagreement between analytic and numeric gradients,
/// with the usual guarded denominator.
pub fn max_rel_error<T: Scalar>(analytic: &Tensor<T>, numeric: &Tensor<T>) -> Result<f64> {
    if analytic.dims() != numeric.dims() {
        return Err(Error::ShapeMismatch(format!(
            "gradient shapes differ: {:?} vs {:?}",
            analytic.dims(),
            numeric.dims()
        )));
    }
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let (a, n) = (to_f64(a), to_f64(n));
        let denom = a.abs().max(n.abs()).max(1e-6);
        worst = worst.max((a - n).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_matches_2x() {
        let x = Tensor::<f64>::new(&[2], vec![1.0, 2.0]).unwrap();
        let f = |t: &Tensor<f64>| Ok(t.data().iter().map(|v| v * v).sum());
        let g = finite_diff_grad(f, &x, 1e-5).unwrap();
        let expect = Tensor::new(&[2], vec![2.0, 4.0]).unwrap();
        assert!(max_rel_error(&expect, &g).unwrap() < 1e-7);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::<f32>::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|_| Ok(7.0f32), &x, DEFAULT_H).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn sine_gradient_is_cosine() {
        let x = Tensor::<f64>::new(&[2], vec![0.0, std::f64::consts::FRAC_PI_2]).unwrap();
        let f = |t: &Tensor<f64>| Ok(t.data().iter().map(|v| v.sin()).sum());
        let g = finite_diff_grad(f, &x, 1e-5).unwrap();
        assert!((g.data()[0] - 1.0).abs() < 1e-8);
        assert!(g.data()[1].abs() < 1e-8);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let x = Tensor::<f32>::zeros(&[1]);
        assert!(finite_diff_grad(|_| Ok(0.0f32), &x, 0.0).is_err());
    }

    #[test]
    fn rel_error_uses_guarded_denominator() {
        // Both tiny: difference 1e-9 against floor 1e-6 gives 1e-3.
        let a = Tensor::<f64>::new(&[1], vec![1e-9]).unwrap();
        let n = Tensor::<f64>::new(&[1], vec![2e-9]).unwrap();
        let e = max_rel_error(&a, &n).unwrap();
        assert!((e - 1e-3).abs() < 1e-9);
    }
}
