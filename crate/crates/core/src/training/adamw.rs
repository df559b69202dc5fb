//! Adaptive-moment optimizer with decoupled weight decay and a halving
//! learning-rate schedule. Updates are plain f64-coefficient arithmetic on
//! the parameter tensors, so runs are bitwise reproducible.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::{from_f64, to_f64, Scalar};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Decoupled weight decay applied unless a run overrides it.
pub const WEIGHT_DECAY_DEFAULT: f64 = 0.01;

/// AdamW with per-parameter moment accumulators keyed by parameter name.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    lr0: f64,
    weight_decay: f64,
    halve_every: usize,
    step: usize,
    moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(lr0: f64, weight_decay: f64, halve_every: usize) -> Result<Self> {
        if !(lr0 > 0.0 && lr0.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr0}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay must be nonnegative, got {weight_decay}")));
        }
        if halve_every == 0 {
            return Err(Error::Config("halving interval must be at least 1".into()));
        }
        Ok(Self { lr0, weight_decay, halve_every, step: 0, moments: BTreeMap::new() })
    }

    /// Steps taken so far.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Restores the step counter, e.g. when resuming from a checkpoint.
    pub fn set_step(&mut self, step: usize) {
        self.step = step;
    }

    /// Advances the step counter and returns the new 1-based step index.
    pub fn begin_step(&mut self) -> usize {
        self.step += 1;
        self.step
    }

    /// Learning rate at 1-based step t: halved once per completed interval.
    pub fn lr_at(&self, t: usize) -> f64 {
        self.lr0 * 0.5f64.powi(((t - 1) / self.halve_every) as i32)
    }

    /// One AdamW update of a single parameter. The same t must be used for
    /// every parameter within one optimizer step.
    pub fn update(&mut self, name: &str, t: usize, param: &mut Tensor<T>, grad: &Tensor<T>) -> Result<()> {
        if t == 0 {
            return Err(Error::InvalidArgument("optimizer step index is 1-based".into()));
        }
        if grad.dims() != param.dims() {
            return Err(Error::ShapeMismatch(format!(
                "gradient shape {:?} does not match parameter {name} {:?}",
                grad.dims(),
                param.dims()
            )));
        }
        grad.check_finite(&format!("gradient of {name}"))?;
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (Tensor::zeros(param.dims()), Tensor::zeros(param.dims())));
        if m.dims() != param.dims() {
            return Err(Error::ShapeMismatch(format!(
                "stored moments for {name} have shape {:?}, parameter has {:?}",
                m.dims(),
                param.dims()
            )));
        }
        let lr = self.lr0 * 0.5f64.powi(((t - 1) / self.halve_every) as i32);
        let bc1 = 1.0 - BETA1.powi(t as i32);
        let bc2 = 1.0 - BETA2.powi(t as i32);
        let decay = from_f64::<T>(1.0 - lr * self.weight_decay);
        for i in 0..param.len() {
            let g = to_f64(grad.data()[i]);
            let mi = BETA1 * to_f64(m.data()[i]) + (1.0 - BETA1) * g;
            let vi = BETA2 * to_f64(v.data()[i]) + (1.0 - BETA2) * g * g;
            m.data_mut()[i] = from_f64(mi);
            v.data_mut()[i] = from_f64(vi);
            let step = lr * (mi / bc1) / ((vi / bc2).sqrt() + EPS);
            let p = param.data_mut();
            p[i] = p[i] * decay - from_f64::<T>(step);
        }
        Ok(())
    }

    /// Names with stored moments, in sorted order.
    pub fn moment_names(&self) -> Vec<String> {
        self.moments.keys().cloned().collect()
    }

    pub fn moment(&self, name: &str) -> Option<&(Tensor<T>, Tensor<T>)> {
        self.moments.get(name)
    }

    /// Restores one moment pair, e.g. when resuming from a checkpoint.
    pub fn set_moment(&mut self, name: String, m: Tensor<T>, v: Tensor<T>) -> Result<()> {
        if m.dims() != v.dims() {
            return Err(Error::ShapeMismatch(format!(
                "moment shapes for {name} differ: {:?} vs {:?}",
                m.dims(),
                v.dims()
            )));
        }
        self.moments.insert(name, (m, v));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_zero_decay_leaves_parameters_unchanged() {
        let mut opt = AdamW::<f64>::new(1e-2, 0.0, 100).unwrap();
        let mut p = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.data().to_vec();
        let g = Tensor::zeros(&[3]);
        let t = opt.begin_step();
        opt.update("p", t, &mut p, &g).unwrap();
        assert_eq!(p.data(), &before[..]);
    }

    #[test]
    fn first_step_matches_closed_form() {
        let lr = 1e-3;
        let mut opt = AdamW::<f64>::new(lr, 0.0, 100).unwrap();
        let mut p = Tensor::new(&[4], vec![0.3, -0.7, 2.0, 0.0]).unwrap();
        let g = Tensor::new(&[4], vec![0.5, -1.5, 1e-12, 2.0]).unwrap();
        let before = p.data().to_vec();
        let t = opt.begin_step();
        opt.update("p", t, &mut p, &g).unwrap();
        for i in 0..4 {
            let gi: f64 = g.data()[i];
            let expect = before[i] - lr * gi / (gi.abs() + EPS);
            assert!((p.data()[i] - expect).abs() < 1e-12, "index {i}");
        }
    }

    #[test]
    fn decoupled_decay_shrinks_parameters_multiplicatively() {
        let lr = 1e-2;
        let wd = 0.1;
        let mut opt = AdamW::<f64>::new(lr, wd, 100).unwrap();
        let mut p = Tensor::new(&[2], vec![4.0, -8.0]).unwrap();
        let g = Tensor::zeros(&[2]);
        let t = opt.begin_step();
        opt.update("p", t, &mut p, &g).unwrap();
        assert!((p.data()[0] - 4.0 * (1.0 - lr * wd)).abs() < 1e-14);
        assert!((p.data()[1] + 8.0 * (1.0 - lr * wd)).abs() < 1e-14);
    }

    #[test]
    fn moments_decay_when_gradients_stop() {
        let mut opt = AdamW::<f64>::new(1e-3, 0.0, 100).unwrap();
        let mut p = Tensor::new(&[1], vec![1.0]).unwrap();
        let g = Tensor::new(&[1], vec![2.0]).unwrap();
        let t = opt.begin_step();
        opt.update("p", t, &mut p, &g).unwrap();
        let (m0, v0) = opt.moment("p").unwrap();
        let (m0, v0) = (m0.data()[0], v0.data()[0]);
        let zero = Tensor::zeros(&[1]);
        for _ in 0..5 {
            let t = opt.begin_step();
            opt.update("p", t, &mut p, &zero).unwrap();
        }
        let (m5, v5) = opt.moment("p").unwrap();
        assert!((m5.data()[0] - m0 * BETA1.powi(5)).abs() < 1e-14);
        assert!((v5.data()[0] - v0 * BETA2.powi(5)).abs() < 1e-14);
    }

    #[test]
    fn learning_rate_halves_on_the_interval_boundary() {
        let opt = AdamW::<f32>::new(1e-4, 0.01, 10).unwrap();
        assert_eq!(opt.lr_at(1), 1e-4);
        assert_eq!(opt.lr_at(10), 1e-4);
        assert_eq!(opt.lr_at(11), 5e-5);
        assert_eq!(opt.lr_at(20), 5e-5);
        assert_eq!(opt.lr_at(21), 2.5e-5);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(AdamW::<f32>::new(0.0, 0.01, 10).is_err());
        assert!(AdamW::<f32>::new(1e-4, -0.1, 10).is_err());
        assert!(AdamW::<f32>::new(1e-4, 0.01, 0).is_err());
        let mut opt = AdamW::<f32>::new(1e-4, 0.01, 10).unwrap();
        let mut p = Tensor::zeros(&[2]);
        assert!(opt.update("p", 1, &mut p, &Tensor::zeros(&[3])).is_err());
        let nan = Tensor::new(&[2], vec![f32::NAN, 0.0]).unwrap();
        assert!(opt.update("p", 1, &mut p, &nan).is_err());
        assert!(opt.update("p", 0, &mut p, &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn moment_bookkeeping_round_trips() {
        let mut opt = AdamW::<f32>::new(1e-4, 0.01, 10).unwrap();
        let m = Tensor::new(&[2], vec![0.1, 0.2]).unwrap();
        let v = Tensor::new(&[2], vec![0.3, 0.4]).unwrap();
        opt.set_moment("a".into(), m.clone(), v.clone()).unwrap();
        assert_eq!(opt.moment_names(), vec!["a".to_string()]);
        let (m2, v2) = opt.moment("a").unwrap();
        assert_eq!(m2.data(), m.data());
        assert_eq!(v2.data(), v.data());
        assert!(opt.set_moment("b".into(), Tensor::zeros(&[1]), Tensor::zeros(&[2])).is_err());
        assert_eq!(opt.step(), 0);
        opt.set_step(7);
        assert_eq!(opt.begin_step(), 8);
    }
}
