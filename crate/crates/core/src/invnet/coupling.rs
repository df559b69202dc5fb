//! Invertible coupling layer: an additive update of the LR branch followed
//! by a tanh-clamped affine update of the detail branch, with a closed-form
//! inverse.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{ParamVars, SubNet, SubNetVars};
use crate::numerics::rng::SeededRng;
use crate::numerics::tensor::{concat0, Tensor};
use crate::scalar::{from_f64, Scalar};

/// One coupling block over channels split as (n_a | n_b):
///   a' = a + phi(b)
///   b' = b * exp(alpha * tanh(rho(a'))) + eta(a')
/// The log-scale is bounded by alpha, so the scale lies in [e^-alpha, e^alpha].
#[derive(Clone, Debug)]
pub struct CouplingBlock<T> {
    pub phi: SubNet<T>,
    pub rho: SubNet<T>,
    pub eta: SubNet<T>,
    pub alpha: f64,
    pub n_a: usize,
    pub n_b: usize,
}

impl<T: Scalar> CouplingBlock<T> {
    pub fn seeded(n_a: usize, n_b: usize, hidden: usize, alpha: f64, rng: &mut SeededRng) -> Self {
        Self {
            phi: SubNet::seeded(n_b, hidden, n_a, rng),
            rho: SubNet::seeded(n_a, hidden, n_b, rng),
            eta: SubNet::seeded(n_a, hidden, n_b, rng),
            alpha,
            n_a,
            n_b,
        }
    }

    /// All-zero subnets: the block is exactly the identity map.
    pub fn zeros(n_a: usize, n_b: usize, hidden: usize, alpha: f64) -> Self {
        Self {
            phi: SubNet::zeros(n_b, hidden, n_a),
            rho: SubNet::zeros(n_a, hidden, n_b),
            eta: SubNet::zeros(n_a, hidden, n_b),
            alpha,
            n_a,
            n_b,
        }
    }

    pub fn channels(&self) -> usize {
        self.n_a + self.n_b
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_channels(x)?;
        let a = x.narrow0(0, self.n_a)?;
        let b = x.narrow0(self.n_a, self.n_b)?;
        let a2 = a.add(&self.phi.forward(&b)?)?;
        let log_scale = self.log_scale(&a2)?;
        let b2 = b.mul(&log_scale.map(|v| v.exp()))?.add(&self.eta.forward(&a2)?)?;
        concat0(&[&a2, &b2])
    }

    pub fn inverse(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_channels(y)?;
        let a2 = y.narrow0(0, self.n_a)?;
        let b2 = y.narrow0(self.n_a, self.n_b)?;
        let log_scale = self.log_scale(&a2)?;
        let b = b2.sub(&self.eta.forward(&a2)?)?.mul(&log_scale.map(|v| (-v).exp()))?;
        let a = a2.sub(&self.phi.forward(&b)?)?;
        concat0(&[&a, &b])
    }

    fn log_scale(&self, a2: &Tensor<T>) -> Result<Tensor<T>> {
        let alpha = from_f64::<T>(self.alpha);
        Ok(self.rho.forward(a2)?.map(|v| alpha * v.tanh()))
    }

    fn check_channels(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() != 3 || x.dims()[0] != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "coupling block expects ({}, h, w), got {:?}",
                self.channels(),
                x.dims()
            )));
        }
        Ok(())
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.phi.visit(&format!("{prefix}.phi"), f);
        self.rho.visit(&format!("{prefix}.rho"), f);
        self.eta.visit(&format!("{prefix}.eta"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.phi.visit_mut(&format!("{prefix}.phi"), f);
        self.rho.visit_mut(&format!("{prefix}.rho"), f);
        self.eta.visit_mut(&format!("{prefix}.eta"), f);
    }

    pub fn register(&self, g: &mut Graph<T>, prefix: &str, mut reg: Option<&mut ParamVars>) -> CouplingVars {
        CouplingVars {
            phi: self.phi.register(g, &format!("{prefix}.phi"), reg.as_deref_mut()),
            rho: self.rho.register(g, &format!("{prefix}.rho"), reg.as_deref_mut()),
            eta: self.eta.register(g, &format!("{prefix}.eta"), reg.as_deref_mut()),
            alpha: self.alpha,
            n_a: self.n_a,
            n_b: self.n_b,
        }
    }
}

/// Tape handles for a coupling block.
#[derive(Clone, Copy, Debug)]
pub struct CouplingVars {
    pub phi: SubNetVars,
    pub rho: SubNetVars,
    pub eta: SubNetVars,
    pub alpha: f64,
    pub n_a: usize,
    pub n_b: usize,
}

impl CouplingVars {
    fn scale_from<T: Scalar>(&self, g: &mut Graph<T>, a2: Var, sign: f64) -> Result<Var> {
        let r = self.rho.forward(g, a2)?;
        let t = g.tanh(r);
        let clamped = g.scale(t, sign * self.alpha);
        Ok(g.exp(clamped))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let a = g.narrow0(x, 0, self.n_a)?;
        let b = g.narrow0(x, self.n_a, self.n_b)?;
        let shift_a = self.phi.forward(g, b)?;
        let a2 = g.add(a, shift_a)?;
        let scale = self.scale_from(g, a2, 1.0)?;
        let scaled = g.mul(b, scale)?;
        let shift_b = self.eta.forward(g, a2)?;
        let b2 = g.add(scaled, shift_b)?;
        g.concat0(&[a2, b2])
    }

    pub fn inverse<T: Scalar>(&self, g: &mut Graph<T>, y: Var) -> Result<Var> {
        let a2 = g.narrow0(y, 0, self.n_a)?;
        let b2 = g.narrow0(y, self.n_a, self.n_b)?;
        let shift_b = self.eta.forward(g, a2)?;
        let unshifted = g.sub(b2, shift_b)?;
        let inv_scale = self.scale_from(g, a2, -1.0)?;
        let b = g.mul(unshifted, inv_scale)?;
        let shift_a = self.phi.forward(g, b)?;
        let a = g.sub(a2, shift_a)?;
        g.concat0(&[a, b])
    }
}
