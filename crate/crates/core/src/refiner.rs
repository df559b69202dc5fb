//! One-step denoising refiner: cumulative noise-schedule algebra, the pixel
//! semantic embedder that conditions it, and pluggable stand-ins for the
//! pretrained noise predictor and semantic teacher.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{linear_forward, relu, Conv2d, ConvVars, Linear, LinearVars, ParamVars};
use crate::numerics::rng::SeededRng;
use crate::numerics::tensor::{concat0, matmul, Tensor};
use crate::scalar::{from_f64, Scalar};

/// Default number of diffusion steps; the refiner always operates at the
/// final one.
pub const T_MAX_DEFAULT: usize = 1000;
/// Default linear noise-rate endpoints.
pub const BETA_START_DEFAULT: f64 = 1e-4;
pub const BETA_END_DEFAULT: f64 = 0.02;
/// Default semantic embedding width.
pub const EMBED_DIM_DEFAULT: usize = 64;

/// Precomputed cumulative noise coefficients for a linear rate schedule.
/// The table is immutable after construction and kept in f64 regardless of
/// the pipeline scalar.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    t_max: usize,
    beta_start: f64,
    beta_end: f64,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rate endpoints must satisfy 0 < start <= end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(t_max);
        let mut prod = 1.0f64;
        for i in 1..=t_max {
            let frac = if t_max == 1 { 0.0 } else { (i - 1) as f64 / (t_max - 1) as f64 };
            let beta = beta_start + (beta_end - beta_start) * frac;
            prod *= 1.0 - beta;
            alpha_bar.push(prod);
        }
        Ok(Self { t_max, beta_start, beta_end, alpha_bar })
    }

    pub fn default_schedule() -> Self {
        Self::new(T_MAX_DEFAULT, BETA_START_DEFAULT, BETA_END_DEFAULT).expect("defaults are valid")
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    /// Cumulative product of (1 - rate) through step t, 1-based.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.t_max {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} outside 1..={}",
                self.t_max
            )));
        }
        Ok(self.alpha_bar[t - 1])
    }

    /// (1/sqrt(abar_t), sqrt(1 - abar_t)): the two constants of the clean-
    /// latent recovery. Both the pure and taped paths use exactly these so
    /// their arithmetic agrees.
    pub fn denoise_coeffs(&self, t: usize) -> Result<(f64, f64)> {
        let ab = self.alpha_bar(t)?;
        Ok((1.0 / ab.sqrt(), (1.0 - ab).sqrt()))
    }
}

/// Recover the clean latent from a noised one and a noise estimate:
/// (f_t - sqrt(1 - abar_t) * eps) / sqrt(abar_t).
pub fn one_step_denoise<T: Scalar>(
    f_t: &Tensor<T>,
    eps: &Tensor<T>,
    sched: &NoiseSchedule,
    t: usize,
) -> Result<Tensor<T>> {
    if f_t.dims() != eps.dims() {
        return Err(Error::ShapeMismatch(format!(
            "latent {:?} vs noise estimate {:?}",
            f_t.dims(),
            eps.dims()
        )));
    }
    let (inv, c1) = sched.denoise_coeffs(t)?;
    let inv = from_f64::<T>(inv);
    let c1 = from_f64::<T>(c1);
    f_t.zip_map(eps, |f, e| (f - c1 * e) * inv)
}

/// Taped twin of [`one_step_denoise`], same coefficient values and operation
/// order.
pub fn denoise_on_tape<T: Scalar>(
    g: &mut Graph<T>,
    f_t: Var,
    eps: Var,
    sched: &NoiseSchedule,
    t: usize,
) -> Result<Var> {
    let (inv, c1) = sched.denoise_coeffs(t)?;
    let scaled = g.scale(eps, c1);
    let num = g.sub(f_t, scaled)?;
    Ok(g.scale(num, inv))
}

/// Per-channel spatial mean, accumulated in f64 so the result depends only
/// on the multiset of values, not their layout.
fn pool_spatial<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(Error::ShapeMismatch(format!("pool expects (C,H,W), got {:?}", x.dims())));
    }
    let (c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let area = (h * w) as f64;
    let mut out = Tensor::zeros(&[c]);
    for ci in 0..c {
        let mut acc = 0.0f64;
        for site in 0..h * w {
            acc += crate::scalar::to_f64(x.data()[ci * h * w + site]);
        }
        out.data_mut()[ci] = from_f64(acc / area);
    }
    Ok(out)
}

/// Maps an LR image to a semantic conditioning vector: per-pixel projection,
/// global average pool, then three fully connected layers with ReLU between.
/// Resolution-independent by construction.
#[derive(Clone, Debug)]
pub struct PixelSemanticEmbedder<T> {
    pub proj: Conv2d<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub fc3: Linear<T>,
}

impl<T: Scalar> PixelSemanticEmbedder<T> {
    pub fn seeded(d_hidden: usize, d_out: usize, rng: &mut SeededRng) -> Self {
        Self {
            proj: Conv2d::seeded(3, d_hidden, 1, 1, 0, &mut rng.split("proj")),
            fc1: Linear::seeded(d_hidden, d_hidden, &mut rng.split("fc1")),
            fc2: Linear::seeded(d_hidden, d_hidden, &mut rng.split("fc2")),
            fc3: Linear::seeded(d_hidden, d_out, &mut rng.split("fc3")),
        }
    }

    /// Embedding width.
    pub fn dim(&self) -> usize {
        self.fc3.w.dims()[0]
    }

    pub fn forward(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.proj.forward(lr)?;
        let pooled = pool_spatial(&y)?;
        let h1 = relu(&self.fc1.forward(&pooled)?);
        let h2 = relu(&self.fc2.forward(&h1)?);
        self.fc3.forward(&h2)
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.proj.visit(&format!("{prefix}.proj"), f);
        self.fc1.visit(&format!("{prefix}.fc1"), f);
        self.fc2.visit(&format!("{prefix}.fc2"), f);
        self.fc3.visit(&format!("{prefix}.fc3"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.proj.visit_mut(&format!("{prefix}.proj"), f);
        self.fc1.visit_mut(&format!("{prefix}.fc1"), f);
        self.fc2.visit_mut(&format!("{prefix}.fc2"), f);
        self.fc3.visit_mut(&format!("{prefix}.fc3"), f);
    }

    pub fn register(&self, g: &mut Graph<T>, prefix: &str, mut reg: Option<&mut ParamVars>) -> PseVars {
        PseVars {
            proj: self.proj.register(g, &format!("{prefix}.proj"), reg.as_deref_mut()),
            fc1: self.fc1.register(g, &format!("{prefix}.fc1"), reg.as_deref_mut()),
            fc2: self.fc2.register(g, &format!("{prefix}.fc2"), reg.as_deref_mut()),
            fc3: self.fc3.register(g, &format!("{prefix}.fc3"), reg),
        }
    }
}

/// Tape handles for the embedder.
#[derive(Clone, Debug)]
pub struct PseVars {
    pub proj: ConvVars,
    pub fc1: LinearVars,
    pub fc2: LinearVars,
    pub fc3: LinearVars,
}

impl PseVars {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, lr: Var) -> Result<Var> {
        let y = self.proj.forward(g, lr)?;
        let pooled = g.global_avg_pool(y)?;
        let h1 = self.fc1.forward(g, pooled)?;
        let h1 = g.relu(h1);
        let h2 = self.fc2.forward(g, h1)?;
        let h2 = g.relu(h2);
        self.fc3.forward(g, h2)
    }
}

/// Source of reference embeddings for the semantic-alignment loss. The
/// default stand-in is frozen and seeded; a real pretrained encoder can be
/// plugged in behind the same interface.
pub trait SemanticTeacher<T: Scalar> {
    fn embed(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
    fn dim(&self) -> usize;
}

const TEACHER_H1: usize = 8;
const TEACHER_H2: usize = 16;

/// Frozen seeded feature extractor: two strided convolutions, global pool,
/// and a fixed random projection to the embedding width. Never trains.
#[derive(Clone, Debug)]
pub struct FrozenRandomTeacher<T> {
    conv1: Conv2d<T>,
    conv2: Conv2d<T>,
    proj: Tensor<T>,
}

impl<T: Scalar> FrozenRandomTeacher<T> {
    pub fn seeded(d_out: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (TEACHER_H2 as f64).sqrt();
        Self {
            conv1: Conv2d::seeded(3, TEACHER_H1, 3, 2, 1, &mut rng.split("conv1")),
            conv2: Conv2d::seeded(TEACHER_H1, TEACHER_H2, 3, 2, 1, &mut rng.split("conv2")),
            proj: rng.split("proj").tensor_uniform(&[d_out, TEACHER_H2], -bound, bound),
        }
    }
}

impl<T: Scalar> SemanticTeacher<T> for FrozenRandomTeacher<T> {
    fn embed(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h1 = relu(&self.conv1.forward(x)?);
        let h2 = relu(&self.conv2.forward(&h1)?);
        let pooled = pool_spatial(&h2)?;
        let col = pooled.reshape(&[TEACHER_H2, 1])?;
        matmul(&self.proj, &col)?.reshape(&[self.proj.dims()[0]])
    }

    fn dim(&self) -> usize {
        self.proj.dims()[0]
    }
}

/// Estimates the noise content of a maximally noised latent, conditioned on
/// a semantic vector. Implementations must return the latent's shape.
pub trait EpsilonPredictor<T: Scalar> {
    fn predict(&self, f_t: &Tensor<T>, c_s: &Tensor<T>, t: usize) -> Result<Tensor<T>>;
}

/// The estimate that makes the one-step recovery the identity map:
/// eps = (1 - sqrt(abar_t)) / sqrt(1 - abar_t) * f_t.
fn identity_gain(sched: &NoiseSchedule, t: usize) -> Result<f64> {
    let ab = sched.alpha_bar(t)?;
    Ok((1.0 - ab.sqrt()) / (1.0 - ab).sqrt())
}

/// Trainable conditioned noise estimator: a three-convolution net whose
/// per-channel scale and bias come from the conditioning vector through
/// small linear maps. Parametrized as a correction around the identity
/// estimate so the recovered latent is exactly f_t - net(f_t, ctx); zero
/// output weights mean the refiner passes its input through.
#[derive(Clone, Debug)]
pub struct ConditionedResidualNet<T> {
    pub conv_in: Conv2d<T>,
    pub film1: Linear<T>,
    pub conv_mid: Conv2d<T>,
    pub film2: Linear<T>,
    pub conv_out: Conv2d<T>,
    pub sched: NoiseSchedule,
    hidden: usize,
}

impl<T: Scalar> ConditionedResidualNet<T> {
    /// `channels` is the latent channel count, `cond_dim` the conditioning
    /// width; the normalized timestep is appended to the conditioning.
    pub fn seeded(
        channels: usize,
        hidden: usize,
        cond_dim: usize,
        sched: NoiseSchedule,
        rng: &mut SeededRng,
    ) -> Self {
        let ctx = cond_dim + 1;
        Self {
            conv_in: Conv2d::seeded(channels, hidden, 3, 1, 1, &mut rng.split("conv_in")),
            film1: Linear::seeded_small(ctx, 2 * hidden, &mut rng.split("film1")),
            conv_mid: Conv2d::seeded(hidden, hidden, 3, 1, 1, &mut rng.split("conv_mid")),
            film2: Linear::seeded_small(ctx, 2 * hidden, &mut rng.split("film2")),
            conv_out: Conv2d::seeded_small(hidden, channels, 3, 1, 1, &mut rng.split("conv_out")),
            sched,
            hidden,
        }
    }

    pub fn cond_dim(&self) -> usize {
        self.film1.w.dims()[1] - 1
    }

    fn context(&self, c_s: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        if c_s.rank() != 1 || c_s.dims()[0] != self.cond_dim() {
            return Err(Error::ShapeMismatch(format!(
                "conditioning vector {:?}, expected ({})",
                c_s.dims(),
                self.cond_dim()
            )));
        }
        let t_norm = Tensor::new(&[1], vec![from_f64::<T>(t as f64 / self.sched.t_max() as f64)])?;
        concat0(&[c_s, &t_norm])
    }

    fn apply_film(x: &Tensor<T>, sb: &Tensor<T>, hidden: usize) -> Result<Tensor<T>> {
        let s = sb.narrow0(0, hidden)?;
        let b = sb.narrow0(hidden, hidden)?;
        let (h, w) = (x.dims()[1], x.dims()[2]);
        let mut out = x.clone();
        for c in 0..hidden {
            let gain = T::one() + s.data()[c];
            let shift = b.data()[c];
            for v in &mut out.data_mut()[c * h * w..(c + 1) * h * w] {
                *v = *v * gain + shift;
            }
        }
        Ok(out)
    }

    /// The raw correction net, before the identity-centered reparametrization.
    fn residual(&self, f_t: &Tensor<T>, ctx: &Tensor<T>) -> Result<Tensor<T>> {
        let sb1 = linear_forward(ctx, &self.film1.w, &self.film1.b)?;
        let sb2 = linear_forward(ctx, &self.film2.w, &self.film2.b)?;
        let h1 = relu(&Self::apply_film(&self.conv_in.forward(f_t)?, &sb1, self.hidden)?);
        let h2 = relu(&Self::apply_film(&self.conv_mid.forward(&h1)?, &sb2, self.hidden)?);
        self.conv_out.forward(&h2)
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.conv_in.visit(&format!("{prefix}.conv_in"), f);
        self.film1.visit(&format!("{prefix}.film1"), f);
        self.conv_mid.visit(&format!("{prefix}.conv_mid"), f);
        self.film2.visit(&format!("{prefix}.film2"), f);
        self.conv_out.visit(&format!("{prefix}.conv_out"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.conv_in.visit_mut(&format!("{prefix}.conv_in"), f);
        self.film1.visit_mut(&format!("{prefix}.film1"), f);
        self.conv_mid.visit_mut(&format!("{prefix}.conv_mid"), f);
        self.film2.visit_mut(&format!("{prefix}.film2"), f);
        self.conv_out.visit_mut(&format!("{prefix}.conv_out"), f);
    }
}

impl<T: Scalar> EpsilonPredictor<T> for ConditionedResidualNet<T> {
    /// identity-centered estimate: gain * f_t + (sqrt(abar)/sqrt(1-abar)) * net,
    /// chosen so the one-step recovery equals f_t - net(f_t, ctx) exactly.
    fn predict(&self, f_t: &Tensor<T>, c_s: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        let ab = self.sched.alpha_bar(t)?;
        let gain = from_f64::<T>(identity_gain(&self.sched, t)?);
        let res_gain = from_f64::<T>(ab.sqrt() / (1.0 - ab).sqrt());
        let ctx = self.context(c_s, t)?;
        let res = self.residual(f_t, &ctx)?;
        f_t.zip_map(&res, |f, r| gain * f + res_gain * r)
    }
}

/// Available noise estimators. `Identity` turns the refiner into a pass-
/// through; `Net` is the trainable default.
#[derive(Clone, Debug)]
pub enum Predictor<T> {
    Identity(NoiseSchedule),
    Net(ConditionedResidualNet<T>),
}

impl<T: Scalar> Predictor<T> {
    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        if let Predictor::Net(net) = self {
            net.visit(prefix, f);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        if let Predictor::Net(net) = self {
            net.visit_mut(prefix, f);
        }
    }

    pub fn register(&self, g: &mut Graph<T>, prefix: &str, mut reg: Option<&mut ParamVars>) -> PredictorVars {
        match self {
            Predictor::Identity(sched) => PredictorVars::Identity { sched: sched.clone() },
            Predictor::Net(net) => PredictorVars::Net {
                conv_in: net.conv_in.register(g, &format!("{prefix}.conv_in"), reg.as_deref_mut()),
                film1: net.film1.register(g, &format!("{prefix}.film1"), reg.as_deref_mut()),
                conv_mid: net.conv_mid.register(g, &format!("{prefix}.conv_mid"), reg.as_deref_mut()),
                film2: net.film2.register(g, &format!("{prefix}.film2"), reg.as_deref_mut()),
                conv_out: net.conv_out.register(g, &format!("{prefix}.conv_out"), reg),
                sched: net.sched.clone(),
                hidden: net.hidden,
            },
        }
    }
}

impl<T: Scalar> EpsilonPredictor<T> for Predictor<T> {
    fn predict(&self, f_t: &Tensor<T>, c_s: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        match self {
            Predictor::Identity(sched) => {
                let gain = from_f64::<T>(identity_gain(sched, t)?);
                Ok(f_t.map(|v| gain * v))
            }
            Predictor::Net(net) => net.predict(f_t, c_s, t),
        }
    }
}

/// Tape handles for the noise estimator.
#[derive(Clone, Debug)]
pub enum PredictorVars {
    Identity {
        sched: NoiseSchedule,
    },
    Net {
        conv_in: ConvVars,
        film1: LinearVars,
        conv_mid: ConvVars,
        film2: LinearVars,
        conv_out: ConvVars,
        sched: NoiseSchedule,
        hidden: usize,
    },
}

impl PredictorVars {
    fn sched(&self) -> &NoiseSchedule {
        match self {
            PredictorVars::Identity { sched } => sched,
            PredictorVars::Net { sched, .. } => sched,
        }
    }

    pub fn predict<T: Scalar>(&self, g: &mut Graph<T>, f_t: Var, c_s: Var, t: usize) -> Result<Var> {
        match self {
            PredictorVars::Identity { sched } => {
                let gain = identity_gain(sched, t)?;
                Ok(g.scale(f_t, gain))
            }
            PredictorVars::Net { conv_in, film1, conv_mid, film2, conv_out, sched, hidden } => {
                let ab = sched.alpha_bar(t)?;
                let t_norm = Tensor::new(
                    &[1],
                    vec![from_f64::<T>(t as f64 / sched.t_max() as f64)],
                )?;
                let t_leaf = g.leaf(t_norm, "t_norm");
                let ctx = g.concat0(&[c_s, t_leaf])?;
                let sb1 = film1.forward(g, ctx)?;
                let sb2 = film2.forward(g, ctx)?;
                let s1 = g.narrow0(sb1, 0, *hidden)?;
                let b1 = g.narrow0(sb1, *hidden, *hidden)?;
                let s2 = g.narrow0(sb2, 0, *hidden)?;
                let b2 = g.narrow0(sb2, *hidden, *hidden)?;
                let h1 = conv_in.forward(g, f_t)?;
                let h1 = g.film(h1, s1, b1)?;
                let h1 = g.relu(h1);
                let h2 = conv_mid.forward(g, h1)?;
                let h2 = g.film(h2, s2, b2)?;
                let h2 = g.relu(h2);
                let res = conv_out.forward(g, h2)?;
                let skip = g.scale(f_t, identity_gain(sched, t)?);
                let res = g.scale(res, ab.sqrt() / (1.0 - ab).sqrt());
                g.add(skip, res)
            }
        }
    }

    /// Taped refinement at the final timestep.
    pub fn refine<T: Scalar>(&self, g: &mut Graph<T>, f_t: Var, c_s: Var) -> Result<Var> {
        let sched = self.sched().clone();
        let t = sched.t_max();
        let eps = self.predict(g, f_t, c_s, t)?;
        denoise_on_tape(g, f_t, eps, &sched, t)
    }
}

/// Refinement at the final timestep: estimate the noise, then apply the
/// one-step recovery.
pub fn refine<T: Scalar>(
    f_t: &Tensor<T>,
    c_s: &Tensor<T>,
    pred: &dyn EpsilonPredictor<T>,
    sched: &NoiseSchedule,
) -> Result<Tensor<T>> {
    let t = sched.t_max();
    let eps = pred.predict(f_t, c_s, t)?;
    one_step_denoise(f_t, &eps, sched, t)
}
