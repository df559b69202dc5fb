//! Convolution and linear kernels with hand-derived backward passes, plus
//! the small parameter-carrying layers the models are assembled from.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::numerics::rng::SeededRng;
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if k == 0 || stride == 0 || padded < k {
        return Err(Error::ShapeMismatch(format!(
            "convolution window k={k} stride={stride} does not fit extent {input} with pad {pad}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

fn check_conv_shapes<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if x.rank() != 3 || w.rank() != 4 || b.rank() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "conv2d expects x (C,H,W), w (Co,Ci,k,k), b (Co); got {:?}, {:?}, {:?}",
            x.dims(),
            w.dims(),
            b.dims()
        )));
    }
    if w.dims()[1] != x.dims()[0] || w.dims()[2] != w.dims()[3] || b.dims()[0] != w.dims()[0] {
        return Err(Error::ShapeMismatch(format!(
            "conv2d channel bookkeeping: x {:?}, w {:?}, b {:?}",
            x.dims(),
            w.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Direct 2D cross-correlation with zero padding.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    check_conv_shapes(x, w, b)?;
    let (ci, h, wd) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let (co, k) = (w.dims()[0], w.dims()[2]);
    let oh = conv_out_extent(h, k, stride, pad)?;
    let ow = conv_out_extent(wd, k, stride, pad)?;
    let mut out = Tensor::zeros(&[co, oh, ow]);
    let (xs, ws, bs) = (x.data(), w.data(), b.data());
    let os = out.data_mut();
    for oc in 0..co {
        let wbase = oc * ci * k * k;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bs[oc];
                for ic in 0..ci {
                    let xch = ic * h * wd;
                    let wch = wbase + ic * k * k;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = xch + iy as usize * wd;
                        let wrow = wch + ky * k;
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            acc = acc + xs[xrow + ix as usize] * ws[wrow + kx];
                        }
                    }
                }
                os[oc * oh * ow + oy * ow + ox] = acc;
            }
        }
    }
    Ok(out)
}

/// Gradient of the convolution output w.r.t. its input (scatter form).
pub fn conv2d_grad_input<T: Scalar>(
    g: &Tensor<T>,
    w: &Tensor<T>,
    x_dims: &[usize],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (ci, h, wd) = (x_dims[0], x_dims[1], x_dims[2]);
    let (co, k) = (w.dims()[0], w.dims()[2]);
    let (oh, ow) = (g.dims()[1], g.dims()[2]);
    let mut gx = Tensor::zeros(&[ci, h, wd]);
    let (gs, ws) = (g.data(), w.data());
    let gxs = gx.data_mut();
    for oc in 0..co {
        let wbase = oc * ci * k * k;
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = gs[oc * oh * ow + oy * ow + ox];
                if gv == T::zero() {
                    continue;
                }
                for ic in 0..ci {
                    let xch = ic * h * wd;
                    let wch = wbase + ic * k * k;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = xch + iy as usize * wd;
                        let wrow = wch + ky * k;
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let slot = xrow + ix as usize;
                            gxs[slot] = gxs[slot] + gv * ws[wrow + kx];
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// Gradient of the convolution output w.r.t. the kernel weights.
pub fn conv2d_grad_weights<T: Scalar>(
    g: &Tensor<T>,
    x: &Tensor<T>,
    w_dims: &[usize],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (ci, h, wd) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let (co, k) = (w_dims[0], w_dims[2]);
    let (oh, ow) = (g.dims()[1], g.dims()[2]);
    let mut gw = Tensor::zeros(w_dims);
    let (gs, xs) = (g.data(), x.data());
    let gws = gw.data_mut();
    for oc in 0..co {
        let wbase = oc * ci * k * k;
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = gs[oc * oh * ow + oy * ow + ox];
                if gv == T::zero() {
                    continue;
                }
                for ic in 0..ci {
                    let xch = ic * h * wd;
                    let wch = wbase + ic * k * k;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = xch + iy as usize * wd;
                        let wrow = wch + ky * k;
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            gws[wrow + kx] = gws[wrow + kx] + gv * xs[xrow + ix as usize];
                        }
                    }
                }
            }
        }
    }
    Ok(gw)
}

/// Gradient of the convolution output w.r.t. the bias: spatial sum per
/// output channel.
pub fn conv2d_grad_bias<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let (co, oh, ow) = (g.dims()[0], g.dims()[1], g.dims()[2]);
    let mut gb = Tensor::zeros(&[co]);
    for oc in 0..co {
        let mut acc = T::zero();
        for site in 0..oh * ow {
            acc = acc + g.data()[oc * oh * ow + site];
        }
        gb.data_mut()[oc] = acc;
    }
    gb
}

/// y = W x + b for rank-1 x; W is (out, in).
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 1 || w.rank() != 2 || b.rank() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "linear expects x (N), w (M,N), b (M); got {:?}, {:?}, {:?}",
            x.dims(),
            w.dims(),
            b.dims()
        )));
    }
    let (m, n) = (w.dims()[0], w.dims()[1]);
    if x.dims()[0] != n || b.dims()[0] != m {
        return Err(Error::ShapeMismatch(format!(
            "linear extents: x {:?}, w {:?}, b {:?}",
            x.dims(),
            w.dims(),
            b.dims()
        )));
    }
    let mut out = Tensor::zeros(&[m]);
    for i in 0..m {
        let mut acc = b.data()[i];
        let row = i * n;
        for j in 0..n {
            acc = acc + w.data()[row + j] * x.data()[j];
        }
        out.data_mut()[i] = acc;
    }
    Ok(out)
}

/// Elementwise max(v, 0).
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization. Biases share the
/// weight scale; nothing is zero-initialized by default, so every parameter
/// sees gradient from the first step.
pub fn fan_in_uniform<T: Scalar>(rng: &mut SeededRng, dims: &[usize], fan_in: usize) -> Tensor<T> {
    let lim = 1.0 / (fan_in.max(1) as f64).sqrt();
    rng.tensor_uniform(dims, -lim, lim)
}

/// A 2D convolution layer.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn seeded(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut SeededRng) -> Self {
        let fan_in = cin * k * k;
        Self {
            w: fan_in_uniform(rng, &[cout, cin, k, k], fan_in),
            b: fan_in_uniform(rng, &[cout], fan_in),
            stride,
            pad,
        }
    }

    /// Small-magnitude init for output layers that should start near zero
    /// without being exactly zero.
    pub fn seeded_small(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut SeededRng) -> Self {
        Self {
            w: rng.tensor_uniform(&[cout, cin, k, k], -1e-3, 1e-3),
            b: rng.tensor_uniform(&[cout], -1e-3, 1e-3),
            stride,
            pad,
        }
    }

    pub fn zeros(cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self {
            w: Tensor::zeros(&[cout, cin, k, k]),
            b: Tensor::zeros(&[cout]),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_forward(x, &self.w, &self.b, self.stride, self.pad)
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{prefix}.weight"), &self.w);
        f(&format!("{prefix}.bias"), &self.b);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.weight"), &mut self.w);
        f(&format!("{prefix}.bias"), &mut self.b);
    }
}

/// A fully connected layer; w is (out, in).
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn seeded(n_in: usize, n_out: usize, rng: &mut SeededRng) -> Self {
        Self {
            w: fan_in_uniform(rng, &[n_out, n_in], n_in),
            b: fan_in_uniform(rng, &[n_out], n_in),
        }
    }

    pub fn seeded_small(n_in: usize, n_out: usize, rng: &mut SeededRng) -> Self {
        Self {
            w: rng.tensor_uniform(&[n_out, n_in], -1e-3, 1e-3),
            b: rng.tensor_uniform(&[n_out], -1e-3, 1e-3),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        linear_forward(x, &self.w, &self.b)
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{prefix}.weight"), &self.w);
        f(&format!("{prefix}.bias"), &self.b);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.weight"), &mut self.w);
        f(&format!("{prefix}.bias"), &mut self.b);
    }
}

/// The coupling subnet shape: 3x3 conv, ReLU, 3x3 conv, both padded to
/// preserve spatial extents.
#[derive(Clone, Debug)]
pub struct SubNet<T> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
}

impl<T: Scalar> SubNet<T> {
    pub fn seeded(cin: usize, hidden: usize, cout: usize, rng: &mut SeededRng) -> Self {
        Self {
            conv1: Conv2d::seeded(cin, hidden, 3, 1, 1, rng),
            conv2: Conv2d::seeded(hidden, cout, 3, 1, 1, rng),
        }
    }

    pub fn zeros(cin: usize, hidden: usize, cout: usize) -> Self {
        Self {
            conv1: Conv2d::zeros(cin, hidden, 3, 1, 1),
            conv2: Conv2d::zeros(hidden, cout, 3, 1, 1),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.conv2.forward(&relu(&self.conv1.forward(x)?))
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.conv1.visit(&format!("{prefix}.conv1"), f);
        self.conv2.visit(&format!("{prefix}.conv2"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.conv1.visit_mut(&format!("{prefix}.conv1"), f);
        self.conv2.visit_mut(&format!("{prefix}.conv2"), f);
    }
}

/// Tape handles for a [`Conv2d`]'s parameters.
#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub w: Var,
    pub b: Var,
    pub stride: usize,
    pub pad: usize,
}

impl ConvVars {
    pub fn forward(&self, g: &mut Graph<impl Scalar>, x: Var) -> Result<Var> {
        g.conv2d(x, self.w, self.b, self.stride, self.pad)
    }
}

/// Tape handles for a [`Linear`]'s parameters.
#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

impl LinearVars {
    pub fn forward(&self, g: &mut Graph<impl Scalar>, x: Var) -> Result<Var> {
        g.linear(x, self.w, self.b)
    }
}

/// Tape handles for a [`SubNet`].
#[derive(Clone, Copy, Debug)]
pub struct SubNetVars {
    pub conv1: ConvVars,
    pub conv2: ConvVars,
}

impl SubNetVars {
    pub fn forward(&self, g: &mut Graph<impl Scalar>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, x)?;
        let h = g.relu(h);
        self.conv2.forward(g, h)
    }
}

/// Registration sink: (parameter name, tape handle) pairs, in visit order.
pub type ParamVars = Vec<(String, Var)>;

impl<T: Scalar> Conv2d<T> {
    /// Puts the layer's tensors on the tape. `reg` collects named handles
    /// for the optimizer; pass None for frozen parameters.
    pub fn register(&self, g: &mut Graph<T>, prefix: &str, reg: Option<&mut ParamVars>) -> ConvVars {
        let w = g.leaf(self.w.clone(), format!("{prefix}.weight"));
        let b = g.leaf(self.b.clone(), format!("{prefix}.bias"));
        if let Some(reg) = reg {
            reg.push((format!("{prefix}.weight"), w));
            reg.push((format!("{prefix}.bias"), b));
        }
        ConvVars { w, b, stride: self.stride, pad: self.pad }
    }
}

impl<T: Scalar> Linear<T> {
    pub fn register(&self, g: &mut Graph<T>, prefix: &str, reg: Option<&mut ParamVars>) -> LinearVars {
        let w = g.leaf(self.w.clone(), format!("{prefix}.weight"));
        let b = g.leaf(self.b.clone(), format!("{prefix}.bias"));
        if let Some(reg) = reg {
            reg.push((format!("{prefix}.weight"), w));
            reg.push((format!("{prefix}.bias"), b));
        }
        LinearVars { w, b }
    }
}

impl<T: Scalar> SubNet<T> {
    pub fn register(&self, g: &mut Graph<T>, prefix: &str, mut reg: Option<&mut ParamVars>) -> SubNetVars {
        let conv1 = self.conv1.register(g, &format!("{prefix}.conv1"), reg.as_deref_mut());
        let conv2 = self.conv2.register(g, &format!("{prefix}.conv2"), reg.as_deref_mut());
        SubNetVars { conv1, conv2 }
    }
}
