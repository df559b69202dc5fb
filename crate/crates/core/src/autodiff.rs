//! Minimal reverse-mode tape covering exactly the operations the rescaler
//! pipeline needs. Nodes are appended in topological order, so the backward
//! sweep is a single reverse pass over the tape.

use crate::error::{Error, Result};
use crate::nn;
use crate::numerics::tensor::{self, Tensor};
use crate::scalar::{from_f64, Scalar};
use crate::transforms;

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Backward rule: (upstream gradient, all tape values) -> contributions to
/// earlier nodes as (node index, gradient) pairs.
type BackpropFn<T> = Box<dyn Fn(&Tensor<T>, &[Tensor<T>]) -> Result<Vec<(usize, Tensor<T>)>>>;

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }
}

pub struct Graph<T: Scalar> {
    values: Vec<Tensor<T>>,
    backprops: Vec<Option<BackpropFn<T>>>,
    labels: Vec<String>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { values: Vec::new(), backprops: Vec::new(), labels: Vec::new() }
    }

    /// Inserts a node with no backward rule: parameters, inputs, constants.
    /// Gradients still accumulate into leaves.
    pub fn leaf(&mut self, t: Tensor<T>, label: impl Into<String>) -> Var {
        self.push(t, label.into(), None)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Label and index of the first node holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<(usize, &str)> {
        self.values
            .iter()
            .position(|t| !t.is_finite())
            .map(|i| (i, self.labels[i].as_str()))
    }

    fn push(&mut self, value: Tensor<T>, label: String, back: Option<BackpropFn<T>>) -> Var {
        self.values.push(value);
        self.backprops.push(back);
        self.labels.push(label);
        Var(self.values.len() - 1)
    }

    /// Reverse sweep from a scalar root. Node order doubles as topological
    /// order, so one pass from the root down suffices.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.values[root.0].len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward root must be scalar, got shape {:?}",
                self.values[root.0].dims()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.values.len()];
        grads[root.0] = Some(Tensor::full(self.values[root.0].dims(), T::one()));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].clone() else { continue };
            let Some(back) = &self.backprops[idx] else { continue };
            for (target, contrib) in back(&g, &self.values)? {
                debug_assert_eq!(
                    contrib.dims(),
                    self.values[target].dims(),
                    "gradient shape mismatch into node {target} ({})",
                    self.labels[target]
                );
                grads[target] = Some(match grads[target].take() {
                    Some(acc) => acc.add(&contrib)?,
                    None => contrib,
                });
            }
        }
        Ok(Gradients { grads })
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.values[a.0].dims() != self.values[b.0].dims() {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.values[a.0].dims(),
                self.values[b.0].dims()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.values[a.0].add(&self.values[b.0])?;
        let (ai, bi) = (a.0, b.0);
        Ok(self.push(
            out,
            "add".into(),
            Some(Box::new(move |g, _| Ok(vec![(ai, g.clone()), (bi, g.clone())]))),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.values[a.0].sub(&self.values[b.0])?;
        let (ai, bi) = (a.0, b.0);
        Ok(self.push(
            out,
            "sub".into(),
            Some(Box::new(move |g, _| {
                Ok(vec![(ai, g.clone()), (bi, g.scale(-T::one()))])
            })),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.values[a.0].mul(&self.values[b.0])?;
        let (ai, bi) = (a.0, b.0);
        Ok(self.push(
            out,
            "mul".into(),
            Some(Box::new(move |g, vals| {
                Ok(vec![(ai, g.mul(&vals[bi])?), (bi, g.mul(&vals[ai])?)])
            })),
        ))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let k = from_f64::<T>(c);
        let out = self.values[a.0].scale(k);
        let ai = a.0;
        self.push(
            out,
            "scale".into(),
            Some(Box::new(move |g, _| Ok(vec![(ai, g.scale(k))]))),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = nn::relu(&self.values[a.0]);
        let ai = a.0;
        self.push(
            out,
            "relu".into(),
            Some(Box::new(move |g, vals| {
                Ok(vec![(ai, g.zip_map(&vals[ai], |gv, x| if x > T::zero() { gv } else { T::zero() })?)])
            })),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(|v| v.tanh());
        let ai = a.0;
        let oi = self.values.len();
        self.push(
            out,
            "tanh".into(),
            Some(Box::new(move |g, vals| {
                Ok(vec![(ai, g.zip_map(&vals[oi], |gv, y| gv * (T::one() - y * y))?)])
            })),
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(|v| v.exp());
        let ai = a.0;
        let oi = self.values.len();
        self.push(
            out,
            "exp".into(),
            Some(Box::new(move |g, vals| Ok(vec![(ai, g.mul(&vals[oi])?)]))),
        )
    }

    /// sqrt(max(x, 0)) with the derivative zeroed once the output drops
    /// below 1e-8, so exact-zero losses do not explode.
    pub fn sqrt_guarded(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(|v| if v > T::zero() { v.sqrt() } else { T::zero() });
        let ai = a.0;
        let oi = self.values.len();
        let floor = from_f64::<T>(1e-8);
        let two = from_f64::<T>(2.0);
        self.push(
            out,
            "sqrt".into(),
            Some(Box::new(move |g, vals| {
                Ok(vec![(ai, g.zip_map(&vals[oi], |gv, y| {
                    if y > floor {
                        gv / (two * y)
                    } else {
                        T::zero()
                    }
                })?)])
            })),
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(&self.values[a.0], &self.values[b.0])?;
        let (ai, bi) = (a.0, b.0);
        Ok(self.push(
            out,
            "matmul".into(),
            Some(Box::new(move |g, vals| {
                let ga = tensor::matmul(g, &tensor::transpose(&vals[bi])?)?;
                let gb = tensor::matmul(&tensor::transpose(&vals[ai])?, g)?;
                Ok(vec![(ai, ga), (bi, gb)])
            })),
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = tensor::transpose(&self.values[a.0])?;
        let ai = a.0;
        Ok(self.push(
            out,
            "transpose".into(),
            Some(Box::new(move |g, _| Ok(vec![(ai, tensor::transpose(g)?)]))),
        ))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = nn::linear_forward(&self.values[x.0], &self.values[w.0], &self.values[b.0])?;
        let (xi, wi, bi) = (x.0, w.0, b.0);
        Ok(self.push(
            out,
            "linear".into(),
            Some(Box::new(move |g, vals| {
                let (m, n) = (vals[wi].dims()[0], vals[wi].dims()[1]);
                let mut gx = Tensor::zeros(&[n]);
                let mut gw = Tensor::zeros(&[m, n]);
                for i in 0..m {
                    let gi = g.data()[i];
                    for j in 0..n {
                        gx.data_mut()[j] = gx.data_mut()[j] + vals[wi].data()[i * n + j] * gi;
                        gw.data_mut()[i * n + j] = gi * vals[xi].data()[j];
                    }
                }
                Ok(vec![(xi, gx), (wi, gw), (bi, g.clone())])
            })),
        ))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = nn::conv2d_forward(&self.values[x.0], &self.values[w.0], &self.values[b.0], stride, pad)?;
        let (xi, wi, bi) = (x.0, w.0, b.0);
        Ok(self.push(
            out,
            "conv2d".into(),
            Some(Box::new(move |g, vals| {
                let gx = nn::conv2d_grad_input(g, &vals[wi], vals[xi].dims(), stride, pad)?;
                let gw = nn::conv2d_grad_weights(g, &vals[xi], vals[wi].dims(), stride, pad)?;
                let gb = nn::conv2d_grad_bias(g);
                Ok(vec![(xi, gx), (wi, gw), (bi, gb)])
            })),
        ))
    }

    pub fn pixel_unshuffle(&mut self, x: Var, s: usize) -> Result<Var> {
        let out = transforms::pixel_unshuffle(&self.values[x.0], s)?;
        let xi = x.0;
        Ok(self.push(
            out,
            "pixel_unshuffle".into(),
            Some(Box::new(move |g, _| Ok(vec![(xi, transforms::pixel_shuffle(g, s)?)]))),
        ))
    }

    pub fn pixel_shuffle(&mut self, x: Var, s: usize) -> Result<Var> {
        let out = transforms::pixel_shuffle(&self.values[x.0], s)?;
        let xi = x.0;
        Ok(self.push(
            out,
            "pixel_shuffle".into(),
            Some(Box::new(move |g, _| Ok(vec![(xi, transforms::pixel_unshuffle(g, s)?)]))),
        ))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let out = self.values[x.0].reshape(dims)?;
        let xi = x.0;
        let back_dims = self.values[x.0].dims().to_vec();
        Ok(self.push(
            out,
            "reshape".into(),
            Some(Box::new(move |g, _| Ok(vec![(xi, g.reshape(&back_dims)?)]))),
        ))
    }

    /// Concatenation along axis 0; all trailing extents must agree.
    pub fn concat0(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat0 of zero tensors".into()));
        }
        let tail = self.values[parts[0].0].dims()[1..].to_vec();
        let mut total = 0;
        for &p in parts {
            let d = self.values[p.0].dims();
            if d.is_empty() || d[1..] != tail[..] {
                return Err(Error::ShapeMismatch(format!(
                    "concat0 trailing extents differ: {:?} vs {:?}",
                    d, tail
                )));
            }
            total += d[0];
        }
        let mut dims = vec![total];
        dims.extend_from_slice(&tail);
        let mut data = Vec::with_capacity(dims.iter().product());
        for &p in parts {
            data.extend_from_slice(self.values[p.0].data());
        }
        let out = Tensor::new(&dims, data)?;
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(
            out,
            "concat0".into(),
            Some(Box::new(move |g, vals| {
                let mut contribs = Vec::with_capacity(idx.len());
                let mut offset = 0;
                for &i in &idx {
                    let len = vals[i].len();
                    let slice = Tensor::new(vals[i].dims(), g.data()[offset..offset + len].to_vec())?;
                    contribs.push((i, slice));
                    offset += len;
                }
                Ok(contribs)
            })),
        ))
    }

    /// Slice `len` entries along axis 0 starting at `start`; axis-0 slices
    /// are contiguous in row-major layout.
    pub fn narrow0(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let dims = self.values[x.0].dims().to_vec();
        if dims.is_empty() || start + len > dims[0] {
            return Err(Error::ShapeMismatch(format!(
                "narrow0 [{start}, {}) out of bounds for {:?}",
                start + len,
                dims
            )));
        }
        let inner: usize = dims[1..].iter().product();
        let mut out_dims = vec![len];
        out_dims.extend_from_slice(&dims[1..]);
        let out = Tensor::new(
            &out_dims,
            self.values[x.0].data()[start * inner..(start + len) * inner].to_vec(),
        )?;
        let xi = x.0;
        Ok(self.push(
            out,
            "narrow0".into(),
            Some(Box::new(move |g, vals| {
                let mut gx = Tensor::zeros(vals[xi].dims());
                gx.data_mut()[start * inner..(start + len) * inner].copy_from_slice(g.data());
                Ok(vec![(xi, gx)])
            })),
        ))
    }

    /// Clamp to [0,1] and round to 255 levels; backward is straight-through,
    /// passing gradient only where the input already lay inside [0,1].
    pub fn quantize_ste(&mut self, x: Var) -> Var {
        let out = crate::invnet::quantize(&self.values[x.0]);
        let xi = x.0;
        self.push(
            out,
            "quantize".into(),
            Some(Box::new(move |g, vals| {
                Ok(vec![(xi, g.zip_map(&vals[xi], |gv, v| {
                    if v >= T::zero() && v <= T::one() {
                        gv
                    } else {
                        T::zero()
                    }
                })?)])
            })),
        )
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let total = self.values[x.0].data().iter().copied().sum::<T>();
        let xi = x.0;
        self.push(
            Tensor::scalar(total),
            "sum_all".into(),
            Some(Box::new(move |g, vals| {
                let gv = g.data()[0];
                Ok(vec![(xi, Tensor::full(vals[xi].dims(), gv))])
            })),
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.values[x.0].len();
        let total = self.values[x.0].data().iter().copied().sum::<T>();
        let mean = total / from_f64::<T>(n as f64);
        let xi = x.0;
        self.push(
            Tensor::scalar(mean),
            "mean_all".into(),
            Some(Box::new(move |g, vals| {
                let gv = g.data()[0] / from_f64::<T>(n as f64);
                Ok(vec![(xi, Tensor::full(vals[xi].dims(), gv))])
            })),
        )
    }

    /// (C,H,W) -> (C): mean over the spatial extents.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let dims = self.values[x.0].dims();
        if dims.len() != 3 {
            return Err(Error::ShapeMismatch(format!("global_avg_pool expects (C,H,W), got {dims:?}")));
        }
        let (c, h, w) = (dims[0], dims[1], dims[2]);
        let area = from_f64::<T>((h * w) as f64);
        let mut out = Tensor::zeros(&[c]);
        for ci in 0..c {
            let mut acc = T::zero();
            for site in 0..h * w {
                acc = acc + self.values[x.0].data()[ci * h * w + site];
            }
            out.data_mut()[ci] = acc / area;
        }
        let xi = x.0;
        Ok(self.push(
            out,
            "global_avg_pool".into(),
            Some(Box::new(move |g, vals| {
                let mut gx = Tensor::zeros(vals[xi].dims());
                for ci in 0..c {
                    let gv = g.data()[ci] / area;
                    for site in 0..h * w {
                        gx.data_mut()[ci * h * w + site] = gv;
                    }
                }
                Ok(vec![(xi, gx)])
            })),
        ))
    }

    /// Feature-wise modulation: y[c, :, :] = x[c, :, :] * (1 + s[c]) + b[c].
    /// The +1 keeps zero-ish modulation parameters near identity.
    pub fn film(&mut self, x: Var, s: Var, b: Var) -> Result<Var> {
        let dims = self.values[x.0].dims().to_vec();
        if dims.len() != 3 || self.values[s.0].dims() != [dims[0]] || self.values[b.0].dims() != [dims[0]] {
            return Err(Error::ShapeMismatch(format!(
                "film expects x (C,H,W) with s, b of shape (C); got {:?}, {:?}, {:?}",
                dims,
                self.values[s.0].dims(),
                self.values[b.0].dims()
            )));
        }
        let (c, area) = (dims[0], dims[1] * dims[2]);
        let mut out = Tensor::zeros(&dims);
        for ci in 0..c {
            let sc = T::one() + self.values[s.0].data()[ci];
            let bc = self.values[b.0].data()[ci];
            for site in 0..area {
                out.data_mut()[ci * area + site] = self.values[x.0].data()[ci * area + site] * sc + bc;
            }
        }
        let (xi, si, bi) = (x.0, s.0, b.0);
        Ok(self.push(
            out,
            "film".into(),
            Some(Box::new(move |g, vals| {
                let mut gx = Tensor::zeros(vals[xi].dims());
                let mut gs = Tensor::zeros(&[c]);
                let mut gb = Tensor::zeros(&[c]);
                for ci in 0..c {
                    let sc = T::one() + vals[si].data()[ci];
                    let mut acc_s = T::zero();
                    let mut acc_b = T::zero();
                    for site in 0..area {
                        let gv = g.data()[ci * area + site];
                        gx.data_mut()[ci * area + site] = gv * sc;
                        acc_s = acc_s + gv * vals[xi].data()[ci * area + site];
                        acc_b = acc_b + gv;
                    }
                    gs.data_mut()[ci] = acc_s;
                    gb.data_mut()[ci] = acc_b;
                }
                Ok(vec![(xi, gx), (si, gs), (bi, gb)])
            })),
        ))
    }

    /// Tile a (C,P,P) block over an (h,w) canvas, truncating at the edges.
    pub fn tile_spatial(&mut self, tile: Var, h: usize, w: usize) -> Result<Var> {
        let dims = self.values[tile.0].dims();
        if dims.len() != 3 {
            return Err(Error::ShapeMismatch(format!("tile_spatial expects (C,P,P), got {dims:?}")));
        }
        let (c, ph, pw) = (dims[0], dims[1], dims[2]);
        let mut out = Tensor::zeros(&[c, h, w]);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = self.values[tile.0].data()[ci * ph * pw + (y % ph) * pw + (x % pw)];
                    out.data_mut()[ci * h * w + y * w + x] = v;
                }
            }
        }
        let ti = tile.0;
        Ok(self.push(
            out,
            "tile_spatial".into(),
            Some(Box::new(move |g, _| {
                let mut gt = Tensor::zeros(&[c, ph, pw]);
                for ci in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            let slot = ci * ph * pw + (y % ph) * pw + (x % pw);
                            gt.data_mut()[slot] = gt.data_mut()[slot] + g.data()[ci * h * w + y * w + x];
                        }
                    }
                }
                Ok(vec![(ti, gt)])
            })),
        ))
    }
}

/// Compares the tape's gradients against central differences for a scalar
/// function assembled by `build` from the given inputs. Returns the worst
/// relative error over all inputs, with the usual guarded denominator.
pub fn check_gradients<T, F>(build: &F, inputs: &[Tensor<T>], h: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| g.leaf(t.clone(), format!("input{i}"))).collect();
    let root = build(&mut g, &vars)?;
    let grads = g.backward(root)?;

    let eval = |probe_idx: usize, probe: &Tensor<T>| -> Result<T> {
        let mut g2 = Graph::new();
        let vars2: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let t = if i == probe_idx { probe.clone() } else { t.clone() };
                g2.leaf(t, format!("input{i}"))
            })
            .collect();
        let r = build(&mut g2, &vars2)?;
        Ok(g2.value(r).data()[0])
    };

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = match grads.get(vars[i]) {
            Some(t) => t.clone(),
            None => Tensor::zeros(input.dims()),
        };
        let numeric = crate::numerics::gradcheck::finite_diff_grad(|p| eval(i, p), input, h)?;
        worst = worst.max(crate::numerics::gradcheck::max_rel_error(&analytic, &numeric)?);
    }
    Ok(worst)
}

/// Convenience wrapper: asserts all tape gradients match finite differences
/// within `tol` (relative), returning the measured worst error.
pub fn assert_gradients<T, F>(build: &F, inputs: &[Tensor<T>], h: f64, tol: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let worst = check_gradients(build, inputs, h)?;
    if worst >= tol {
        return Err(Error::InvalidArgument(format!(
            "gradient check failed: worst relative error {worst:.3e} >= {tol:.1e}"
        )));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::SeededRng;

    fn rng() -> SeededRng {
        SeededRng::new(0x5eed)
    }

    #[test]
    fn add_mul_chain_grad() {
        let mut r = rng();
        let a: Tensor<f64> = r.tensor_uniform(&[3, 2], -1.0, 1.0);
        let b: Tensor<f64> = r.tensor_uniform(&[3, 2], -1.0, 1.0);
        let build = |g: &mut Graph<f64>, v: &[Var]| {
            let s = g.add(v[0], v[1])?;
            let m = g.mul(s, v[0])?;
            Ok(g.sum_all(m))
        };
        assert!(check_gradients(&build, &[a, b], 1e-6).unwrap() < 1e-8);
    }

    #[test]
    fn activation_grads() {
        let mut r = rng();
        let x: Tensor<f64> = r.tensor_uniform(&[8], -2.0, 2.0);
        for (name, build) in [
            ("tanh", (|g: &mut Graph<f64>, v: &[Var]| {
                let y = g.tanh(v[0]);
                Ok(g.sum_all(y))
            }) as fn(&mut Graph<f64>, &[Var]) -> Result<Var>),
            ("exp", |g, v| {
                let y = g.exp(v[0]);
                Ok(g.sum_all(y))
            }),
            ("relu", |g, v| {
                let y = g.relu(v[0]);
                Ok(g.sum_all(y))
            }),
        ] {
            let worst = check_gradients(&build, std::slice::from_ref(&x), 1e-6).unwrap();
            assert!(worst < 1e-6, "{name}: {worst}");
        }
    }

    #[test]
    fn sqrt_of_mean_grad() {
        let mut r = rng();
        let x: Tensor<f64> = r.tensor_uniform(&[6], 0.5, 2.0);
        let build = |g: &mut Graph<f64>, v: &[Var]| {
            let sq = g.mul(v[0], v[0])?;
            let m = g.mean_all(sq);
            Ok(g.sqrt_guarded(m))
        };
        assert!(check_gradients(&build, &[x], 1e-6).unwrap() < 1e-7);
    }

    #[test]
    fn matmul_and_transpose_grads() {
        let mut r = rng();
        let a: Tensor<f64> = r.tensor_uniform(&[3, 4], -1.0, 1.0);
        let b: Tensor<f64> = r.tensor_uniform(&[4, 2], -1.0, 1.0);
        let build = |g: &mut Graph<f64>, v: &[Var]| {
            let at = g.transpose(v[0])?;
            let ata = g.matmul(v[0], at)?;
            let prod = g.matmul(ata, v[0])?;
            let y = g.matmul(prod, v[1])?;
            Ok(g.sum_all(y))
        };
        assert!(check_gradients(&build, &[a, b], 1e-6).unwrap() < 1e-6);
    }

    #[test]
    fn conv_and_linear_grads() {
        let mut r = rng();
        let x: Tensor<f64> = r.tensor_uniform(&[2, 4, 4], -1.0, 1.0);
        let w: Tensor<f64> = r.tensor_uniform(&[3, 2, 3, 3], -0.5, 0.5);
        let b: Tensor<f64> = r.tensor_uniform(&[3], -0.5, 0.5);
        let build = |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.conv2d(v[0], v[1], v[2], 1, 1)?;
            let y = g.relu(y);
            Ok(g.mean_all(y))
        };
        assert!(check_gradients(&build, &[x, w, b], 1e-6).unwrap() < 1e-6);

        let xv: Tensor<f64> = r.tensor_uniform(&[5], -1.0, 1.0);
        let wv: Tensor<f64> = r.tensor_uniform(&[3, 5], -1.0, 1.0);
        let bv: Tensor<f64> = r.tensor_uniform(&[3], -1.0, 1.0);
        let build_lin = |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.linear(v[0], v[1], v[2])?;
            let y = g.tanh(y);
            Ok(g.sum_all(y))
        };
        assert!(check_gradients(&build_lin, &[xv, wv, bv], 1e-6).unwrap() < 1e-7);
    }

    #[test]
    fn shuffle_reshape_concat_narrow_grads() {
        let mut r = rng();
        let x: Tensor<f64> = r.tensor_uniform(&[4, 4, 4], -1.0, 1.0);
        let y: Tensor<f64> = r.tensor_uniform(&[2, 2, 2], -1.0, 1.0);
        let build = |g: &mut Graph<f64>, v: &[Var]| {
            let u = g.pixel_unshuffle(v[0], 2)?;
            let a = g.narrow0(u, 0, 2)?;
            let b = g.narrow0(u, 2, 14)?;
            let a2 = g.mul(a, v[1])?;
            let cat = g.concat0(&[a2, b])?;
            let back = g.pixel_shuffle(cat, 2)?;
            let flat = g.reshape(back, &[64])?;
            let sq = g.mul(flat, flat)?;
            Ok(g.mean_all(sq))
        };
        assert!(check_gradients(&build, &[x, y], 1e-6).unwrap() < 1e-7);
    }

    #[test]
    fn film_pool_tile_grads() {
        let mut r = rng();
        let x: Tensor<f64> = r.tensor_uniform(&[3, 4, 4], -1.0, 1.0);
        let s: Tensor<f64> = r.tensor_uniform(&[3], -0.5, 0.5);
        let b: Tensor<f64> = r.tensor_uniform(&[3], -0.5, 0.5);
        let tile: Tensor<f64> = r.tensor_uniform(&[3, 2, 2], -1.0, 1.0);
        let build = |g: &mut Graph<f64>, v: &[Var]| {
            let t = g.tile_spatial(v[3], 4, 4)?;
            let f = g.film(v[0], v[1], v[2])?;
            let y = g.mul(f, t)?;
            let p = g.global_avg_pool(y)?;
            let sq = g.mul(p, p)?;
            Ok(g.sum_all(sq))
        };
        assert!(check_gradients(&build, &[x, s, b, tile], 1e-6).unwrap() < 1e-7);
    }

    #[test]
    fn tile_truncates_at_edges() {
        let mut g = Graph::<f32>::new();
        let tile = g.leaf(Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), "tile");
        let out = g.tile_spatial(tile, 3, 3).unwrap();
        assert_eq!(g.value(out).data(), &[1.0, 2.0, 1.0, 3.0, 4.0, 3.0, 1.0, 2.0, 1.0]);
    }

    #[test]
    fn quantize_ste_passes_gradient_inside_unit_interval() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::new(&[4], vec![-0.5, 0.25, 0.75, 1.5]).unwrap(), "x");
        let q = g.quantize_ste(x);
        let s = g.sum_all(q);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);
        // Forward values actually quantize.
        let v = g.value(q).data();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 64.0 / 255.0).abs() < 1e-7);
        assert_eq!(v[3], 1.0);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros(&[3]), "x");
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn reused_variable_accumulates_gradient() {
        // f(x) = x*x summed: grad 2x, exercised through double use of the
        // same node rather than a squaring op.
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(&[2], vec![3.0, -2.0]).unwrap(), "x");
        let m = g.mul(x, x).unwrap();
        let s = g.sum_all(m);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0, -4.0]);
    }

    #[test]
    fn first_non_finite_names_the_node() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::new(&[1], vec![800.0]).unwrap(), "x");
        let e = g.exp(x);
        let _ = g.scale(e, 1.0);
        let (idx, label) = g.first_non_finite().unwrap();
        assert_eq!(label, "exp");
        assert_eq!(idx, 1);
    }
}
