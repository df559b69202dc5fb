//! Dense row-major rank-N tensor, the universal value carrier.

use crate::error::{Error, Result};
use crate::scalar::{from_f64, to_f64, Scalar};

/// Dense row-major array of scalars. Rank 0 is a scalar (one element).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor, validating that `data` matches `product(dims)` and
    /// that every extent is positive.
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "zero extent in dims {dims:?}"
            )));
        }
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "dims {dims:?} imply {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let len: usize = dims.iter().product();
        Self::new(dims, vec![T::zero(); len]).expect("zeros shape")
    }

    pub fn full(dims: &[usize], v: T) -> Self {
        let len: usize = dims.iter().product();
        Self::new(dims, vec![v; len]).expect("full shape")
    }

    /// Rank-0 scalar tensor.
    pub fn scalar(v: T) -> Self {
        Self {
            dims: Vec::new(),
            data: vec![v],
        }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len: usize = dims.iter().product();
        let data = (0..len).map(&mut f).collect();
        Self::new(dims, data).expect("from_fn shape")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The single element of a rank-0 or one-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1, "item() on multi-element tensor");
        self.data[0]
    }

    /// Row-major offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0;
        for (i, &ix) in idx.iter().enumerate() {
            debug_assert!(ix < self.dims[i]);
            off = off * self.dims[i] + ix;
        }
        off
    }

    pub fn at(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: T) {
        let off = self.offset(idx);
        self.data[off] = v;
    }

    /// Reinterprets the data under new dims of equal total length.
    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != self.data.len() || dims.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elems) to {dims:?}",
                self.dims,
                self.data.len()
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!(
                "elementwise op on {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(Self {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    /// Euclidean norm, accumulated in f64.
    pub fn l2_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| {
                let x = to_f64(v);
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Mean of all elements, accumulated in f64.
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| to_f64(v)).sum::<f64>() / self.data.len() as f64
    }

    /// Errors with `name` if any element is NaN or infinite.
    pub fn check_finite(&self, name: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(name.to_string()))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Casts every element through f64 into another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| from_f64(to_f64(v))).collect(),
        }
    }

    /// n-by-n identity matrix.
    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| {
            if i / n == i % n {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    /// Slice of `len` entries along axis 0 starting at `start`. Axis-0
    /// slices are contiguous in row-major layout, so this is a plain copy.
    pub fn narrow0(&self, start: usize, len: usize) -> Result<Self> {
        if self.dims.is_empty() || start + len > self.dims[0] {
            return Err(Error::ShapeMismatch(format!(
                "narrow0 [{start}, {}) out of bounds for {:?}",
                start + len,
                self.dims
            )));
        }
        let inner: usize = self.dims[1..].iter().product();
        let mut dims = vec![len];
        dims.extend_from_slice(&self.dims[1..]);
        Tensor::new(&dims, self.data[start * inner..(start + len) * inner].to_vec())
    }
}

/// Concatenation along axis 0; trailing extents must agree.
pub fn concat0<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = parts.first() else {
        return Err(Error::ShapeMismatch("concat0 of zero tensors".into()));
    };
    let tail = &first.dims()[1..];
    let mut total = 0;
    for p in parts {
        if p.dims().is_empty() || &p.dims()[1..] != tail {
            return Err(Error::ShapeMismatch(format!(
                "concat0 trailing extents differ: {:?} vs {:?}",
                p.dims(),
                first.dims()
            )));
        }
        total += p.dims()[0];
    }
    let mut dims = vec![total];
    dims.extend_from_slice(tail);
    let mut data = Vec::with_capacity(dims.iter().product());
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::new(&dims, data)
}

/// Standard row-major matrix product of two rank-2 tensors.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "matmul needs rank-2 operands, got {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (m, k) = (a.dims()[0], a.dims()[1]);
    let (k2, n) = (b.dims()[0], b.dims()[1]);
    if k != k2 {
        return Err(Error::ShapeMismatch(format!(
            "matmul inner extents differ: {:?} x {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut out = vec![T::zero(); m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

/// Transpose of a rank-2 tensor.
pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "transpose needs rank-2 input, got {:?}",
            a.dims()
        )));
    }
    let (m, n) = (a.dims()[0], a.dims()[1]);
    let d = a.data();
    Ok(Tensor::from_fn(&[n, m], |i| d[(i % m) * n + i / m]))
}
