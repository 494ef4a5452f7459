//! Dense row-major tensors, the recording tape used for reverse-mode
//! differentiation, and the SQT1 binary container.
//!
//! [`Tensor`] is a plain value: a shape and a flat `f64` buffer. Gradient
//! tracking lives on a [`Tape`]; a tensor registered with [`Tape::param`]
//! becomes a tracked leaf and every op recorded against it is differentiated
//! by [`Tape::backward`].

mod io;
pub mod kernels;
mod tape;

pub use io::{read_sqt, read_sqt_from, write_sqt, write_sqt_to, SQT_MAGIC};
pub use tape::{Fault, Tape, Var};
pub(crate) use tape::bce_value;

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} holds {n} values but buffer has {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(values: &[f64]) -> Self {
        Self {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `(C, H, W)` of a rank-3 feature map.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::dim(format!(
                "expected a C×H×W feature map, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Copy of the `index`-th slice along the leading axis.
    pub fn slice_outer(&self, index: usize) -> Tensor {
        let inner: usize = self.shape[1..].iter().product();
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        }
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::EmptyInput("stack of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::dim(format!(
                    "cannot stack {:?} with {:?}",
                    first.shape, t.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}[", self.shape)?;
        for (i, x) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{x:.4}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", …")?;
        }
        write!(f, "]")
    }
}

/// Output shape of a zero-padded cross-correlation.
pub fn conv2d_output_shape(
    input: &[usize],
    kernel: &[usize],
    stride: usize,
    padding: usize,
) -> Result<[usize; 3]> {
    let (&[c_in, h, w], &[c_out, k_in, k1, k2]) = (input, kernel) else {
        return Err(Error::dim(format!(
            "conv2d expects input C×H×W and kernel Cout×Cin×k1×k2, got {input:?} and {kernel:?}"
        )));
    };
    if c_in != k_in {
        return Err(Error::dim(format!(
            "conv2d input has {c_in} channels (shape {input:?}) but kernel expects {k_in} (shape {kernel:?})"
        )));
    }
    if stride == 0 {
        return Err(Error::dim("conv2d stride must be positive"));
    }
    if k1 > h + 2 * padding || k2 > w + 2 * padding {
        return Err(Error::dim(format!(
            "conv2d kernel {k1}×{k2} exceeds padded input {}×{}",
            h + 2 * padding,
            w + 2 * padding
        )));
    }
    Ok([
        c_out,
        (h + 2 * padding - k1) / stride + 1,
        (w + 2 * padding - k2) / stride + 1,
    ])
}

/// Output shape of floor-mode max pooling.
pub fn max_pool2d_output_shape(
    input: &[usize],
    window: (usize, usize),
    stride: usize,
) -> Result<[usize; 3]> {
    let &[c, h, w] = input else {
        return Err(Error::dim(format!("max_pool2d expects C×H×W, got {input:?}")));
    };
    let (p1, p2) = window;
    if p1 == 0 || p2 == 0 || stride == 0 {
        return Err(Error::dim("max_pool2d window and stride must be positive"));
    }
    if p1 > h || p2 > w {
        return Err(Error::dim(format!(
            "max_pool2d window {p1}×{p2} larger than input {h}×{w}"
        )));
    }
    Ok([c, (h - p1) / stride + 1, (w - p2) / stride + 1])
}

/// Element-wise clipping of every gradient component into `[lo, hi]`.
pub fn clip_gradients<'a>(grads: impl IntoIterator<Item = &'a mut Tensor>, lo: f64, hi: f64) {
    for g in grads {
        for x in g.data_mut() {
            *x = x.clamp(lo, hi);
        }
    }
}
