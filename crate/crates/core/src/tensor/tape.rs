use std::collections::HashMap;
use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::{conv2d_output_shape, max_pool2d_output_shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate corruption of a backward rule, used to prove that gradient
/// checking detects a broken derivative.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Scales the kernel gradient of every convolution by 1.5.
    ConvKernelGrad,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    AddScalar(Var, Var),
    AddChannelBias(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Sum(Var),
    MatVec(Var, Var),
    /// Keeps the unrolled input for the kernel gradient.
    Conv2d(Var, Var, ConvGeom, Rc<Vec<f64>>),
    Gather(Var, Vec<usize>),
    AvgPoolSpatial(Var),
    Maximum(Var, Var),
    L2Normalize(Var, f64),
    Bce(Var, bool, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of tensor operations for reverse-mode
/// differentiation.
///
/// Every op appends one node; [`Tape::backward`] walks the nodes once in
/// reverse order. A tape is single-use: a second `backward` is an error.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
    fault: Option<Fault>,
    /// Unrolled inputs keyed by `(input, k1, k2, stride, pad)`, shared by
    /// convolutions that read the same map.
    cols: HashMap<(usize, usize, usize, usize, usize), Rc<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn with_fault(fault: Fault) -> Self {
        Self {
            fault: Some(fault),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a trainable leaf; it receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers an input that is never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Hash of every discrete routing decision on the tape: pooling argmaxes
    /// and element-wise maximum selections. Two forward passes with equal
    /// routing lie on the same smooth piece of the function.
    pub fn routing(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Gather(_, arg) => arg.hash(&mut h),
                Op::Maximum(a, b) => {
                    let (x, y) = (self.value(*a).data(), self.value(*b).data());
                    for (p, q) in x.iter().zip(y) {
                        (p >= q).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Gradient of the last `backward` loss with respect to `v`, or `None`
    /// when `v` is constant or did not influence the loss.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v), g.clone()).expect("gradient shape"))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{op}: operand shapes differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |p, q| p + q);
        Ok(self.push(v, Op::Add(a, b), self.rg(&[a, b])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |p, q| p - q);
        Ok(self.push(v, Op::Sub(a, b), self.rg(&[a, b])))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |p, q| p * q);
        Ok(self.push(v, Op::Mul(a, b), self.rg(&[a, b])))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| k * x);
        self.push(v, Op::Affine(a, k), self.rg(&[a]))
    }

    /// `1 - a`, element-wise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 - x);
        self.push(v, Op::Affine(a, -1.0), self.rg(&[a]))
    }

    /// Adds a one-element tensor to every component of `a`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::dim(format!(
                "add_scalar: expected a one-element tensor, got {:?}",
                self.shape(s)
            )));
        }
        let k = self.value(s).item();
        let v = self.value(a).map(|x| x + k);
        Ok(self.push(v, Op::AddScalar(a, s), self.rg(&[a, s])))
    }

    /// Adds `bias[c]` to every cell of channel `c` of a `C×H×W` map.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if self.shape(bias) != [c] {
            return Err(Error::dim(format!(
                "channel bias of shape {:?} does not match {c} channels",
                self.shape(bias)
            )));
        }
        let b = self.value(bias).data().to_vec();
        let mut v = self.value(x).clone();
        for (ch, plane) in v.data_mut().chunks_mut(h * w).enumerate() {
            plane.iter_mut().for_each(|p| *p += b[ch]);
        }
        Ok(self.push(v, Op::AddChannelBias(x, bias), self.rg(&[x, bias])))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), self.rg(&[a]))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a), self.rg(&[a]))
    }

    /// Sum of all components, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), self.rg(&[a]))
    }

    /// Dense `[m×n] · [n]` product.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (&[m, n], &[k]) = (self.shape(w), self.shape(x)) else {
            return Err(Error::dim(format!(
                "matvec expects a matrix and a vector, got {:?} and {:?}",
                self.shape(w),
                self.shape(x)
            )));
        };
        if n != k {
            return Err(Error::dim(format!(
                "matvec: matrix {:?} cannot multiply vector of length {k}",
                self.shape(w)
            )));
        }
        let (wm, xv) = (self.value(w).data(), self.value(x).data());
        let out: Vec<f64> = (0..m)
            .map(|i| wm[i * n..(i + 1) * n].iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        let v = Tensor::new(&[m], out)?;
        Ok(self.push(v, Op::MatVec(w, x), self.rg(&[w, x])))
    }

    /// Zero-padded cross-correlation of a `Cin×H×W` map with a
    /// `Cout×Cin×k1×k2` kernel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let [c_out, h_out, w_out] =
            conv2d_output_shape(self.shape(input), self.shape(kernel), stride, padding)?;
        let (c_in, h, w) = self.value(input).chw()?;
        let ks = self.shape(kernel);
        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k1: ks[2],
            k2: ks[3],
            stride,
            pad: padding,
            h_out,
            w_out,
        };
        let key = (input.0, geom.k1, geom.k2, stride, padding);
        let col = match self.cols.get(&key) {
            Some(c) => Rc::clone(c),
            None => {
                let c = Rc::new(kernels::im2col(&geom, self.value(input).data()));
                self.cols.insert(key, Rc::clone(&c));
                c
            }
        };
        let mut out = vec![0.0; c_out * h_out * w_out];
        kernels::conv2d_forward_col(&geom, &col, self.value(kernel).data(), &mut out);
        let v = Tensor::new(&[c_out, h_out, w_out], out)?;
        Ok(self.push(v, Op::Conv2d(input, kernel, geom, col), self.rg(&[input, kernel])))
    }

    /// Floor-mode max pooling; the gradient flows to the first maximum of
    /// each window.
    pub fn max_pool2d(&mut self, input: Var, window: (usize, usize), stride: usize) -> Result<Var> {
        let [c, h_out, w_out] = max_pool2d_output_shape(self.shape(input), window, stride)?;
        let dims = self.value(input).chw()?;
        let (out, arg) =
            kernels::max_pool2d_forward(self.value(input).data(), dims, window, stride, (h_out, w_out));
        let v = Tensor::new(&[c, h_out, w_out], out)?;
        Ok(self.push(v, Op::Gather(input, arg), self.rg(&[input])))
    }

    /// Max pooling onto an exact output grid (see
    /// [`kernels::adaptive_max_pool2d_forward`]).
    pub fn adaptive_max_pool2d(&mut self, input: Var, out_hw: (usize, usize)) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        let (h_out, w_out) = out_hw;
        if h_out == 0 || w_out == 0 || h_out > h || w_out > w {
            return Err(Error::dim(format!(
                "cannot max-pool {h}×{w} onto a {h_out}×{w_out} grid"
            )));
        }
        let (out, arg) =
            kernels::adaptive_max_pool2d_forward(self.value(input).data(), (c, h, w), out_hw);
        let v = Tensor::new(&[c, h_out, w_out], out)?;
        Ok(self.push(v, Op::Gather(input, arg), self.rg(&[input])))
    }

    /// Spatial mean of every channel: `C×H×W -> C`.
    pub fn avg_pool_spatial(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        if h == 0 || w == 0 {
            return Err(Error::EmptyInput("avg_pool_spatial over an empty grid".into()));
        }
        let n = (h * w) as f64;
        let out: Vec<f64> = self
            .value(input)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().sum::<f64>() / n)
            .collect();
        let v = Tensor::new(&[c], out)?;
        Ok(self.push(v, Op::AvgPoolSpatial(input), self.rg(&[input])))
    }

    /// Element-wise maximum; ties send the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("maximum", a, b)?;
        let v = self.zip_with(a, b, |p, q| if q > p { q } else { p });
        Ok(self.push(v, Op::Maximum(a, b), self.rg(&[a, b])))
    }

    /// `a / sqrt(|a|² + eps)`.
    pub fn l2_normalize(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let norm = (x.data().iter().map(|v| v * v).sum::<f64>() + eps).sqrt();
        let v = x.map(|v| v / norm);
        self.push(v, Op::L2Normalize(a, eps), self.rg(&[a]))
    }

    /// Binary cross-entropy of a probability `s`: `-ln s` when `similar`,
    /// `-ln(1-s)` otherwise, with `s` clamped to `[clamp, 1-clamp]`.
    pub fn bce(&mut self, s: Var, similar: bool, clamp: f64) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::dim(format!(
                "bce expects a scalar probability, got shape {:?}",
                self.shape(s)
            )));
        }
        let p = self.value(s).item();
        let v = Tensor::scalar(bce_value(p, similar, clamp)?);
        Ok(self.push(v, Op::Bce(s, similar, clamp), self.rg(&[s])))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::StaleTape);
        }
        if self.nodes.is_empty() {
            return Err(Error::EmptyInput("backward on an empty tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64], &[Node])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot, &self.nodes);
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // Borrow the op out so the accumulators can borrow `self` mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(*a, |d, _| axpy(d, 1.0, g));
                self.acc(*b, |d, _| axpy(d, 1.0, g));
            }
            Op::Sub(a, b) => {
                self.acc(*a, |d, _| axpy(d, 1.0, g));
                self.acc(*b, |d, _| axpy(d, -1.0, g));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                self.acc(a, |d, nodes| {
                    for ((d, gi), y) in d.iter_mut().zip(g).zip(nodes[b.0].value.data()) {
                        *d += gi * y;
                    }
                });
                self.acc(b, |d, nodes| {
                    for ((d, gi), x) in d.iter_mut().zip(g).zip(nodes[a.0].value.data()) {
                        *d += gi * x;
                    }
                });
            }
            Op::Affine(a, k) => self.acc(*a, |d, _| axpy(d, *k, g)),
            Op::AddScalar(a, s) => {
                self.acc(*a, |d, _| axpy(d, 1.0, g));
                self.acc(*s, |d, _| d[0] += g.iter().sum::<f64>());
            }
            Op::AddChannelBias(x, b) => {
                self.acc(*x, |d, _| axpy(d, 1.0, g));
                let c = self.nodes[b.0].value.len();
                let plane = g.len() / c.max(1);
                self.acc(*b, |d, _| {
                    for (ch, chunk) in g.chunks(plane).enumerate() {
                        d[ch] += chunk.iter().sum::<f64>();
                    }
                });
            }
            Op::Sigmoid(a) => {
                self.acc(*a, |d, nodes| {
                    for ((d, gi), y) in d.iter_mut().zip(g).zip(nodes[i].value.data()) {
                        *d += gi * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(a) => {
                self.acc(*a, |d, nodes| {
                    for ((d, gi), y) in d.iter_mut().zip(g).zip(nodes[i].value.data()) {
                        *d += gi * (1.0 - y * y);
                    }
                });
            }
            Op::Sum(a) => self.acc(*a, |d, _| d.iter_mut().for_each(|x| *x += g[0])),
            Op::MatVec(w, x) => {
                let (w, x) = (*w, *x);
                let n = self.nodes[x.0].value.len();
                self.acc(w, |d, nodes| {
                    let xv = nodes[x.0].value.data();
                    for (row, gi) in d.chunks_mut(n).zip(g) {
                        axpy(row, *gi, xv);
                    }
                });
                self.acc(x, |d, nodes| {
                    let wm = nodes[w.0].value.data();
                    for (row, gi) in wm.chunks(n).zip(g) {
                        axpy(d, *gi, row);
                    }
                });
            }
            Op::Conv2d(input, kernel, geom, col) => {
                let (input, kernel, geom) = (*input, *kernel, *geom);
                self.acc(input, |d, nodes| {
                    kernels::conv2d_backward_input(&geom, g, nodes[kernel.0].value.data(), d)
                });
                let fault = self.fault;
                self.acc(kernel, |d, _| {
                    if fault == Some(Fault::ConvKernelGrad) {
                        let mut tmp = vec![0.0; d.len()];
                        kernels::conv2d_backward_kernel_col(&geom, g, col, &mut tmp);
                        axpy(d, 1.5, &tmp);
                    } else {
                        kernels::conv2d_backward_kernel_col(&geom, g, col, d);
                    }
                });
            }
            Op::Gather(a, arg) => {
                self.acc(*a, |d, _| {
                    for (gi, &k) in g.iter().zip(arg) {
                        d[k] += gi;
                    }
                });
            }
            Op::AvgPoolSpatial(a) => {
                let plane = self.nodes[a.0].value.len() / g.len().max(1);
                let inv = 1.0 / plane as f64;
                self.acc(*a, |d, _| {
                    for (chunk, gi) in d.chunks_mut(plane).zip(g) {
                        chunk.iter_mut().for_each(|x| *x += gi * inv);
                    }
                });
            }
            Op::Maximum(a, b) => {
                let (a, b) = (*a, *b);
                self.acc(a, |d, nodes| {
                    let (x, y) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    for k in 0..d.len() {
                        if x[k] >= y[k] {
                            d[k] += g[k];
                        }
                    }
                });
                self.acc(b, |d, nodes| {
                    let (x, y) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    for k in 0..d.len() {
                        if y[k] > x[k] {
                            d[k] += g[k];
                        }
                    }
                });
            }
            Op::L2Normalize(a, eps) => {
                // y = x/n, n = sqrt(|x|²+eps): dx = (g - y (y·g)) / n
                let eps = *eps;
                self.acc(*a, |d, nodes| {
                    let x = nodes[a.0].value.data();
                    let y = nodes[i].value.data();
                    let n = (x.iter().map(|v| v * v).sum::<f64>() + eps).sqrt();
                    let yg: f64 = y.iter().zip(g).map(|(p, q)| p * q).sum();
                    for k in 0..d.len() {
                        d[k] += (g[k] - y[k] * yg) / n;
                    }
                });
            }
            Op::Bce(s, similar, clamp) => {
                let (similar, clamp) = (*similar, *clamp);
                self.acc(*s, |d, nodes| {
                    let p = nodes[s.0].value.item().clamp(clamp, 1.0 - clamp);
                    d[0] += g[0] * if similar { -1.0 / p } else { 1.0 / (1.0 - p) };
                });
            }
        }
        self.nodes[i].op = op;
    }
}

#[inline]
fn axpy(d: &mut [f64], k: f64, x: &[f64]) {
    for (d, x) in d.iter_mut().zip(x) {
        *d += k * x;
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn bce_value(p: f64, similar: bool, clamp: f64) -> Result<f64> {
    let q = p.clamp(clamp, 1.0 - clamp);
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Numeric(format!(
            "similarity {p} lies outside (0, 1) after clamping"
        )));
    }
    Ok(if similar { -q.ln() } else { -(1.0 - q).ln() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(&[1.0, 2.0]));
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(&[1.0, 2.0]));
        let x = tape.constant(Tensor::vector(&[3.0, 4.0]));
        let y = tape.mul(w, x).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[3.0, 4.0]);
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn second_backward_is_stale() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(3.0));
        let loss = tape.sum(w);
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::StaleTape)));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(&[1.0, 2.0]));
        assert!(matches!(tape.backward(w), Err(Error::Dimension(_))));
    }

    #[test]
    fn pointwise_values() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        let t = tape.tanh(z);
        assert_eq!(tape.value(s).item(), 0.5);
        assert_eq!(tape.value(t).item(), 0.0);
        let a = tape.constant(Tensor::vector(&[1.0, 2.0]));
        let b = tape.constant(Tensor::vector(&[3.0, 4.0]));
        let m = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(m).data(), &[3.0, 8.0]);
        let c = tape.constant(Tensor::vector(&[1.0]));
        assert!(matches!(tape.add(a, c), Err(Error::Dimension(_))));
    }

    #[test]
    fn max_pool_ties_route_to_first_cell() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::full(&[1, 4, 4], 2.0));
        let p = tape.max_pool2d(x, (2, 2), 2).unwrap();
        assert_eq!(tape.value(p).data(), &[2.0; 4]);
        let loss = tape.sum(p);
        tape.backward(loss).unwrap();
        let g = tape.grad(x).unwrap();
        #[rustfmt::skip]
        let expected = [
            1.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            1.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(g.data(), &expected);
    }

    #[test]
    fn bce_clamps_and_matches_log() {
        assert!((bce_value(0.5, true, 1e-7).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_value(0.5, false, 1e-7).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_value(1.0, true, 1e-7).unwrap() < 1e-6);
        assert!(bce_value(f64::NAN, true, 1e-7).is_err());
    }

    #[test]
    fn routing_tracks_pool_decisions() {
        let sig = |a: f64| {
            let mut t = Tape::new();
            let x = t.constant(Tensor::new(&[1, 1, 2], vec![a, 1.0]).unwrap());
            t.max_pool2d(x, (1, 2), 2).unwrap();
            t.routing()
        };
        assert_eq!(sig(0.5), sig(0.9));
        assert_ne!(sig(0.9), sig(1.1));
    }
}
