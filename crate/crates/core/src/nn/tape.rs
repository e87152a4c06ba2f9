//! Reverse-mode differentiation over a linear tape.
//!
//! Every primitive appends one node holding its output value and whatever
//! it needs for backward. Node indices are a topological order by
//! construction, so [`Tape::backward`] walks them in reverse and
//! accumulates gradients additively at fan-out.

use super::kernels;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, cols: Vec<T> },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    UpConv2 { x: Var, w: Var, b: Var, xmat: Vec<T> },
    Relu { x: Var },
    Sigmoid { x: Var },
    Concat { a: Var, b: Var },
    Add { a: Var, b: Var },
    /// `sum(x * weights)`
    Dot { x: Var, weights: Tensor<T> },
    /// Scalar function of `x` whose local gradient was computed eagerly.
    Scalar { x: Var, grad: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (out, cols) = kernels::conv2d_forward(self.value(x), self.value(w), self.value(b))?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let cols = if needs { cols } else { Vec::new() };
        Ok(self.push(out, Op::Conv2d { x, w, b, cols }, needs))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = kernels::maxpool2_forward(self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, needs))
    }

    pub fn upconv2(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (out, xmat) = kernels::upconv2_forward(self.value(x), self.value(w), self.value(b))?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let xmat = if needs { xmat } else { Vec::new() };
        Ok(self.push(out, Op::UpConv2 { x, w, b, xmat }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let needs = self.needs(x);
        self.push(out, Op::Relu { x }, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let needs = self.needs(x);
        self.push(out, Op::Sigmoid { x }, needs)
    }

    /// Concatenates along the channel axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let [n, ca, h, w] = ta.shape();
        let [nb, cb, hb, wb] = tb.shape();
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::Shape(format!("cannot concat {:?} with {:?}", ta.shape(), tb.shape())));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * (ca + cb) * hw);
        for s in 0..n {
            data.extend_from_slice(ta.sample(s));
            data.extend_from_slice(tb.sample(s));
        }
        let out = Tensor::from_vec([n, ca + cb, h, w], data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Concat { a, b }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!("cannot add {:?} and {:?}", ta.shape(), tb.shape())));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, needs))
    }

    /// Scalar `sum(x * weights)`; projects a tensor output onto a scalar.
    pub fn dot(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape() != weights.shape() {
            return Err(Error::Shape(format!("dot of {:?} with {:?}", tx.shape(), weights.shape())));
        }
        let s: f64 = tx.data().iter().zip(weights.data()).map(|(a, b)| (*a * *b).as_f64()).sum();
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(T::from_f64(s)), Op::Dot { x, weights }, needs))
    }

    /// Records a scalar-valued function of `x` given its value and gradient.
    pub fn scalar_fn(&mut self, x: Var, value: f64, grad: Tensor<T>) -> Result<Var> {
        if grad.shape() != self.value(x).shape() {
            return Err(Error::Shape("scalar_fn gradient shape differs from its input".into()));
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(T::from_f64(value)), Op::Scalar { x, grad }, needs))
    }

    /// Hash of every branch decision recorded so far: relu input signs and
    /// pooling winners. Two evaluations of the same graph with equal
    /// fingerprints lie on the same smooth piece.
    pub fn branch_fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => {
                    for v in self.value(*x).data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool2 { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.value(output).len() != 1 {
            return Err(Error::Shape("backward needs a scalar output".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let needs: Vec<bool> = self.nodes.iter().map(|n| n.needs_grad).collect();
        grads[output.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Conv2d { x, w, b, cols } => {
                    let (dx, dw, db) = kernels::conv2d_backward(
                        self.value(*x).shape(),
                        self.value(*w),
                        cols,
                        &g,
                        self.needs(*x),
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut grads, &needs, *x, dx);
                    }
                    accumulate(&mut grads, &needs, *w, dw);
                    accumulate(&mut grads, &needs, *b, db);
                }
                Op::MaxPool2 { x, argmax } => {
                    let dx = kernels::maxpool2_backward(self.value(*x).shape(), argmax, &g);
                    accumulate(&mut grads, &needs, *x, dx);
                }
                Op::UpConv2 { x, w, b, xmat } => {
                    let (dx, dw, db) = kernels::upconv2_backward(
                        self.value(*x).shape(),
                        self.value(*w),
                        xmat,
                        &g,
                        self.needs(*x),
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut grads, &needs, *x, dx);
                    }
                    accumulate(&mut grads, &needs, *w, dw);
                    accumulate(&mut grads, &needs, *b, db);
                }
                Op::Relu { x } => {
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(self.value(*x).data()) {
                        if v <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    accumulate(&mut grads, &needs, *x, dx);
                }
                Op::Sigmoid { x } => {
                    let mut dx = g;
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d = *d * y * (T::one() - y);
                    }
                    accumulate(&mut grads, &needs, *x, dx);
                }
                Op::Concat { a, b } => {
                    let [n, ca, h, w] = self.value(*a).shape();
                    let cb = self.value(*b).shape()[1];
                    let hw = h * w;
                    let mut da = Vec::with_capacity(n * ca * hw);
                    let mut db = Vec::with_capacity(n * cb * hw);
                    for s in 0..n {
                        let sample = g.sample(s);
                        da.extend_from_slice(&sample[..ca * hw]);
                        db.extend_from_slice(&sample[ca * hw..]);
                    }
                    accumulate(&mut grads, &needs, *a, Tensor::from_vec([n, ca, h, w], da)?);
                    accumulate(&mut grads, &needs, *b, Tensor::from_vec([n, cb, h, w], db)?);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, &needs, *a, g.clone());
                    accumulate(&mut grads, &needs, *b, g);
                }
                Op::Dot { x, weights } => {
                    let scale = g.item();
                    accumulate(&mut grads, &needs, *x, weights.map(|w| w * scale));
                }
                Op::Scalar { x, grad } => {
                    let scale = g.item();
                    accumulate(&mut grads, &needs, *x, grad.map(|w| w * scale));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], needs: &[bool], v: Var, g: Tensor<T>) {
    if !needs[v.0] {
        return;
    }
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Result of [`Tape::backward`]; only leaves that take gradients keep one.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
