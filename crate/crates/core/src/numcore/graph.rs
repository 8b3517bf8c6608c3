//! Reverse-mode differentiation over a tape of recorded primitive operations.
//!
//! Every forward computation builds a [`Graph`]: an append-only list of nodes
//! where each node stores its value and the operation that produced it. Because
//! nodes are appended after their operands, the list is already in topological
//! order and `backward` replays it in reverse. Parameters enter the graph through
//! [`Graph::param`]; after `backward` their gradients are added into the owning
//! [`ParamStore`] by [`Graph::accumulate_into`].

use std::collections::HashMap;

use super::param::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Additive surrogate for -inf used to suppress masked logits.
pub const MASK_NEG: f64 = -1e30;

/// Stabiliser added to the variance in [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add {
        a: Var,
        b: Var,
        bmap: Option<Vec<usize>>,
    },
    Mul {
        a: Var,
        b: Var,
        bmap: Option<Vec<usize>>,
    },
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Map {
        x: Var,
        deriv: Vec<T>,
    },
    LayerNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    Softmax(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Transpose(Var),
    MeanPool {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    Conv1d {
        x: Var,
        k: Var,
        dilation: usize,
    },
    WeightedNll {
        probs: Var,
        labels: Vec<usize>,
        weights: Vec<T>,
        floor: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
    param: Option<ParamId>,
}

/// Record of one forward pass.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    backpropagated: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// For each flat index of `a_shape`, the flat index in `b_shape` it broadcasts from.
fn broadcast_map(op: &'static str, a_shape: &[usize], b_shape: &[usize]) -> Result<Option<Vec<usize>>> {
    if a_shape == b_shape {
        return Ok(None);
    }
    if a_shape.len() != b_shape.len() || a_shape.iter().zip(b_shape).any(|(&a, &b)| b != a && b != 1) {
        return Err(Error::shape(op, a_shape, b_shape));
    }
    let rank = a_shape.len();
    let mut bstride = vec![0usize; rank];
    let mut s = 1;
    for d in (0..rank).rev() {
        bstride[d] = if b_shape[d] == 1 { 0 } else { s };
        s *= b_shape[d];
    }
    let n: usize = a_shape.iter().product();
    let mut idx = vec![0usize; rank];
    let mut map = Vec::with_capacity(n);
    for _ in 0..n {
        map.push(idx.iter().zip(&bstride).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < a_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(Some(map))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            backpropagated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` objective with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Constant input.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf with explicit gradient tracking.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Binds a stored parameter. Repeated binds of the same id return the same node,
    /// so a weight shared by several sub-computations collects all of their gradients.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self
            .value(a)
            .matmul(self.value(b))
            .map_err(|_| Error::shape("matmul", self.shape(a), self.shape(b)))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Elementwise `a + b`; `b` may broadcast along size-1 dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bmap = broadcast_map("add", self.shape(a), self.shape(b))?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let data = match &bmap {
            None => av.data().iter().zip(bv).map(|(&x, &y)| x + y).collect(),
            Some(m) => av.data().iter().zip(m).map(|(&x, &j)| x + bv[j]).collect(),
        };
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b, bmap }, rg))
    }

    /// Elementwise `a * b`; `b` may broadcast along size-1 dimensions.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bmap = broadcast_map("mul", self.shape(a), self.shape(b))?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let data = match &bmap {
            None => av.data().iter().zip(bv).map(|(&x, &y)| x * y).collect(),
            Some(m) => av.data().iter().zip(m).map(|(&x, &j)| x * bv[j]).collect(),
        };
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul { a, b, bmap }, rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::tanh);
        let rg = self.rg(x);
        self.push(out, Op::Tanh(x), rg)
    }

    /// Elementwise map with a caller-supplied derivative.
    pub fn map_elementwise(&mut self, x: Var, f: impl Fn(T) -> T, df: impl Fn(T) -> T) -> Var {
        let xv = self.value(x);
        let out = xv.map(&f);
        let deriv = xv.data().iter().map(|&v| df(v)).collect();
        let rg = self.rg(x);
        self.push(out, Op::Map { x, deriv }, rg)
    }

    /// Normalises over the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let width = *xv
            .shape()
            .last()
            .ok_or_else(|| Error::invalid("layer_norm", "rank 0"))?;
        if width == 0 {
            return Err(Error::invalid("layer_norm", "empty last axis"));
        }
        let eps = T::of(LAYER_NORM_EPS);
        let n = T::of(width as f64);
        let mut data = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(xv.len() / width);
        for row in xv.data().chunks(width) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let r = T::one() / (var + eps).sqrt();
            inv_std.push(r);
            data.extend(row.iter().map(|&v| (v - mean) * r));
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::LayerNorm { x, inv_std }, rg))
    }

    /// Softmax over the last axis with masked positions forced to exactly zero.
    ///
    /// `mask` has either one entry per element of `logits` or one entry per
    /// position of the last axis (shared by every row).
    pub fn masked_softmax(&mut self, logits: Var, mask: &[bool]) -> Result<Var> {
        let lv = self.value(logits);
        let width = *lv
            .shape()
            .last()
            .ok_or_else(|| Error::invalid("masked_softmax", "rank 0"))?;
        if mask.len() != lv.len() && mask.len() != width {
            return Err(Error::shape("masked_softmax", lv.shape(), &[mask.len()]));
        }
        let neg = T::of(MASK_NEG);
        let mut data = Vec::with_capacity(lv.len());
        for (r, row) in lv.data().chunks(width).enumerate() {
            let m = if mask.len() == width {
                mask
            } else {
                &mask[r * width..(r + 1) * width]
            };
            if !m.iter().any(|&b| b) {
                return Err(Error::DegenerateMask { row: r });
            }
            let shifted: Vec<T> = row
                .iter()
                .zip(m)
                .map(|(&v, &keep)| if keep { v } else { v + neg })
                .collect();
            let max = shifted.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = shifted.iter().map(|&v| (v - max).exp()).collect();
            let z: T = exps.iter().copied().sum();
            data.extend(
                exps.iter()
                    .zip(m)
                    .map(|(&e, &keep)| if keep { e / z } else { T::zero() }),
            );
        }
        let out = Tensor::new(lv.shape().to_vec(), data)?;
        let rg = self.rg(logits);
        Ok(self.push(out, Op::Softmax(logits), rg))
    }

    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let width = self.shape(logits).last().copied().unwrap_or(0);
        self.masked_softmax(logits, &vec![true; width])
    }

    /// Concatenates tensors that agree on every dimension except `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(
                "concat",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s.iter().enumerate().any(|(d, &n)| d != axis && n != base[d]) {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(shape, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Stacks equally shaped tensors along a new axis inserted at `axis`.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("stack", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis > base.len() {
            return Err(Error::invalid(
                "stack",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut expanded = base.clone();
        expanded.insert(axis, 1);
        let mut reshaped = Vec::with_capacity(parts.len());
        for &p in parts {
            if self.shape(p) != base.as_slice() {
                return Err(Error::shape("stack", &base, self.shape(p)));
            }
            reshaped.push(self.reshape(p, &expanded)?);
        }
        self.concat(&reshaped, axis)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::invalid(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Narrow { x, axis, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transposed()?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    /// Mean over `axis`, keeping it with size 1.
    pub fn mean_pool(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::invalid("mean_pool", format!("axis {axis} of {shape:?}")));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let inv = T::one() / T::of(n as f64);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    data[o * inner + i] = data[o * inner + i] + src[(o * n + j) * inner + i];
                }
            }
        }
        data.iter_mut().for_each(|v| *v = *v * inv);
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let out = Tensor::new(out_shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::MeanPool { x, axis }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    /// Depthwise dilated convolution along time with symmetric zero padding.
    ///
    /// `x` is `[len, channels]`, `kernel` is `[width, channels]` with odd width.
    /// Output row `t` is `sum_j kernel[j] * x[t + (j - (width-1)/2) * dilation]`,
    /// so the output keeps the input length.
    pub fn dilated_conv1d(&mut self, x: Var, kernel: Var, dilation: usize) -> Result<Var> {
        let (len, ch) = self.value(x).dims2()?;
        let (width, kch) = self.value(kernel).dims2()?;
        if kch != ch {
            return Err(Error::shape("dilated_conv1d", self.shape(x), self.shape(kernel)));
        }
        if width % 2 == 0 || dilation == 0 {
            return Err(Error::invalid(
                "dilated_conv1d",
                format!("kernel width must be odd and dilation positive (width {width}, dilation {dilation})"),
            ));
        }
        let half = (width - 1) / 2;
        let xv = self.value(x).data();
        let kv = self.value(kernel).data();
        let mut data = vec![T::zero(); len * ch];
        for t in 0..len {
            for j in 0..width {
                let off = (j as isize - half as isize) * dilation as isize;
                let src = t as isize + off;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let src = src as usize;
                for c in 0..ch {
                    data[t * ch + c] = data[t * ch + c] + kv[j * ch + c] * xv[src * ch + c];
                }
            }
        }
        let out = Tensor::new(vec![len, ch], data)?;
        let rg = self.rg(x) || self.rg(kernel);
        Ok(self.push(out, Op::Conv1d { x, k: kernel, dilation }, rg))
    }

    /// `(1/N) * sum_i weights[i] * -ln(max(probs[i, labels[i]], floor))`.
    ///
    /// Returns the loss node and the number of clamped probabilities.
    pub fn weighted_nll(&mut self, probs: Var, labels: &[usize], weights: &[T], floor: T) -> Result<(Var, usize)> {
        let (n, c) = self.value(probs).dims2()?;
        if labels.len() != n || weights.len() != n {
            return Err(Error::shape("weighted_nll", &[n, c], &[labels.len(), weights.len()]));
        }
        if n == 0 {
            return Err(Error::Empty("weighted_nll batch"));
        }
        let pv = self.value(probs);
        let mut total = T::zero();
        let mut clamped = 0;
        for (i, (&y, &w)) in labels.iter().zip(weights).enumerate() {
            if y >= c {
                return Err(Error::invalid(
                    "weighted_nll",
                    format!("label {y} out of range for {c} classes"),
                ));
            }
            let p = pv.at2(i, y);
            if p.partial_cmp(&floor) != Some(std::cmp::Ordering::Greater) {
                clamped += 1;
            }
            total = total - w * clamp_floor(p, floor).ln();
        }
        let out = Tensor::scalar(total / T::of(n as f64));
        let rg = self.rg(probs);
        let v = self.push(
            out,
            Op::WeightedNll {
                probs,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
                floor,
            },
            rg,
        );
        Ok((v, clamped))
    }

    /// Propagates adjoints from the single-element `loss` back through the tape.
    ///
    /// May run once per graph; a second call returns [`Error::AlreadyBackpropagated`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backpropagated {
            return Err(Error::AlreadyBackpropagated);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar objective, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backpropagated = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn send(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.rg(*a) {
                    self.send(grads, *a, g.matmul(&bv.transposed()?)?);
                }
                if self.rg(*b) {
                    self.send(grads, *b, av.transposed()?.matmul(g)?);
                }
            }
            Op::Add { a, b, bmap } => {
                self.send(grads, *a, g.clone());
                if self.rg(*b) {
                    self.send(grads, *b, reduce_broadcast(g.data(), bmap, self.shape(*b)));
                }
            }
            Op::Mul { a, b, bmap } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.rg(*a) {
                    let data = match bmap {
                        None => g.data().iter().zip(bv).map(|(&d, &y)| d * y).collect(),
                        Some(m) => g.data().iter().zip(m).map(|(&d, &j)| d * bv[j]).collect(),
                    };
                    self.send(grads, *a, Tensor::new(g.shape().to_vec(), data)?);
                }
                if self.rg(*b) {
                    let prod: Vec<T> = g.data().iter().zip(av).map(|(&d, &x)| d * x).collect();
                    self.send(grads, *b, reduce_broadcast(&prod, bmap, self.shape(*b)));
                }
            }
            Op::Scale(x, c) => self.send(grads, *x, g.map(|d| d * *c)),
            Op::Sigmoid(x) => {
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&d, &y)| d * y * (T::one() - y))
                    .collect();
                self.send(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Tanh(x) => {
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&d, &y)| d * (T::one() - y * y))
                    .collect();
                self.send(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Map { x, deriv } => {
                let data = g.data().iter().zip(deriv).map(|(&d, &k)| d * k).collect();
                self.send(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::LayerNorm { x, inv_std } => {
                let width = *out.shape().last().expect("rank >= 1");
                let n = T::of(width as f64);
                let mut data = Vec::with_capacity(out.len());
                for ((dy, y), &r) in g.data().chunks(width).zip(out.data().chunks(width)).zip(inv_std) {
                    let mean_dy = dy.iter().copied().sum::<T>() / n;
                    let mean_dyy = dy.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>() / n;
                    data.extend(dy.iter().zip(y).map(|(&d, &yy)| r * (d - mean_dy - yy * mean_dyy)));
                }
                self.send(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Softmax(x) => {
                let width = *out.shape().last().expect("rank >= 1");
                let mut data = Vec::with_capacity(out.len());
                for (dy, y) in g.data().chunks(width).zip(out.data().chunks(width)) {
                    let dot: T = dy.iter().zip(y).map(|(&a, &b)| a * b).sum();
                    data.extend(dy.iter().zip(y).map(|(&d, &yy)| yy * (d - dot)));
                }
                self.send(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = axis_split(out.shape(), *axis);
                let total = out.shape()[*axis];
                let mut offset = 0;
                for &p in parts {
                    let ps = self.shape(p);
                    let n = ps[*axis];
                    if self.rg(p) {
                        let mut data = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            data.extend_from_slice(&g.data()[base..base + n * inner]);
                        }
                        self.send(grads, p, Tensor::new(ps.to_vec(), data)?);
                    }
                    offset += n;
                }
            }
            Op::Narrow { x, axis, start } => {
                let xs = self.shape(*x).to_vec();
                let (outer, n, inner) = axis_split(&xs, *axis);
                let len = out.shape()[*axis];
                let mut data = vec![T::zero(); xs.iter().product()];
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    let src = o * len * inner;
                    data[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                self.send(grads, *x, Tensor::new(xs, data)?);
            }
            Op::Reshape(x) => {
                let xs = self.shape(*x).to_vec();
                self.send(grads, *x, g.clone().reshape(&xs)?);
            }
            Op::Transpose(x) => self.send(grads, *x, g.transposed()?),
            Op::MeanPool { x, axis } => {
                let xs = self.shape(*x).to_vec();
                let (outer, n, inner) = axis_split(&xs, *axis);
                let inv = T::one() / T::of(n as f64);
                let mut data = vec![T::zero(); xs.iter().product()];
                for o in 0..outer {
                    for j in 0..n {
                        for k in 0..inner {
                            data[(o * n + j) * inner + k] = g.data()[o * inner + k] * inv;
                        }
                    }
                }
                self.send(grads, *x, Tensor::new(xs, data)?);
            }
            Op::Sum(x) => {
                let xs = self.shape(*x).to_vec();
                self.send(grads, *x, Tensor::full(&xs, g.data()[0]));
            }
            Op::Conv1d { x, k, dilation } => {
                let (len, ch) = self.value(*x).dims2()?;
                let (width, _) = self.value(*k).dims2()?;
                let half = (width - 1) / 2;
                let xv = self.value(*x).data();
                let kv = self.value(*k).data();
                let mut dx = vec![T::zero(); len * ch];
                let mut dk = vec![T::zero(); width * ch];
                for t in 0..len {
                    for j in 0..width {
                        let src = t as isize + (j as isize - half as isize) * *dilation as isize;
                        if src < 0 || src >= len as isize {
                            continue;
                        }
                        let src = src as usize;
                        for c in 0..ch {
                            let d = g.data()[t * ch + c];
                            dx[src * ch + c] = dx[src * ch + c] + d * kv[j * ch + c];
                            dk[j * ch + c] = dk[j * ch + c] + d * xv[src * ch + c];
                        }
                    }
                }
                if self.rg(*x) {
                    self.send(grads, *x, Tensor::new(vec![len, ch], dx)?);
                }
                if self.rg(*k) {
                    self.send(grads, *k, Tensor::new(vec![width, ch], dk)?);
                }
            }
            Op::WeightedNll {
                probs,
                labels,
                weights,
                floor,
            } => {
                let pv = self.value(*probs);
                let (n, c) = pv.dims2()?;
                let scale = g.data()[0] / T::of(n as f64);
                let mut data = vec![T::zero(); n * c];
                for (i, (&y, &w)) in labels.iter().zip(weights).enumerate() {
                    let p = pv.at2(i, y);
                    if p > *floor {
                        data[i * c + y] = -scale * w / p;
                    }
                }
                self.send(grads, *probs, Tensor::new(vec![n, c], data)?);
            }
        }
        Ok(())
    }

    /// Adds the gradient of every bound parameter into `store`.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        if !self.backpropagated {
            return Err(Error::Contract("accumulate_into called before backward".into()));
        }
        for (&id, &v) in &self.params {
            if let Some(g) = &self.nodes[v.0].grad {
                store.accumulate_grad(id, g);
            }
        }
        Ok(())
    }
}

fn reduce_broadcast<T: Real>(g: &[T], bmap: &Option<Vec<usize>>, b_shape: &[usize]) -> Tensor<T> {
    match bmap {
        None => Tensor::new(b_shape.to_vec(), g.to_vec()).expect("same shape"),
        Some(m) => {
            let mut out = Tensor::zeros(b_shape);
            let data = out.data_mut();
            for (&d, &j) in g.iter().zip(m) {
                data[j] = data[j] + d;
            }
            out
        }
    }
}

/// `max(p, floor)` that lets NaN through instead of replacing it with `floor`.
pub(crate) fn clamp_floor<T: Real>(p: T, floor: T) -> T {
    if p.is_nan() {
        p
    } else {
        p.max(floor)
    }
}
