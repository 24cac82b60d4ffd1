use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::kernels::{self, ConvGeometry};
use super::{Element, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddChannel(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    LogSumExp {
        x: usize,
        axis: usize,
    },
    Softmax {
        x: usize,
        axis: usize,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        x: usize,
        axis: usize,
        start: usize,
    },
    Upsample2x(usize),
    Dropout {
        x: usize,
        mask: Vec<T>,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeometry,
    },
    Sum(usize),
    /// Scalar-valued op whose local gradient was computed during the forward pass.
    Fused {
        x: usize,
        grad: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Linear record of operations; backward replays it in exact reverse.
pub struct Tape<T: Element = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

/// Gradients produced by [`Tape::backward`], addressed by the leaf's [`Var`].
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.index).and_then(Option::take)
    }
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::RankMismatch {
            op,
            expected: a.len(),
            got: b.len(),
        });
    }
    for (axis, (&x, &y)) in a.iter().zip(b).enumerate() {
        if x != y {
            return Err(Error::ShapeMismatch {
                op,
                axis,
                expected: x,
                got: y,
            });
        }
    }
    Ok(())
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    /// Drops every recorded node so the tape can be reused for a new pass.
    /// Previously issued handles become foreign.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backward_done = false;
        self.id = NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: receives a gradient on backward.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Detached input: never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.index].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVariable);
        }
        Ok(v.index)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        make: impl FnOnce(usize, usize) -> Op<T>,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        same_shape(op, va.shape(), vb.shape())?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[ia, ib]);
        Ok(self.push(value, make(ia, ib), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, make: impl FnOnce(usize) -> Op<T>) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(f);
        let rg = self.rg(&[ia]);
        Ok(self.push(value, make(ia), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        self.unary(a, |x| x * s, |i| Op::Scale(i, s))
    }

    /// Adds a per-channel bias `[C]` to an `[N, C, H, W]` tensor.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.idx(x)?, self.idx(bias)?);
        let xv = &self.nodes[ix].value;
        let (_, c, h, w) = xv.dims4("add_channel_bias")?;
        same_shape("add_channel_bias", &[c], self.nodes[ib].value.shape())?;
        let b = self.nodes[ib].value.data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[(i / (h * w)) % c])
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[ix, ib]);
        Ok(self.push(value, Op::AddChannel(ix, ib), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, kernels::sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, T::tanh, Op::Tanh)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, T::exp, Op::Exp)
    }

    /// Natural log. Debug builds reject non-positive inputs instead of
    /// producing NaN.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        if cfg!(debug_assertions) {
            if let Some((index, v)) = self.nodes[ia]
                .value
                .data()
                .iter()
                .enumerate()
                .find(|(_, v)| v.partial_cmp(&&T::zero()) != Some(std::cmp::Ordering::Greater))
            {
                return Err(Error::NonPositiveLog {
                    index,
                    value: v.as_f64(),
                });
            }
        }
        self.unary(a, T::ln, Op::Log)
    }

    pub fn logsumexp(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = kernels::logsumexp(&self.nodes[ia].value, axis)?;
        let rg = self.rg(&[ia]);
        Ok(self.push(value, Op::LogSumExp { x: ia, axis }, rg))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = kernels::softmax(&self.nodes[ia].value, axis)?;
        let rg = self.rg(&[ia]);
        Ok(self.push(value, Op::Softmax { x: ia, axis }, rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let ids = inputs.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>>>()?;
        let first = ids
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let base = self.nodes[*first].value.shape().to_vec();
        let (outer, _, inner) = kernels::axis_split(&base, axis, "concat")?;
        let mut total = 0;
        for &i in &ids {
            let s = self.nodes[i].value.shape();
            if s.len() != base.len() {
                return Err(Error::RankMismatch {
                    op: "concat",
                    expected: base.len(),
                    got: s.len(),
                });
            }
            for (ax, (&a, &b)) in base.iter().zip(s).enumerate() {
                if ax != axis && a != b {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        axis: ax,
                        expected: a,
                        got: b,
                    });
                }
            }
            total += s[axis];
        }
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in &ids {
                let v = &self.nodes[i].value;
                let len = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(&ids);
        Ok(self.push(value, Op::Concat { inputs: ids, axis }, rg))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let (outer, n, inner) = kernels::axis_split(v.shape(), axis, "slice")?;
        if start + len > n {
            return Err(Error::ShapeMismatch {
                op: "slice",
                axis,
                expected: n,
                got: start + len,
            });
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&v.data()[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(&[ia]);
        Ok(self.push(value, Op::Slice { x: ia, axis, start }, rg))
    }

    pub fn upsample2x(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = kernels::upsample2x(&self.nodes[ia].value)?;
        let rg = self.rg(&[ia]);
        Ok(self.push(value, Op::Upsample2x(ia), rg))
    }

    /// Inverted dropout: kept activations are scaled by `1 / (1 - rate)` at
    /// train time so evaluation is the identity.
    pub fn dropout(&mut self, a: Var, rate: f64, train: bool, rng: &mut impl Rng) -> Result<Var> {
        let ia = self.idx(a)?;
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let v = &self.nodes[ia].value;
        let mask: Vec<T> = (0..v.numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let data = v.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(&[ia]);
        Ok(self.push(value, Op::Dropout { x: ia, mask }, rg))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: &ConvGeometry) -> Result<Var> {
        let ix = self.idx(x)?;
        let iw = self.idx(w)?;
        let ib = b.map(|b| self.idx(b)).transpose()?;
        let value = kernels::conv2d_forward(
            &self.nodes[ix].value,
            &self.nodes[iw].value,
            ib.map(|i| &self.nodes[i].value),
            geom,
        )?;
        let mut ids = vec![ix, iw];
        ids.extend(ib);
        let rg = self.rg(&ids);
        Ok(self.push(
            value,
            Op::Conv2d {
                x: ix,
                w: iw,
                b: ib,
                geom: geom.clone(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.nodes[ia].value.data().iter().fold(T::zero(), |acc, &v| acc + v);
        let rg = self.rg(&[ia]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(ia), rg))
    }

    /// Records a scalar-valued op computed outside the tape together with its
    /// gradient with respect to `x`.
    pub fn fused_scalar(&mut self, x: Var, value: T, grad: Tensor<T>) -> Result<Var> {
        let ix = self.idx(x)?;
        same_shape("fused", self.nodes[ix].value.shape(), grad.shape())?;
        let rg = self.rg(&[ix]);
        Ok(self.push(Tensor::scalar(value), Op::Fused { x: ix, grad }, rg))
    }

    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        let il = self.idx(loss)?;
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let lv = &self.nodes[il].value;
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        if !self.nodes[il].requires_grad {
            return Err(Error::DetachedLoss);
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(vec![T::one()]);
        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let acc = |j: usize, grads: &mut Vec<Option<Vec<T>>>, f: &dyn Fn(usize) -> T| {
                if !self.nodes[j].requires_grad {
                    return;
                }
                let n = self.nodes[j].value.numel();
                let slot = grads[j].get_or_insert_with(|| vec![T::zero(); n]);
                for (k, s) in slot.iter_mut().enumerate() {
                    *s = *s + f(k);
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    acc(*a, &mut grads, &|k| g[k]);
                    acc(*b, &mut grads, &|k| g[k]);
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut grads, &|k| g[k]);
                    acc(*b, &mut grads, &|k| -g[k]);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                    acc(*a, &mut grads, &|k| g[k] * vb[k]);
                    acc(*b, &mut grads, &|k| g[k] * va[k]);
                }
                Op::Scale(a, s) => acc(*a, &mut grads, &|k| g[k] * *s),
                Op::AddChannel(x, b) => {
                    acc(*x, &mut grads, &|k| g[k]);
                    let (_, c, h, w) = self.nodes[*x].value.dims4("add_channel_bias")?;
                    let mut gb = vec![T::zero(); c];
                    for (k, &v) in g.iter().enumerate() {
                        let ch = (k / (h * w)) % c;
                        gb[ch] = gb[ch] + v;
                    }
                    acc(*b, &mut grads, &|k| gb[k]);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    acc(*a, &mut grads, &|k| g[k] * y[k] * (T::one() - y[k]));
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    acc(*a, &mut grads, &|k| g[k] * (T::one() - y[k] * y[k]));
                }
                Op::Exp(a) => {
                    let y = node.value.data();
                    acc(*a, &mut grads, &|k| g[k] * y[k]);
                }
                Op::Log(a) => {
                    let x = self.nodes[*a].value.data();
                    acc(*a, &mut grads, &|k| g[k] / x[k]);
                }
                Op::LogSumExp { x, axis } => {
                    let xv = &self.nodes[*x].value;
                    let (_, len, inner) = kernels::axis_split(xv.shape(), *axis, "logsumexp")?;
                    let (xd, y) = (xv.data(), node.value.data());
                    acc(*x, &mut grads, &|k| {
                        let o = k / (len * inner);
                        let r = o * inner + k % inner;
                        g[r] * (xd[k] - y[r]).exp()
                    });
                }
                Op::Softmax { x, axis } => {
                    let (_, len, inner) = kernels::axis_split(node.value.shape(), *axis, "softmax")?;
                    let y = node.value.data();
                    let mut dot = vec![T::zero(); y.len() / len];
                    for k in 0..y.len() {
                        let r = (k / (len * inner)) * inner + k % inner;
                        dot[r] = dot[r] + g[k] * y[k];
                    }
                    acc(*x, &mut grads, &|k| {
                        let r = (k / (len * inner)) * inner + k % inner;
                        y[k] * (g[k] - dot[r])
                    });
                }
                Op::Concat { inputs, axis } => {
                    let shape = node.value.shape();
                    let (_, total, inner) = kernels::axis_split(shape, *axis, "concat")?;
                    let mut offset = 0;
                    for &j in inputs {
                        let n = self.nodes[j].value.shape()[*axis];
                        acc(j, &mut grads, &|k| {
                            let o = k / (n * inner);
                            let r = k % (n * inner);
                            g[o * total * inner + offset * inner + r]
                        });
                        offset += n;
                    }
                }
                Op::Slice { x, axis, start } => {
                    let (_, n, inner) = kernels::axis_split(self.nodes[*x].value.shape(), *axis, "slice")?;
                    let len = node.value.shape()[*axis];
                    acc(*x, &mut grads, &|k| {
                        let o = k / (n * inner);
                        let a = (k / inner) % n;
                        if a < *start || a >= start + len {
                            T::zero()
                        } else {
                            g[(o * len + a - start) * inner + k % inner]
                        }
                    });
                }
                Op::Upsample2x(a) => {
                    let gt = Tensor::new(node.value.shape().to_vec(), g)?;
                    let back = kernels::upsample2x_backward(&gt)?;
                    let bd = back.data();
                    acc(*a, &mut grads, &|k| bd[k]);
                    continue;
                }
                Op::Dropout { x, mask } => acc(*x, &mut grads, &|k| g[k] * mask[k]),
                Op::Conv2d { x, w, b, geom } => {
                    let gt = Tensor::new(node.value.shape().to_vec(), g)?;
                    let (gx, gw, gb) =
                        kernels::conv2d_backward(&self.nodes[*x].value, &self.nodes[*w].value, &gt, geom)?;
                    acc(*x, &mut grads, &|k| gx.data()[k]);
                    acc(*w, &mut grads, &|k| gw.data()[k]);
                    if let Some(b) = b {
                        acc(*b, &mut grads, &|k| gb.data()[k]);
                    }
                    continue;
                }
                Op::Sum(a) => acc(*a, &mut grads, &|_| g[0]),
                Op::Fused { x, grad } => {
                    let gd = grad.data();
                    acc(*x, &mut grads, &|k| g[0] * gd[k]);
                }
            }
        }

        let mut out = Vec::with_capacity(self.nodes.len());
        for (node, g) in self.nodes.iter().zip(grads) {
            out.push(match (&node.op, g) {
                (Op::Leaf, Some(g)) if node.requires_grad => Some(Tensor::new(node.value.shape().to_vec(), g)?),
                _ => None,
            });
        }
        Ok(Gradients {
            tape: self.id,
            grads: out,
        })
    }
}
