//! Tape-based reverse-mode autodiff over whole tensors.
//!
//! A [`Graph`] records one forward pass; [`Graph::backward`] replays the
//! tape in exact reverse order. Leaves created with `requires_grad` receive
//! their total derivative; gradients accumulate additively. Ops whose inputs
//! all have `requires_grad == false` record nothing, so a graph built from
//! frozen leaves is a plain forward evaluator.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::{strides_of, Element, Tensor};

/// Handle to a node in one specific [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node<E: Element> {
    pub value: Tensor<E>,
    pub grad: Option<Tensor<E>>,
    pub requires_grad: bool,
    pub is_leaf: bool,
}

type BackFn<E> = Box<dyn Fn(&mut [Node<E>])>;

struct GraphInner<E: Element> {
    nodes: Vec<Node<E>>,
    tape: Vec<BackFn<E>>,
}

pub struct Graph<E: Element> {
    inner: RefCell<GraphInner<E>>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adds `delta` into a gradient slot, taking ownership when the slot is empty.
pub(crate) fn accumulate<E: Element>(slot: &mut Option<Tensor<E>>, delta: Tensor<E>) {
    match slot {
        None => *slot = Some(delta),
        Some(t) => {
            debug_assert_eq!(t.shape(), delta.shape());
            let dst = t.data_mut();
            for (x, y) in dst.iter_mut().zip(delta.data()) {
                *x += *y;
            }
        }
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(GraphInner {
                nodes: Vec::new(),
                tape: Vec::new(),
            }),
        }
    }

    /// Enters a tensor as a leaf node.
    pub fn leaf(&self, value: Tensor<E>, requires_grad: bool) -> Var {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            is_leaf: true,
        });
        Var(inner.nodes.len() - 1)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&self, value: Tensor<E>) -> Var {
        self.leaf(value, false)
    }

    pub(crate) fn push(&self, value: Tensor<E>, requires_grad: bool) -> Var {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            is_leaf: false,
        });
        Var(inner.nodes.len() - 1)
    }

    pub(crate) fn record(&self, f: impl Fn(&mut [Node<E>]) + 'static) {
        self.inner.borrow_mut().tape.push(Box::new(f));
    }

    /// Value of a node (shared storage, cheap).
    pub fn value(&self, v: Var) -> Tensor<E> {
        self.inner.borrow().nodes[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.inner.borrow().nodes[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.inner.borrow().nodes[v.0].requires_grad
    }

    /// Gradient of a node, populated by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<Tensor<E>> {
        self.inner.borrow().nodes[v.0].grad.clone()
    }

    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    /// Reverse pass from a scalar loss. Every `requires_grad` leaf ends up
    /// with a gradient (zeros when the loss does not depend on it).
    pub fn backward(&self, loss: Var) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        let loss_shape = inner.nodes[loss.0].value.shape().to_vec();
        if inner.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Invalid(format!(
                "backward requires a scalar loss, got shape {loss_shape:?}"
            )));
        }
        accumulate(
            &mut inner.nodes[loss.0].grad,
            Tensor::full(&loss_shape, E::one()),
        );
        let GraphInner { nodes, tape } = &mut *inner;
        for f in tape.iter().rev() {
            f(nodes);
        }
        for node in nodes.iter_mut() {
            if node.is_leaf && node.requires_grad && node.grad.is_none() {
                node.grad = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(())
    }

    // ---- elementwise ----

    fn binary(
        &self,
        a: Var,
        b: Var,
        f: impl Fn(E, E) -> E,
        back: impl Fn(&Tensor<E>, &Tensor<E>, &Tensor<E>, bool, bool) -> (Option<Tensor<E>>, Option<Tensor<E>>)
            + 'static,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let out: Vec<E> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let (ra, rb) = (self.requires_grad(a), self.requires_grad(b));
        let req = ra || rb;
        let v = self.push(Tensor::from_vec(ta.shape().to_vec(), out)?, req);
        if req {
            self.record(move |nodes| {
                let Some(go) = nodes[v.0].grad.clone() else {
                    return;
                };
                let (da, db) = back(&go, &ta, &tb, ra, rb);
                if let Some(d) = da {
                    accumulate(&mut nodes[a.0].grad, d);
                }
                if let Some(d) = db {
                    accumulate(&mut nodes[b.0].grad, d);
                }
            });
        }
        Ok(v)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            a,
            b,
            |x, y| x + y,
            |go, _, _, ra, rb| {
                (
                    ra.then(|| go.clone()),
                    rb.then(|| go.clone()),
                )
            },
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            a,
            b,
            |x, y| x - y,
            |go, _, _, ra, rb| {
                (
                    ra.then(|| go.clone()),
                    rb.then(|| go.map(|g| -g)),
                )
            },
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            a,
            b,
            |x, y| x * y,
            |go, ta, tb, ra, rb| {
                let prod = |other: &Tensor<E>| {
                    Tensor::from_vec(
                        go.shape().to_vec(),
                        go.data()
                            .iter()
                            .zip(other.data())
                            .map(|(&g, &o)| g * o)
                            .collect(),
                    )
                    .expect("same shape")
                };
                (ra.then(|| prod(tb)), rb.then(|| prod(ta)))
            },
        )
    }

    /// Multiply by a scalar.
    pub fn scale(&self, a: Var, s: E) -> Var {
        let ta = self.value(a);
        let out = ta.map(|x| x * s);
        let req = self.requires_grad(a);
        let v = self.push(out, req);
        if req {
            self.record(move |nodes| {
                let Some(go) = nodes[v.0].grad.clone() else {
                    return;
                };
                accumulate(&mut nodes[a.0].grad, go.map(|g| g * s));
            });
        }
        v
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&self, a: Var) -> Var {
        let ta = self.value(a);
        let mut acc = E::zero();
        for &x in ta.data() {
            acc += x;
        }
        let req = self.requires_grad(a);
        let v = self.push(Tensor::scalar(acc), req);
        if req {
            let in_shape = ta.shape().to_vec();
            self.record(move |nodes| {
                let Some(go) = nodes[v.0].grad.clone() else {
                    return;
                };
                accumulate(&mut nodes[a.0].grad, Tensor::full(&in_shape, go.item()));
            });
        }
        v
    }

    // ---- movement ----

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let out = ta.reshaped(shape)?;
        let req = self.requires_grad(a);
        let v = self.push(out, req);
        if req {
            let in_shape = ta.shape().to_vec();
            self.record(move |nodes| {
                let Some(go) = nodes[v.0].grad.clone() else {
                    return;
                };
                accumulate(
                    &mut nodes[a.0].grad,
                    go.reshaped(&in_shape).expect("same numel"),
                );
            });
        }
        Ok(v)
    }

    pub fn permute(&self, a: Var, perm: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let rank = ta.shape().len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidAxes {
                axes: perm.to_vec(),
                shape: ta.shape().to_vec(),
            });
        }
        let out = permuted_copy(&ta, perm);
        let req = self.requires_grad(a);
        let v = self.push(out, req);
        if req {
            let mut inv = vec![0usize; rank];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            self.record(move |nodes| {
                let Some(go) = nodes[v.0].grad.clone() else {
                    return;
                };
                accumulate(&mut nodes[a.0].grad, permuted_copy(&go, &inv));
            });
        }
        Ok(v)
    }

    /// Contiguous slice `[start, start+len)` along one axis.
    pub fn narrow(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let shape = ta.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::Invalid(format!(
                "narrow [{start}, {start}+{len}) on axis {axis} of shape {shape:?}"
            )));
        }
        let out = narrow_copy(&ta, axis, start, len);
        let req = self.requires_grad(a);
        let v = self.push(out, req);
        if req {
            self.record(move |nodes| {
                let Some(go) = nodes[v.0].grad.clone() else {
                    return;
                };
                if nodes[a.0].grad.is_none() {
                    nodes[a.0].grad = Some(Tensor::zeros(&shape));
                }
                let slot = nodes[a.0].grad.as_mut().expect("just set");
                scatter_add_region(slot, axis, start, &go);
            });
        }
        Ok(v)
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Invalid("concat of zero tensors".into()));
        }
        let tensors: Vec<Tensor<E>> = parts.iter().map(|&p| self.value(p)).collect();
        let first = tensors[0].shape().to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidAxes {
                axes: vec![axis],
                shape: first,
            });
        }
        let mut total = 0usize;
        for t in &tensors {
            let s = t.shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    left: first.clone(),
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let inner: usize = first[axis + 1..].iter().product();
        let outer: usize = first[..axis].iter().product();
        let mut out = vec![E::zero(); out_shape.iter().product()];
        let out_row = total * inner;
        let mut off = 0usize;
        for t in &tensors {
            let seg = t.shape()[axis] * inner;
            let src = t.data();
            for o in 0..outer {
                out[o * out_row + off..o * out_row + off + seg]
                    .copy_from_slice(&src[o * seg..(o + 1) * seg]);
            }
            off += seg;
        }
        let reqs: Vec<bool> = parts.iter().map(|&p| self.requires_grad(p)).collect();
        let req = reqs.iter().any(|&r| r);
        let v = self.push(Tensor::from_vec(out_shape, out)?, req);
        if req {
            let parts = parts.to_vec();
            let lens: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
            self.record(move |nodes| {
                let Some(go) = nodes[v.0].grad.clone() else {
                    return;
                };
                let mut start = 0usize;
                for ((&p, &len), &r) in parts.iter().zip(&lens).zip(&reqs) {
                    if r {
                        let piece = narrow_copy(&go, axis, start, len);
                        accumulate(&mut nodes[p.0].grad, piece);
                    }
                    start += len;
                }
            });
        }
        Ok(v)
    }
}

/// Materializes `src` with axes reordered so output axis `i` is input axis
/// `perm[i]`.
pub(crate) fn permuted_copy<E: Element>(src: &Tensor<E>, perm: &[usize]) -> Tensor<E> {
    let in_shape = src.shape();
    let rank = in_shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    if rank == 0 {
        return src.clone();
    }
    let in_strides = strides_of(in_shape);
    // stride of output axis i in the input buffer
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let data = src.data();
    let mut out = Vec::with_capacity(src.numel());
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    let n = src.numel();
    for _ in 0..n {
        out.push(data[off]);
        // odometer increment from the last output axis
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Tensor::from_vec(out_shape, out).expect("permute preserves numel")
}

pub(crate) fn narrow_copy<E: Element>(
    src: &Tensor<E>,
    axis: usize,
    start: usize,
    len: usize,
) -> Tensor<E> {
    let shape = src.shape();
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let src_row = shape[axis] * inner;
    let seg = len * inner;
    let mut out = Vec::with_capacity(outer * seg);
    let data = src.data();
    for o in 0..outer {
        let base = o * src_row + start * inner;
        out.extend_from_slice(&data[base..base + seg]);
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = len;
    Tensor::from_vec(out_shape, out).expect("narrow size")
}

fn scatter_add_region<E: Element>(dst: &mut Tensor<E>, axis: usize, start: usize, piece: &Tensor<E>) {
    let shape = dst.shape().to_vec();
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let dst_row = shape[axis] * inner;
    let len = piece.shape()[axis];
    let seg = len * inner;
    let d = dst.data_mut();
    let p = piece.data();
    for o in 0..outer {
        let base = o * dst_row + start * inner;
        for i in 0..seg {
            d[base + i] += p[o * seg + i];
        }
    }
}
