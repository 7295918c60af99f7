//! Softmax, leaky ReLU and the MSE training loss.

use crate::error::{Error, Result};
use crate::tensor::graph::{accumulate, Graph, Var};
use crate::tensor::{strides_of, Element, Tensor};

/// Enumerates element offsets for iterating a shape restricted to `axes`
/// (inner) with the remaining axes (outer) fixed per group.
struct AxisGroups {
    outer_offsets: Vec<usize>,
    inner_offsets: Vec<usize>,
}

fn axis_groups(shape: &[usize], axes: &[usize]) -> AxisGroups {
    let strides = strides_of(shape);
    let in_set = |i: usize| axes.contains(&i);
    let offsets = |pick_inner: bool| -> Vec<usize> {
        let dims: Vec<(usize, usize)> = (0..shape.len())
            .filter(|&i| in_set(i) == pick_inner)
            .map(|i| (shape[i], strides[i]))
            .collect();
        let total: usize = dims.iter().map(|&(d, _)| d).product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; dims.len()];
        let mut off = 0usize;
        for _ in 0..total {
            out.push(off);
            for ax in (0..dims.len()).rev() {
                idx[ax] += 1;
                off += dims[ax].1;
                if idx[ax] < dims[ax].0 {
                    break;
                }
                off -= dims[ax].1 * dims[ax].0;
                idx[ax] = 0;
            }
        }
        out
    };
    AxisGroups {
        outer_offsets: offsets(false),
        inner_offsets: offsets(true),
    }
}

impl<E: Element> Graph<E> {
    /// Exp-normalization over `axes` with max subtraction; each slice over
    /// the axis set sums to one.
    pub fn softmax(&self, a: Var, axes: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let shape = ta.shape().to_vec();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if axes.is_empty()
            || axes
                .iter()
                .any(|&ax| ax >= rank || std::mem::replace(&mut seen[ax], true))
        {
            return Err(Error::InvalidAxes {
                axes: axes.to_vec(),
                shape,
            });
        }
        let groups = axis_groups(&shape, axes);
        let src = ta.data();
        let mut out = vec![E::zero(); src.len()];
        let contiguous_rows = groups.inner_offsets.len() > 1
            && groups
                .inner_offsets
                .windows(2)
                .all(|w| w[1] == w[0] + 1)
            && groups.inner_offsets[0] == 0;
        if contiguous_rows {
            let cols = groups.inner_offsets.len();
            for &base in &groups.outer_offsets {
                softmax_row(&src[base..base + cols], &mut out[base..base + cols]);
            }
        } else {
            let mut buf = vec![E::zero(); groups.inner_offsets.len()];
            let mut res = vec![E::zero(); groups.inner_offsets.len()];
            for &base in &groups.outer_offsets {
                for (b, &off) in buf.iter_mut().zip(&groups.inner_offsets) {
                    *b = src[base + off];
                }
                softmax_row(&buf, &mut res);
                for (&r, &off) in res.iter().zip(&groups.inner_offsets) {
                    out[base + off] = r;
                }
            }
        }
        let req = self.requires_grad(a);
        let y = Tensor::from_vec(shape.clone(), out)?;
        let v = self.push(y.clone(), req);
        if req {
            let axes = axes.to_vec();
            self.record(move |nodes| {
                let Some(go) = nodes[v.0].grad.clone() else {
                    return;
                };
                let groups = axis_groups(y.shape(), &axes);
                let gd = go.data();
                let yd = y.data();
                let mut da = vec![E::zero(); yd.len()];
                for &base in &groups.outer_offsets {
                    let mut dot = E::zero();
                    for &off in &groups.inner_offsets {
                        dot += gd[base + off] * yd[base + off];
                    }
                    for &off in &groups.inner_offsets {
                        let i = base + off;
                        da[i] = yd[i] * (gd[i] - dot);
                    }
                }
                accumulate(
                    &mut nodes[a.0].grad,
                    Tensor::from_vec(y.shape().to_vec(), da).expect("size"),
                );
            });
        }
        Ok(v)
    }

    /// x if x >= 0 else slope*x; the subgradient at 0 is 1.
    pub fn leaky_relu(&self, a: Var, slope: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::Invalid(format!(
                "leaky_relu slope must be in [0, 1), got {slope}"
            )));
        }
        let ta = self.value(a);
        let s = E::from_f64(slope);
        let out = ta.map(|x| if x >= E::zero() { x } else { x * s });
        let req = self.requires_grad(a);
        let v = self.push(out, req);
        if req {
            self.record(move |nodes| {
                let Some(go) = nodes[v.0].grad.clone() else {
                    return;
                };
                let da: Vec<E> = go
                    .data()
                    .iter()
                    .zip(ta.data())
                    .map(|(&g, &x)| if x >= E::zero() { g } else { g * s })
                    .collect();
                accumulate(
                    &mut nodes[a.0].grad,
                    Tensor::from_vec(ta.shape().to_vec(), da).expect("size"),
                );
            });
        }
        Ok(v)
    }

    /// Mean over all elements of the squared difference, as a scalar node.
    pub fn mse_loss(&self, pred: Var, target: Var) -> Result<Var> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape() != tt.shape() {
            return Err(Error::ShapeMismatch {
                left: tp.shape().to_vec(),
                right: tt.shape().to_vec(),
            });
        }
        let count = E::from_f64(tp.numel() as f64);
        let mut acc = E::zero();
        for (&p, &t) in tp.data().iter().zip(tt.data()) {
            let d = p - t;
            acc += d * d;
        }
        let (rp, rt) = (self.requires_grad(pred), self.requires_grad(target));
        let req = rp || rt;
        let v = self.push(Tensor::scalar(acc / count), req);
        if req {
            self.record(move |nodes| {
                let Some(go) = nodes[v.0].grad.clone() else {
                    return;
                };
                let scale = go.item() * E::from_f64(2.0) / count;
                let dp: Vec<E> = tp
                    .data()
                    .iter()
                    .zip(tt.data())
                    .map(|(&p, &t)| scale * (p - t))
                    .collect();
                if rp {
                    accumulate(
                        &mut nodes[pred.0].grad,
                        Tensor::from_vec(tp.shape().to_vec(), dp.clone()).expect("size"),
                    );
                }
                if rt {
                    accumulate(
                        &mut nodes[target.0].grad,
                        Tensor::from_vec(tt.shape().to_vec(), dp.iter().map(|&x| -x).collect())
                            .expect("size"),
                    );
                }
            });
        }
        Ok(v)
    }
}

fn softmax_row<E: Element>(row: &[E], out: &mut [E]) {
    let mut m = row[0];
    for &x in row {
        if x > m {
            m = x;
        }
    }
    let mut sum = E::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x - m).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}
