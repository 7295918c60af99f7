//! Matrix products and row normalization on the graph.

use crate::error::{Error, Result};
use crate::tensor::graph::{accumulate, Graph, Var};
use crate::tensor::{gemm, Element, Tensor};

/// Norms below this are treated as zero (cosine of a zero patch is 0).
pub const NORM_GUARD: f64 = 1e-12;

fn require_rank2<E: Element>(t: &Tensor<E>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::Invalid(format!(
            "expected a rank-2 tensor, got shape {other:?}"
        ))),
    }
}

impl<E: Element> Graph<E> {
    /// C(m,n) = A(m,k) · B(k,n). Backward: dA = dC·Bᵀ, dB = Aᵀ·dC.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, ka) = require_rank2(&ta)?;
        let (kb, n) = require_rank2(&tb)?;
        if ka != kb {
            return Err(Error::InnerDim {
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let k = ka;
        let mut out = vec![E::zero(); m * n];
        gemm(
            m, k, n,
            E::one(),
            ta.data(), k as isize, 1,
            tb.data(), n as isize, 1,
            E::zero(),
            &mut out, n as isize, 1,
        );
        let (ra, rb) = (self.requires_grad(a), self.requires_grad(b));
        let req = ra || rb;
        let v = self.push(Tensor::from_vec(vec![m, n], out)?, req);
        if req {
            self.record(move |nodes| {
                let Some(go) = nodes[v.0].grad.clone() else {
                    return;
                };
                if ra {
                    // dA(m,k) = go(m,n) · Bᵀ(n,k)
                    let mut da = vec![E::zero(); m * k];
                    gemm(
                        m, n, k,
                        E::one(),
                        go.data(), n as isize, 1,
                        tb.data(), 1, n as isize,
                        E::zero(),
                        &mut da, k as isize, 1,
                    );
                    accumulate(
                        &mut nodes[a.0].grad,
                        Tensor::from_vec(vec![m, k], da).expect("size"),
                    );
                }
                if rb {
                    // dB(k,n) = Aᵀ(k,m) · go(m,n)
                    let mut db = vec![E::zero(); k * n];
                    gemm(
                        k, m, n,
                        E::one(),
                        ta.data(), 1, k as isize,
                        go.data(), n as isize, 1,
                        E::zero(),
                        &mut db, n as isize, 1,
                    );
                    accumulate(
                        &mut nodes[b.0].grad,
                        Tensor::from_vec(vec![k, n], db).expect("size"),
                    );
                }
            });
        }
        Ok(v)
    }

    /// C(m,n) = Aᵀ·B for A(k,m), B(k,n), without materializing Aᵀ.
    pub fn matmul_tn(&self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ka, m) = require_rank2(&ta)?;
        let (kb, n) = require_rank2(&tb)?;
        if ka != kb {
            return Err(Error::InnerDim {
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let k = ka;
        let mut out = vec![E::zero(); m * n];
        gemm(
            m, k, n,
            E::one(),
            ta.data(), 1, m as isize,
            tb.data(), n as isize, 1,
            E::zero(),
            &mut out, n as isize, 1,
        );
        let (ra, rb) = (self.requires_grad(a), self.requires_grad(b));
        let req = ra || rb;
        let v = self.push(Tensor::from_vec(vec![m, n], out)?, req);
        if req {
            self.record(move |nodes| {
                let Some(go) = nodes[v.0].grad.clone() else {
                    return;
                };
                if ra {
                    // dA(k,m) = B(k,n) · goᵀ(n,m)
                    let mut da = vec![E::zero(); k * m];
                    gemm(
                        k, n, m,
                        E::one(),
                        tb.data(), n as isize, 1,
                        go.data(), 1, n as isize,
                        E::zero(),
                        &mut da, m as isize, 1,
                    );
                    accumulate(
                        &mut nodes[a.0].grad,
                        Tensor::from_vec(vec![k, m], da).expect("size"),
                    );
                }
                if rb {
                    // dB(k,n) = A(k,m) · go(m,n)
                    let mut db = vec![E::zero(); k * n];
                    gemm(
                        k, m, n,
                        E::one(),
                        ta.data(), m as isize, 1,
                        go.data(), n as isize, 1,
                        E::zero(),
                        &mut db, n as isize, 1,
                    );
                    accumulate(
                        &mut nodes[b.0].grad,
                        Tensor::from_vec(vec![k, n], db).expect("size"),
                    );
                }
            });
        }
        Ok(v)
    }

    /// C(m,n) = A·Bᵀ for A(m,k), B(n,k), without materializing Bᵀ.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, ka) = require_rank2(&ta)?;
        let (n, kb) = require_rank2(&tb)?;
        if ka != kb {
            return Err(Error::InnerDim {
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let k = ka;
        let mut out = vec![E::zero(); m * n];
        gemm(
            m, k, n,
            E::one(),
            ta.data(), k as isize, 1,
            tb.data(), 1, k as isize,
            E::zero(),
            &mut out, n as isize, 1,
        );
        let (ra, rb) = (self.requires_grad(a), self.requires_grad(b));
        let req = ra || rb;
        let v = self.push(Tensor::from_vec(vec![m, n], out)?, req);
        if req {
            self.record(move |nodes| {
                let Some(go) = nodes[v.0].grad.clone() else {
                    return;
                };
                if ra {
                    // dA(m,k) = go(m,n) · B(n,k)
                    let mut da = vec![E::zero(); m * k];
                    gemm(
                        m, n, k,
                        E::one(),
                        go.data(), n as isize, 1,
                        tb.data(), k as isize, 1,
                        E::zero(),
                        &mut da, k as isize, 1,
                    );
                    accumulate(
                        &mut nodes[a.0].grad,
                        Tensor::from_vec(vec![m, k], da).expect("size"),
                    );
                }
                if rb {
                    // dB(n,k) = goᵀ(n,m) · A(m,k)
                    let mut db = vec![E::zero(); n * k];
                    gemm(
                        n, m, k,
                        E::one(),
                        go.data(), 1, n as isize,
                        ta.data(), k as isize, 1,
                        E::zero(),
                        &mut db, k as isize, 1,
                    );
                    accumulate(
                        &mut nodes[b.0].grad,
                        Tensor::from_vec(vec![n, k], db).expect("size"),
                    );
                }
            });
        }
        Ok(v)
    }

    /// Scales each row of a (rows, cols) tensor to unit L2 norm. Rows with
    /// norm below [`NORM_GUARD`] map to zero (and get zero gradient).
    pub fn l2_normalize_rows(&self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (rows, cols) = require_rank2(&ta)?;
        let guard = E::from_f64(NORM_GUARD);
        let src = ta.data();
        let mut out = vec![E::zero(); rows * cols];
        let mut norms = vec![E::zero(); rows];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mut sq = E::zero();
            for &x in row {
                sq += x * x;
            }
            let n = sq.sqrt();
            norms[r] = n;
            if n >= guard {
                for (o, &x) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                    *o = x / n;
                }
            }
        }
        let req = self.requires_grad(a);
        let y = Tensor::from_vec(vec![rows, cols], out)?;
        let v = self.push(y.clone(), req);
        if req {
            self.record(move |nodes| {
                let Some(go) = nodes[v.0].grad.clone() else {
                    return;
                };
                let gd = go.data();
                let yd = y.data();
                let mut da = vec![E::zero(); rows * cols];
                for r in 0..rows {
                    let n = norms[r];
                    if n < guard {
                        continue;
                    }
                    let gr = &gd[r * cols..(r + 1) * cols];
                    let yr = &yd[r * cols..(r + 1) * cols];
                    let mut dot = E::zero();
                    for (&g, &yv) in gr.iter().zip(yr) {
                        dot += g * yv;
                    }
                    for ((d, &g), &yv) in da[r * cols..(r + 1) * cols]
                        .iter_mut()
                        .zip(gr)
                        .zip(yr)
                    {
                        *d = (g - dot * yv) / n;
                    }
                }
                accumulate(
                    &mut nodes[a.0].grad,
                    Tensor::from_vec(vec![rows, cols], da).expect("size"),
                );
            });
        }
        Ok(v)
    }
}
