//! 2-D and 3-D convolution (cross-correlation convention, zero padding)
//! via im2col + GEMM. Activations are channels-last: x is (N, H, W, C) /
//! (N, D, H, W, C); weights are (kH, kW, C_in, C_out) / (kD, kH, kW, C_in,
//! C_out). im2col is recomputed in the backward pass instead of being kept
//! on the tape.

use crate::error::{Error, Result};
use crate::tensor::graph::{accumulate, Graph, Var};
use crate::tensor::{gemm, Element, Tensor};

#[derive(Clone, Copy, Debug)]
struct Geom {
    n: usize,
    spatial_in: [usize; 3],  // leading dims of size 1 for conv2d
    spatial_out: [usize; 3],
    kernel: [usize; 3],
    c_in: usize,
    c_out: usize,
    // per-axis; dummy leading axes keep stride 1 / pad 0
    stride: [usize; 3],
    pad: [usize; 3],
}

impl Geom {
    fn rows(&self) -> usize {
        self.n * self.spatial_out.iter().product::<usize>()
    }
    fn cols(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.c_in
    }
}

// Output size (input + 2*pad - k) / stride + 1 with floor division (the
// framework convention; a stride-2 3x3 conv on an even input leaves one
// padded column unused). Errors when not even one window fits.
fn out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        return Err(Error::ConvGeometry(format!(
            "output size ({input} + 2*{pad} - {k}) / {stride} + 1 is not a positive integer"
        )));
    }
    Ok((padded - k) / stride + 1)
}

fn geometry(
    x_shape: &[usize],
    w_shape: &[usize],
    spatial_rank: usize,
    stride: usize,
    pad: usize,
) -> Result<Geom> {
    let xr = spatial_rank + 2;
    let wr = spatial_rank + 2;
    if x_shape.len() != xr || w_shape.len() != wr {
        return Err(Error::ConvGeometry(format!(
            "expected input rank {xr} and weight rank {wr}, got {x_shape:?} and {w_shape:?}"
        )));
    }
    if stride == 0 {
        return Err(Error::ConvGeometry("stride must be >= 1".into()));
    }
    let c_in = x_shape[xr - 1];
    if w_shape[spatial_rank] != c_in {
        return Err(Error::ConvGeometry(format!(
            "input has {c_in} channels but weight expects {}",
            w_shape[spatial_rank]
        )));
    }
    let mut spatial_in = [1usize; 3];
    let mut spatial_out = [1usize; 3];
    let mut kernel = [1usize; 3];
    let mut strides = [1usize; 3];
    let mut pads = [0usize; 3];
    for i in 0..spatial_rank {
        let k = w_shape[i];
        if k % 2 == 0 {
            return Err(Error::ConvGeometry(format!(
                "kernel dims must be odd, got {k}"
            )));
        }
        let off = 3 - spatial_rank;
        spatial_in[off + i] = x_shape[1 + i];
        kernel[off + i] = k;
        strides[off + i] = stride;
        pads[off + i] = pad;
        spatial_out[off + i] = out_dim(x_shape[1 + i], k, stride, pad)?;
    }
    Ok(Geom {
        n: x_shape[0],
        spatial_in,
        spatial_out,
        kernel,
        c_in,
        c_out: w_shape[wr - 1],
        stride: strides,
        pad: pads,
    })
}

/// Gathers input patches into a (rows x cols) matrix, zero-filling taps that
/// fall in the padding. Row = one output position, col = (kd, ky, kx, c).
fn im2col<E: Element>(x: &[E], g: &Geom) -> Vec<E> {
    let mut col = vec![E::zero(); g.rows() * g.cols()];
    let [di, hi, wi] = g.spatial_in;
    let [do_, ho, wo] = g.spatial_out;
    let [kd, kh, kw] = g.kernel;
    let c = g.c_in;
    let run = kw * c;
    let (sd, sy, sx) = (
        g.stride[0] as isize,
        g.stride[1] as isize,
        g.stride[2] as isize,
    );
    let (pd, py, px) = (g.pad[0] as isize, g.pad[1] as isize, g.pad[2] as isize);
    let mut row = 0usize;
    for n in 0..g.n {
        let xn = &x[n * di * hi * wi * c..];
        for od in 0..do_ {
            let id0 = od as isize * sd - pd;
            for oy in 0..ho {
                let iy0 = oy as isize * sy - py;
                for ox in 0..wo {
                    let ix0 = ox as isize * sx - px;
                    let dst_row = &mut col[row * g.cols()..(row + 1) * g.cols()];
                    row += 1;
                    let kx_lo = (-ix0).max(0) as usize;
                    let kx_hi = (wi as isize - ix0).clamp(0, kw as isize) as usize;
                    if kx_lo >= kx_hi {
                        continue;
                    }
                    for zd in 0..kd {
                        let id = id0 + zd as isize;
                        if id < 0 || id >= di as isize {
                            continue;
                        }
                        for zy in 0..kh {
                            let iy = iy0 + zy as isize;
                            if iy < 0 || iy >= hi as isize {
                                continue;
                            }
                            let src = ((id as usize * hi + iy as usize) * wi) as isize + ix0;
                            let src0 = (src + kx_lo as isize) as usize * c;
                            let dst0 = (zd * kh + zy) * run + kx_lo * c;
                            let len = (kx_hi - kx_lo) * c;
                            dst_row[dst0..dst0 + len].copy_from_slice(&xn[src0..src0 + len]);
                        }
                    }
                }
            }
        }
    }
    col
}

/// Scatter-adds a column matrix back onto the input layout (adjoint of
/// [`im2col`]).
fn col2im<E: Element>(col: &[E], g: &Geom) -> Vec<E> {
    let [di, hi, wi] = g.spatial_in;
    let [do_, ho, wo] = g.spatial_out;
    let [kd, kh, kw] = g.kernel;
    let c = g.c_in;
    let run = kw * c;
    let (sd, sy, sx) = (
        g.stride[0] as isize,
        g.stride[1] as isize,
        g.stride[2] as isize,
    );
    let (pd, py, px) = (g.pad[0] as isize, g.pad[1] as isize, g.pad[2] as isize);
    let mut x = vec![E::zero(); g.n * di * hi * wi * c];
    let mut row = 0usize;
    for n in 0..g.n {
        let xn = &mut x[n * di * hi * wi * c..(n + 1) * di * hi * wi * c];
        for od in 0..do_ {
            let id0 = od as isize * sd - pd;
            for oy in 0..ho {
                let iy0 = oy as isize * sy - py;
                for ox in 0..wo {
                    let ix0 = ox as isize * sx - px;
                    let src_row = &col[row * g.cols()..(row + 1) * g.cols()];
                    row += 1;
                    let kx_lo = (-ix0).max(0) as usize;
                    let kx_hi = (wi as isize - ix0).clamp(0, kw as isize) as usize;
                    if kx_lo >= kx_hi {
                        continue;
                    }
                    for zd in 0..kd {
                        let id = id0 + zd as isize;
                        if id < 0 || id >= di as isize {
                            continue;
                        }
                        for zy in 0..kh {
                            let iy = iy0 + zy as isize;
                            if iy < 0 || iy >= hi as isize {
                                continue;
                            }
                            let dst = ((id as usize * hi + iy as usize) * wi) as isize + ix0;
                            let dst0 = (dst + kx_lo as isize) as usize * c;
                            let src0 = (zd * kh + zy) * run + kx_lo * c;
                            for i in 0..(kx_hi - kx_lo) * c {
                                xn[dst0 + i] += src_row[src0 + i];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

impl<E: Element> Graph<E> {
    /// conv over (N, H, W, C) with weight (kH, kW, C_in, C_out).
    pub fn conv2d(
        &self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        self.conv_impl(x, w, bias, stride, pad, 2)
    }

    /// conv over (N, D, H, W, C) with weight (kD, kH, kW, C_in, C_out); the
    /// depth axis is time in the matrix predictor.
    pub fn conv3d(
        &self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        self.conv_impl(x, w, bias, stride, pad, 3)
    }

    fn conv_impl(
        &self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        spatial_rank: usize,
    ) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let g = geometry(tx.shape(), tw.shape(), spatial_rank, stride, pad)?;
        let tb = bias.map(|b| self.value(b));
        if let Some(ref b) = tb {
            if b.shape() != [g.c_out] {
                return Err(Error::ShapeMismatch {
                    left: b.shape().to_vec(),
                    right: vec![g.c_out],
                });
            }
        }
        let (m, k, n) = (g.rows(), g.cols(), g.c_out);
        let col = im2col(tx.data(), &g);
        let mut out = vec![E::zero(); m * n];
        gemm(
            m, k, n,
            E::one(),
            &col, k as isize, 1,
            tw.data(), n as isize, 1,
            E::zero(),
            &mut out, n as isize, 1,
        );
        drop(col);
        if let Some(ref b) = tb {
            let bd = b.data();
            for row in out.chunks_exact_mut(n) {
                for (o, &bv) in row.iter_mut().zip(bd) {
                    *o += bv;
                }
            }
        }
        let mut out_shape = vec![g.n];
        out_shape.extend(&g.spatial_out[3 - spatial_rank..]);
        out_shape.push(g.c_out);
        let (rx, rw) = (self.requires_grad(x), self.requires_grad(w));
        let rb = bias.is_some_and(|b| self.requires_grad(b));
        let req = rx || rw || rb;
        let v = self.push(Tensor::from_vec(out_shape, out)?, req);
        if req {
            let x_shape = tx.shape().to_vec();
            self.record(move |nodes| {
                let Some(go) = nodes[v.0].grad.clone() else {
                    return;
                };
                let god = go.data();
                if rb {
                    let mut db = vec![E::zero(); n];
                    for row in god.chunks_exact(n) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                    accumulate(
                        &mut nodes[bias.expect("rb implies bias").0].grad,
                        Tensor::from_vec(vec![n], db).expect("size"),
                    );
                }
                if rw {
                    let col = im2col(tx.data(), &g);
                    let mut dw = vec![E::zero(); k * n];
                    // dW(K,N) = colᵀ(K,M) · go(M,N)
                    gemm(
                        k, m, n,
                        E::one(),
                        &col, 1, k as isize,
                        god, n as isize, 1,
                        E::zero(),
                        &mut dw, n as isize, 1,
                    );
                    accumulate(
                        &mut nodes[w.0].grad,
                        Tensor::from_vec(tw.shape().to_vec(), dw).expect("size"),
                    );
                }
                if rx {
                    // dcol(M,K) = go(M,N) · Wᵀ(N,K)
                    let mut dcol = vec![E::zero(); m * k];
                    gemm(
                        m, n, k,
                        E::one(),
                        god, n as isize, 1,
                        tw.data(), 1, n as isize,
                        E::zero(),
                        &mut dcol, k as isize, 1,
                    );
                    let dx = col2im(&dcol, &g);
                    accumulate(
                        &mut nodes[x.0].grad,
                        Tensor::from_vec(x_shape.clone(), dx).expect("size"),
                    );
                }
            });
        }
        Ok(v)
    }
}
