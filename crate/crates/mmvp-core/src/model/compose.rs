//! Multi-scale future composition: every observed source (feature scale or
//! raw frame) is moved onto the matrix grid with pixel shuffle/unshuffle,
//! transported through chained motion matrices times the predicted matrix,
//! summed over observed frames, and moved back to its original scale.
//!
//! With row-stochastic (N, N) matrices and grid-flattened sources Xf_i of
//! shape (N, D): A_i = (prod_{n=i}^{T-2} M_n) · M_hat and
//! X_hat = sum_i A_iᵀ · Xf_i = M_hatᵀ · sum_i C_iᵀ · Xf_i, where the inner
//! sum is shared across future steps.

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{pixel_shuffle, pixel_unshuffle};
use crate::tensor::{Element, Graph, Tensor, Var};

/// What a composition source is, and therefore where its composed output
/// plugs into the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceKind {
    /// Raw input frames (skip at full resolution).
    Image,
    /// Encoder feature at scale 1/d.
    Scale(usize),
}

pub struct ComposedSource {
    pub kind: SourceKind,
    /// (T', h_d, w_d, C): composed future information at the source's scale.
    pub feats: Var,
}

/// Moves a (T, h_d, w_d, C) stack onto the (T, h, w, D) matrix grid.
fn to_grid<E: Element>(g: &Graph<E>, cfg: &ModelConfig, denom: usize, x: Var) -> Result<Var> {
    if denom <= cfg.s {
        pixel_unshuffle(g, x, cfg.s / denom)
    } else {
        pixel_shuffle(g, x, denom / cfg.s)
    }
}

fn from_grid<E: Element>(g: &Graph<E>, cfg: &ModelConfig, denom: usize, x: Var) -> Result<Var> {
    if denom <= cfg.s {
        pixel_shuffle(g, x, cfg.s / denom)
    } else {
        pixel_unshuffle(g, x, denom / cfg.s)
    }
}

/// `sources`: per kind, features batched over the T observed frames.
/// `norm_mats`: T-1 normalized consecutive matrices; `norm_mhats`: T'
/// normalized anchored matrices.
pub fn compose_future_vars<E: Element>(
    g: &Graph<E>,
    cfg: &ModelConfig,
    sources: &[(SourceKind, Var)],
    norm_mats: &[Var],
    norm_mhats: &[Var],
) -> Result<Vec<ComposedSource>> {
    let t_obs = norm_mats.len() + 1;
    if norm_mhats.is_empty() {
        return Err(Error::Invalid("no predicted matrices to compose with".into()));
    }
    // chains[i] = M_i · M_{i+1} · ... · M_{T-2}; None encodes the identity
    // (empty product) for the last observed frame.
    let mut chains: Vec<Option<Var>> = vec![None; t_obs];
    for i in (0..t_obs - 1).rev() {
        chains[i] = Some(match &chains[i + 1] {
            None => norm_mats[i],
            Some(next) => g.matmul(norm_mats[i], *next)?,
        });
    }
    let inv_t = E::from_f64(1.0 / t_obs as f64);

    let mut out = Vec::with_capacity(sources.len());
    for &(kind, feats) in sources {
        let denom = match kind {
            SourceKind::Image => 1,
            SourceKind::Scale(d) => d,
        };
        let shape = g.shape(feats);
        let [t, hd, wd, c] = shape[..] else {
            return Err(Error::Invalid(format!(
                "composition source must be (T, h, w, C), got {shape:?}"
            )));
        };
        if t != t_obs {
            return Err(Error::ShapeMismatch {
                left: vec![t],
                right: vec![t_obs],
            });
        }
        let gridded = to_grid(g, cfg, denom, feats)?;
        let gshape = g.shape(gridded);
        let (gh, gw, d_chan) = (gshape[1], gshape[2], gshape[3]);
        let n = gh * gw;
        // B = sum_i C_iᵀ Xf_i, shared by all future steps
        let mut b: Option<Var> = None;
        for (i, chain) in chains.iter().enumerate() {
            let xf = g.reshape(g.narrow(gridded, 0, i, 1)?, &[n, d_chan])?;
            let term = match chain {
                Some(c) => g.matmul_tn(*c, xf)?,
                None => xf,
            };
            b = Some(match b {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        let b = b.expect("t_obs >= 1");
        let mut futures = Vec::with_capacity(norm_mhats.len());
        for &mhat in norm_mhats {
            let mut y = g.matmul_tn(mhat, b)?;
            if cfg.average_composition {
                y = g.scale(y, inv_t);
            }
            let y = g.reshape(y, &[1, gh, gw, d_chan])?;
            futures.push(from_grid(g, cfg, denom, y)?);
        }
        let stacked = g.concat(&futures, 0)?; // (T', h_d, w_d, C)
        debug_assert_eq!(g.shape(stacked)[1..], [hd, wd, c]);
        out.push(ComposedSource {
            kind,
            feats: stacked,
        });
    }
    Ok(out)
}

/// Identity matrix as a tensor (one-hot rows), used by tests and callers
/// that need explicit identity transport.
pub fn identity_matrix<E: Element>(n: usize) -> Tensor<E> {
    Tensor::from_fn(&[n, n], |i| {
        if i / n == i % n {
            E::one()
        } else {
            E::zero()
        }
    })
}
