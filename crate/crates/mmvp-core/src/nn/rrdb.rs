//! Residual-in-residual dense blocks.
//!
//! A dense block runs L convs over the concatenation of all earlier features
//! and adds its final conv back as `y = x + beta * delta(x)`; an RRDB chains
//! B such blocks. The last conv of every dense block is zero-initialized, so
//! a freshly built RRDB is exactly the identity.

use crate::data::SplitMix64;
use crate::error::{Error, Result};
use crate::nn::{channels_of, Component, Conv2dLayer, ParamStore, LEAKY_SLOPE};
use crate::tensor::{Element, Graph, Var};

/// Conv layers per dense block (the last one projects back to C channels).
pub const RRDB_LAYERS: usize = 3;
/// Dense blocks per RRDB.
pub const RRDB_BLOCKS: usize = 2;
/// Residual scaling factor.
pub const RRDB_BETA: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct DenseBlock {
    convs: Vec<Conv2dLayer>,
}

impl DenseBlock {
    fn new<E: Element>(
        store: &mut ParamStore<E>,
        rng: &mut SplitMix64,
        component: Component,
        name: &str,
        channels: usize,
        growth: usize,
    ) -> Self {
        let mut convs = Vec::with_capacity(RRDB_LAYERS);
        for i in 0..RRDB_LAYERS {
            let last = i == RRDB_LAYERS - 1;
            let in_c = channels + i * growth;
            let out_c = if last { channels } else { growth };
            convs.push(Conv2dLayer::new(
                store,
                rng,
                component,
                &format!("{name}.conv{i}"),
                in_c,
                out_c,
                3,
                1,
                last, // zero-init the projection conv: identity at init
            ));
        }
        Self { convs }
    }

    fn forward<E: Element>(&self, g: &Graph<E>, vars: &[Var], x: Var) -> Result<Var> {
        let mut feats = vec![x];
        for conv in &self.convs[..RRDB_LAYERS - 1] {
            let cat = g.concat(&feats, 3)?;
            let h = conv.forward(g, vars, cat)?;
            feats.push(g.leaky_relu(h, LEAKY_SLOPE)?);
        }
        let cat = g.concat(&feats, 3)?;
        let delta = self.convs[RRDB_LAYERS - 1].forward(g, vars, cat)?;
        g.add(x, g.scale(delta, E::from_f64(RRDB_BETA)))
    }
}

/// Spatial-size-preserving residual block with fixed channel count.
#[derive(Clone, Debug)]
pub struct Rrdb {
    pub channels: usize,
    blocks: Vec<DenseBlock>,
}

impl Rrdb {
    /// Growth channels: C/2, floored, at least 4.
    pub fn growth(channels: usize) -> usize {
        (channels / 2).max(4)
    }

    pub fn new<E: Element>(
        store: &mut ParamStore<E>,
        rng: &mut SplitMix64,
        component: Component,
        name: &str,
        channels: usize,
    ) -> Self {
        let growth = Self::growth(channels);
        let blocks = (0..RRDB_BLOCKS)
            .map(|b| {
                DenseBlock::new(
                    store,
                    rng,
                    component,
                    &format!("{name}.db{b}"),
                    channels,
                    growth,
                )
            })
            .collect();
        Self { channels, blocks }
    }

    pub fn forward<E: Element>(&self, g: &Graph<E>, vars: &[Var], x: Var) -> Result<Var> {
        let got = channels_of(&g.shape(x))?;
        if got != self.channels {
            return Err(Error::Invalid(format!(
                "rrdb built for {} channels, input has {got}",
                self.channels
            )));
        }
        let mut u = x;
        for block in &self.blocks {
            u = block.forward(g, vars, u)?;
        }
        Ok(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplitMix64;
    use crate::tensor::{check::finite_diff_check, Tensor};

    fn build(channels: usize, seed: u64) -> (ParamStore<f64>, Rrdb) {
        let mut store = ParamStore::new();
        let mut rng = SplitMix64::new(seed);
        let rrdb = Rrdb::new(&mut store, &mut rng, Component::Encoder, "r", channels);
        (store, rrdb)
    }

    #[test]
    fn zero_initialized_projection_gives_exact_identity() {
        let (store, rrdb) = build(6, 3);
        let mut rng = SplitMix64::new(9);
        let x = Tensor::from_fn(&[2, 5, 4, 6], |_| rng.range(-1.0, 1.0));
        let g = Graph::new();
        let vars = store.enter(&g, false);
        let y = rrdb.forward(&g, &vars, g.constant(x.clone())).unwrap();
        assert!(g.value(y).bit_eq(&x));
    }

    #[test]
    fn shape_preserved_for_random_configs() {
        for &(c, h, w) in &[(4usize, 6usize, 6usize), (10, 3, 7), (16, 8, 4)] {
            let (mut store, rrdb) = {
                let mut store = ParamStore::<f32>::new();
                let mut rng = SplitMix64::new(c as u64);
                let r = Rrdb::new(&mut store, &mut rng, Component::Decoder, "r", c);
                (store, r)
            };
            // perturb the zero convs so the residual branch is live
            for i in 0..store.len() {
                if store.tensor(i).numel() > 1 {
                    let mut rng = SplitMix64::new(i as u64 + 100);
                    let shape = store.tensor(i).shape().to_vec();
                    store.set_tensor(
                        i,
                        Tensor::from_fn(&shape, |_| rng.range(-0.3, 0.3) as f32),
                    );
                }
            }
            let g = Graph::new();
            let vars = store.enter(&g, false);
            let x = g.constant(Tensor::full(&[1, h, w, c], 0.5f32));
            let y = rrdb.forward(&g, &vars, x).unwrap();
            assert_eq!(g.shape(y), vec![1, h, w, c]);
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let (store, rrdb) = build(6, 3);
        let g = Graph::new();
        let vars = store.enter(&g, false);
        let x = g.constant(Tensor::zeros(&[1, 4, 4, 5]));
        assert!(rrdb.forward(&g, &vars, x).is_err());
    }

    #[test]
    fn residual_branch_is_beta_scaled() {
        // with one dense block's delta forced to a known constant, the
        // output offset is exactly beta * delta
        let (mut store, rrdb) = build(4, 1);
        // set last conv bias of block 0 to 1.0 => delta = 1 everywhere
        for i in 0..store.len() {
            if store.name(i) == "r.db0.conv2.b" {
                store.set_tensor(i, Tensor::full(&[4], 1.0f64));
            }
        }
        let g = Graph::new();
        let vars = store.enter(&g, false);
        let x = g.constant(Tensor::zeros(&[1, 3, 3, 4]));
        let y = g.value(rrdb.forward(&g, &vars, x).unwrap());
        // block0: 0 + beta*1; block1 delta is zero-conv on nonzero input,
        // but its projection weights are zero => adds nothing
        for &v in y.data() {
            assert!((v - RRDB_BETA).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_check_through_one_block() {
        let (store, rrdb) = build(4, 21);
        // give the projection convs nonzero weights so gradients are live
        let mut store = store;
        for i in 0..store.len() {
            if store.name(i).contains("conv2.w") {
                let mut rng = SplitMix64::new(i as u64);
                let shape = store.tensor(i).shape().to_vec();
                store.set_tensor(i, Tensor::from_fn(&shape, |_| rng.range(-0.3, 0.3)));
            }
        }
        let mut rng = SplitMix64::new(2);
        let x = Tensor::from_fn(&[1, 4, 4, 4], |_| rng.range(-1.0, 1.0));
        let err = finite_diff_check(
            |g, v| {
                let vars = store.enter(g, false);
                let y = rrdb.forward(g, &vars, v)?;
                let w = g.constant(Tensor::from_fn(&[1, 4, 4, 4], |i| ((i % 9) as f64).cos()));
                Ok(g.sum(g.mul(y, w)?))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }
}
