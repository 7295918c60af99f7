//! Matrix predictor: a 3-layer 3-D fully convolutional net over the stack of
//! consecutive-frame matrices, emitting matrices anchored at the last
//! observed frame (not consecutive-frame matrices).
//!
//! Input layout: (1, T-1, h, w, N) — time, source grid, flattened target
//! index as channels. Output channels are N * K with K = ceil(T'/(T-1));
//! future step j (0-based) reads time slot j mod (T-1), channel bank
//! j / (T-1).

use crate::data::SplitMix64;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{Component, Conv3dLayer, ParamStore, LEAKY_SLOPE};
use crate::tensor::{Element, Graph, Var};

#[derive(Clone, Debug)]
pub struct Predictor {
    convs: Vec<Conv3dLayer>,
    t_fut: usize,
}

impl Predictor {
    pub fn new<E: Element>(
        store: &mut ParamStore<E>,
        rng: &mut SplitMix64,
        cfg: &ModelConfig,
    ) -> Self {
        let n = cfg.n_patches();
        let banks = cfg.t_fut.div_ceil(cfg.t_obs - 1);
        let comp = Component::Predictor;
        let convs = vec![
            Conv3dLayer::new(store, rng, comp, "pred.conv0", n, cfg.c_motion, 3),
            Conv3dLayer::new(store, rng, comp, "pred.conv1", cfg.c_motion, cfg.c_motion, 3),
            Conv3dLayer::new(store, rng, comp, "pred.conv2", cfg.c_motion, n * banks, 3),
        ];
        Self {
            convs,
            t_fut: cfg.t_fut,
        }
    }

    /// `raw_mats`: T-1 unnormalized (N, N) matrices. Returns T' raw (N, N)
    /// matrices between frame T and each future frame.
    pub fn forward<E: Element>(
        &self,
        g: &Graph<E>,
        vars: &[Var],
        raw_mats: &[Var],
        grid: (usize, usize),
    ) -> Result<Vec<Var>> {
        if raw_mats.is_empty() {
            return Err(Error::Invalid(
                "matrix predictor needs at least one input matrix".into(),
            ));
        }
        let (h, w) = grid;
        let n = h * w;
        let t_in = raw_mats.len();
        let stacked: Vec<Var> = raw_mats
            .iter()
            .map(|&m| g.reshape(m, &[1, 1, h, w, n]))
            .collect::<Result<_>>()?;
        let mut x = g.concat(&stacked, 1)?; // (1, T-1, h, w, N)
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.forward(g, vars, x)?;
            if i != last {
                x = g.leaky_relu(x, LEAKY_SLOPE)?;
            }
        }
        let mut out = Vec::with_capacity(self.t_fut);
        for j in 0..self.t_fut {
            let (t, k) = (j % t_in, j / t_in);
            let slot = g.narrow(x, 1, t, 1)?;
            let chans = g.narrow(slot, 4, k * n, n)?;
            out.push(g.reshape(chans, &[n, n])?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn cfg(t_obs: usize, t_fut: usize) -> ModelConfig {
        ModelConfig {
            height: 8,
            width: 8,
            c_in: 1,
            t_obs,
            t_fut,
            c_img: 4,
            c_motion: 4,
            s: 4,
            scales: vec![1, 2, 4],
            include_image: true,
            average_composition: false,
            use_filter: true,
        }
    }

    fn build(c: &ModelConfig, seed: u64) -> (ParamStore<f64>, Predictor) {
        let mut store = ParamStore::new();
        let mut rng = SplitMix64::new(seed);
        let p = Predictor::new(&mut store, &mut rng, c);
        (store, p)
    }

    #[test]
    fn zero_network_emits_zero_matrices() {
        let c = cfg(3, 2);
        let (mut store, pred) = build(&c, 0);
        for i in 0..store.len() {
            let shape = store.tensor(i).shape().to_vec();
            store.set_tensor(i, Tensor::zeros(&shape));
        }
        let g = Graph::new();
        let vars = store.enter(&g, false);
        let mut rng = SplitMix64::new(1);
        let mats: Vec<Var> = (0..2)
            .map(|_| g.constant(Tensor::from_fn(&[4, 4], |_| rng.range(-1.0, 1.0))))
            .collect();
        let out = pred.forward(&g, &vars, &mats, (2, 2)).unwrap();
        assert_eq!(out.len(), 2);
        for &m in &out {
            assert!(g.value(m).data().iter().all(|&v| v == 0.0));
            // after softmax: uniform transport
            let s = g.softmax(m, &[1]).unwrap();
            for &v in g.value(s).data() {
                assert!((v - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn output_count_is_t_fut_regardless_of_t_obs() {
        for (t_obs, t_fut) in [(2usize, 1usize), (2, 5), (4, 2), (5, 10), (3, 7)] {
            let c = cfg(t_obs, t_fut);
            let (store, pred) = build(&c, 3);
            let g = Graph::new();
            let vars = store.enter(&g, false);
            let mut rng = SplitMix64::new(9);
            let mats: Vec<Var> = (0..t_obs - 1)
                .map(|_| g.constant(Tensor::from_fn(&[4, 4], |_| rng.range(-1.0, 1.0))))
                .collect();
            let out = pred.forward(&g, &vars, &mats, (2, 2)).unwrap();
            assert_eq!(out.len(), t_fut, "T={t_obs} T'={t_fut}");
            for &m in &out {
                assert_eq!(g.shape(m), vec![4, 4]);
            }
        }
    }

    #[test]
    fn rejects_empty_input() {
        let c = cfg(2, 1);
        let (store, pred) = build(&c, 3);
        let g = Graph::new();
        let vars = store.enter(&g, false);
        assert!(pred.forward(&g, &vars, &[], (2, 2)).is_err());
    }

    #[test]
    fn gradient_reaches_predictor_weights() {
        let c = cfg(3, 2);
        let (store, pred) = build(&c, 5);
        let g = Graph::new();
        let vars = store.enter(&g, true);
        let mut rng = SplitMix64::new(2);
        let mats: Vec<Var> = (0..2)
            .map(|_| g.constant(Tensor::from_fn(&[4, 4], |_| rng.range(-1.0, 1.0))))
            .collect();
        let out = pred.forward(&g, &vars, &mats, (2, 2)).unwrap();
        let mut loss = g.sum(out[0]);
        for &m in &out[1..] {
            loss = g.add(loss, g.sum(m)).unwrap();
        }
        g.backward(loss).unwrap();
        for (i, &v) in vars.iter().enumerate() {
            let grad = g.grad(v).unwrap();
            // every conv weight/bias participates
            assert!(
                grad.data().iter().any(|&x| x != 0.0),
                "zero grad on {}",
                store.name(i)
            );
        }
    }
}
