//! Network building blocks and the flat parameter store.

mod rrdb;
mod shuffle;

pub use rrdb::{DenseBlock, Rrdb, RRDB_BETA, RRDB_BLOCKS, RRDB_LAYERS};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};

use crate::data::SplitMix64;
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

/// Leaky ReLU slope used throughout the model (ESRGAN-family convention).
pub const LEAKY_SLOPE: f64 = 0.2;

/// Which model component a parameter belongs to (for size breakdowns).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Encoder,
    Filter,
    Predictor,
    Decoder,
}

/// Index of a parameter in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PId(pub(crate) usize);

/// Ordered, named collection of all trainable tensors. Layers hold [`PId`]s;
/// per forward pass the store is entered into a graph as leaves.
#[derive(Clone, Debug)]
pub struct ParamStore<E: Element> {
    names: Vec<String>,
    tensors: Vec<Tensor<E>>,
    components: Vec<Component>,
}

impl<E: Element> Default for ParamStore<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            components: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, component: Component, t: Tensor<E>) -> PId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(t);
        self.components.push(component);
        PId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn tensor(&self, i: usize) -> &Tensor<E> {
        &self.tensors[i]
    }

    pub fn set_tensor(&mut self, i: usize, t: Tensor<E>) {
        assert_eq!(self.tensors[i].shape(), t.shape());
        self.tensors[i] = t;
    }

    pub fn component(&self, i: usize) -> Component {
        self.components[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>, Component)> {
        (0..self.len()).map(|i| (self.names[i].as_str(), &self.tensors[i], self.components[i]))
    }

    /// Enters every parameter into a graph, in store order.
    pub fn enter(&self, g: &Graph<E>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| g.leaf(t.clone(), trainable))
            .collect()
    }

    /// Total scalar count, and per-component breakdown.
    pub fn count(&self) -> ParamCount {
        let mut c = ParamCount::default();
        for i in 0..self.len() {
            let n = self.tensors[i].numel();
            c.total += n;
            match self.components[i] {
                Component::Encoder => c.encoder += n,
                Component::Filter => c.filter += n,
                Component::Predictor => c.predictor += n,
                Component::Decoder => c.decoder += n,
            }
        }
        c
    }

    pub fn cast<F: Element>(&self) -> ParamStore<F> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            components: self.components.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParamCount {
    pub encoder: usize,
    pub filter: usize,
    pub predictor: usize,
    pub decoder: usize,
    pub total: usize,
}

/// He-uniform init: U(-b, b) with b = sqrt(6 / fan_in).
pub fn kaiming_uniform<E: Element>(
    rng: &mut SplitMix64,
    shape: &[usize],
    fan_in: usize,
) -> Tensor<E> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| E::from_f64(rng.range(-bound, bound)))
}

/// 2-D conv layer: weight (k, k, in_c, out_c), bias (out_c), pad = k/2.
#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub w: PId,
    pub b: PId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<E: Element>(
        store: &mut ParamStore<E>,
        rng: &mut SplitMix64,
        component: Component,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        zero_init: bool,
    ) -> Self {
        let shape = [k, k, in_c, out_c];
        let w = if zero_init {
            Tensor::zeros(&shape)
        } else {
            kaiming_uniform(rng, &shape, k * k * in_c)
        };
        Self {
            w: store.add(format!("{name}.w"), component, w),
            b: store.add(format!("{name}.b"), component, Tensor::zeros(&[out_c])),
            stride,
            pad: k / 2,
        }
    }

    pub fn forward<E: Element>(&self, g: &Graph<E>, vars: &[Var], x: Var) -> Result<Var> {
        g.conv2d(x, vars[self.w.0], Some(vars[self.b.0]), self.stride, self.pad)
    }
}

/// 3-D conv layer: weight (k, k, k, in_c, out_c), bias (out_c), pad = k/2.
#[derive(Clone, Debug)]
pub struct Conv3dLayer {
    pub w: PId,
    pub b: PId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv3dLayer {
    pub fn new<E: Element>(
        store: &mut ParamStore<E>,
        rng: &mut SplitMix64,
        component: Component,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
    ) -> Self {
        let shape = [k, k, k, in_c, out_c];
        let w = kaiming_uniform(rng, &shape, k * k * k * in_c);
        Self {
            w: store.add(format!("{name}.w"), component, w),
            b: store.add(format!("{name}.b"), component, Tensor::zeros(&[out_c])),
            stride: 1,
            pad: k / 2,
        }
    }

    pub fn forward<E: Element>(&self, g: &Graph<E>, vars: &[Var], x: Var) -> Result<Var> {
        g.conv3d(x, vars[self.w.0], Some(vars[self.b.0]), self.stride, self.pad)
    }
}

pub(crate) fn channels_of(shape: &[usize]) -> Result<usize> {
    shape
        .last()
        .copied()
        .ok_or_else(|| Error::Invalid("rank-0 tensor has no channel axis".into()))
}
