//! Per-frame image encoder (stride-2 dyadic pyramid with one RRDB per kept
//! scale) and the two-layer filter block feeding matrix construction.

use crate::data::SplitMix64;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{Component, Conv2dLayer, ParamStore, Rrdb, LEAKY_SLOPE};
use crate::tensor::{Element, Graph, Var};

/// Encoder features per kept scale, batched over frames: (T, H/d, W/d, C_d).
pub struct PyramidVars {
    feats: Vec<(usize, Var)>,
}

impl PyramidVars {
    pub fn get(&self, denom: usize) -> Result<Var> {
        self.feats
            .iter()
            .find(|(d, _)| *d == denom)
            .map(|&(_, v)| v)
            .ok_or_else(|| Error::Invalid(format!("pyramid has no scale 1/{denom}")))
    }

    pub fn denoms(&self) -> Vec<usize> {
        self.feats.iter().map(|&(d, _)| d).collect()
    }
}

#[derive(Clone, Debug)]
struct EncLevel {
    denom: usize,
    down: Conv2dLayer,
    rrdb: Option<Rrdb>,
}

/// Frames enter at scale 1 through a stem conv to C_img channels; each level
/// halves the resolution with a stride-2 conv and doubles the channels, and
/// scales kept in the pyramid get one RRDB.
#[derive(Clone, Debug)]
pub struct Encoder {
    stem: Conv2dLayer,
    stem_rrdb: Option<Rrdb>,
    levels: Vec<EncLevel>,
}

impl Encoder {
    pub fn new<E: Element>(
        store: &mut ParamStore<E>,
        rng: &mut SplitMix64,
        cfg: &ModelConfig,
    ) -> Self {
        let kept = cfg.feature_denoms();
        let deepest = *kept.iter().max().expect("validated non-empty");
        let comp = Component::Encoder;
        let stem = Conv2dLayer::new(store, rng, comp, "enc.stem", cfg.c_in, cfg.c_img, 3, 1, false);
        let stem_rrdb = kept
            .contains(&1)
            .then(|| Rrdb::new(store, rng, comp, "enc.rrdb1", cfg.c_img));
        let mut levels = Vec::new();
        let mut denom = 1;
        while denom < deepest {
            let (in_c, out_c) = (cfg.channels_at(denom), cfg.channels_at(denom * 2));
            denom *= 2;
            let down = Conv2dLayer::new(
                store,
                rng,
                comp,
                &format!("enc.down{denom}"),
                in_c,
                out_c,
                3,
                2,
                false,
            );
            let rrdb = kept
                .contains(&denom)
                .then(|| Rrdb::new(store, rng, comp, &format!("enc.rrdb{denom}"), out_c));
            levels.push(EncLevel { denom, down, rrdb });
        }
        Self {
            stem,
            stem_rrdb,
            levels,
        }
    }

    /// frames: (T, H, W, C_in) -> kept per-scale features. Encoding is
    /// per-frame by construction: every op is batched over axis 0 only.
    pub fn forward<E: Element>(
        &self,
        g: &Graph<E>,
        vars: &[Var],
        frames: Var,
    ) -> Result<PyramidVars> {
        let mut feats = Vec::new();
        let mut x = g.leaky_relu(self.stem.forward(g, vars, frames)?, LEAKY_SLOPE)?;
        if let Some(rrdb) = &self.stem_rrdb {
            let f1 = rrdb.forward(g, vars, x)?;
            feats.push((1, f1));
            x = f1;
        }
        for level in &self.levels {
            x = g.leaky_relu(level.down.forward(g, vars, x)?, LEAKY_SLOPE)?;
            if let Some(rrdb) = &level.rrdb {
                let f = rrdb.forward(g, vars, x)?;
                feats.push((level.denom, f));
                x = f;
            }
        }
        Ok(PyramidVars { feats })
    }
}

/// Two 3x3 convs with a leaky ReLU between; output has C_img channels and is
/// used only for motion-matrix construction, never for composition.
#[derive(Clone, Debug)]
pub struct FilterBlock {
    conv1: Conv2dLayer,
    conv2: Conv2dLayer,
}

impl FilterBlock {
    pub fn new<E: Element>(
        store: &mut ParamStore<E>,
        rng: &mut SplitMix64,
        cfg: &ModelConfig,
    ) -> Self {
        let in_c = cfg.channels_at(cfg.s);
        let comp = Component::Filter;
        Self {
            conv1: Conv2dLayer::new(store, rng, comp, "filter.conv1", in_c, cfg.c_img, 3, 1, false),
            conv2: Conv2dLayer::new(
                store,
                rng,
                comp,
                "filter.conv2",
                cfg.c_img,
                cfg.c_img,
                3,
                1,
                false,
            ),
        }
    }

    pub fn forward<E: Element>(&self, g: &Graph<E>, vars: &[Var], f: Var) -> Result<Var> {
        let h = g.leaky_relu(self.conv1.forward(g, vars, f)?, LEAKY_SLOPE)?;
        self.conv2.forward(g, vars, h)
    }
}
