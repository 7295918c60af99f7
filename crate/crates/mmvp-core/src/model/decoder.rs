//! UNet-style future decoder: the coarsest composed feature is upsampled
//! stage by stage (channel-expanding conv + pixel shuffle), the same-scale
//! composed feature is concatenated at each stage, followed by one RRDB;
//! a final 3x3 conv maps to C_in channels. Clamping to [0,1] is the
//! caller's inference-time concern, not the decoder's.

use crate::data::SplitMix64;
use crate::error::{Error, Result};
use crate::model::{ComposedSource, ModelConfig, SourceKind};
use crate::nn::{pixel_shuffle, Component, Conv2dLayer, ParamStore, Rrdb, LEAKY_SLOPE};
use crate::tensor::{Element, Graph, Var};

#[derive(Clone, Debug)]
struct DecStage {
    up: Conv2dLayer,
    skip: Option<SourceKind>,
    rrdb: Rrdb,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    start: SourceKind,
    head_rrdb: Option<Rrdb>,
    stages: Vec<DecStage>,
    final_conv: Conv2dLayer,
}

impl Decoder {
    /// Width of the upsampled stream arriving at scale 1/d.
    fn up_width(cfg: &ModelConfig, d: usize) -> usize {
        (cfg.c_img * d / 4).max(4)
    }

    pub fn new<E: Element>(
        store: &mut ParamStore<E>,
        rng: &mut SplitMix64,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let comp_denoms = cfg.composition_denoms();
        let comp = Component::Decoder;
        let coarsest = comp_denoms.iter().copied().max().unwrap_or(1);
        let (start, mut cur_c) = if comp_denoms.contains(&coarsest) {
            (SourceKind::Scale(coarsest), cfg.channels_at(coarsest))
        } else {
            // image-only composition
            (SourceKind::Image, cfg.c_in)
        };
        let mut stages = Vec::new();
        let mut head_rrdb = None;
        if coarsest == 1 {
            let rrdb = Rrdb::new(store, rng, comp, "dec.head", cur_c);
            head_rrdb = Some(rrdb);
        } else {
            let mut d = coarsest;
            while d > 1 {
                d /= 2;
                let w_up = Self::up_width(cfg, d);
                let up = Conv2dLayer::new(
                    store,
                    rng,
                    comp,
                    &format!("dec.up{d}"),
                    cur_c,
                    4 * w_up,
                    3,
                    1,
                    false,
                );
                let skip = if comp_denoms.contains(&d) {
                    Some(SourceKind::Scale(d))
                } else if d == 1 && cfg.include_image {
                    Some(SourceKind::Image)
                } else {
                    None
                };
                cur_c = w_up
                    + match skip {
                        Some(SourceKind::Scale(sd)) => cfg.channels_at(sd),
                        Some(SourceKind::Image) => cfg.c_in,
                        None => 0,
                    };
                let rrdb = Rrdb::new(store, rng, comp, &format!("dec.rrdb{d}"), cur_c);
                stages.push(DecStage { up, skip, rrdb });
            }
        }
        let final_conv = Conv2dLayer::new(store, rng, comp, "dec.out", cur_c, cfg.c_in, 3, 1, false);
        Ok(Self {
            start,
            head_rrdb,
            stages,
            final_conv,
        })
    }

    fn find(composed: &[ComposedSource], kind: SourceKind) -> Result<Var> {
        composed
            .iter()
            .find(|c| c.kind == kind)
            .map(|c| c.feats)
            .ok_or_else(|| {
                Error::Invalid(format!("decoder is missing composed source {kind:?}"))
            })
    }

    /// `composed` stacks are (T', h_d, w_d, C); returns (T', H, W, C_in).
    pub fn forward<E: Element>(
        &self,
        g: &Graph<E>,
        vars: &[Var],
        composed: &[ComposedSource],
    ) -> Result<Var> {
        let mut x = Self::find(composed, self.start)?;
        if let Some(rrdb) = &self.head_rrdb {
            x = rrdb.forward(g, vars, x)?;
        }
        for stage in &self.stages {
            let up = g.leaky_relu(stage.up.forward(g, vars, x)?, LEAKY_SLOPE)?;
            x = pixel_shuffle(g, up, 2)?;
            if let Some(kind) = stage.skip {
                let skip = Self::find(composed, kind)?;
                x = g.concat(&[x, skip], 3)?;
            }
            x = stage.rrdb.forward(g, vars, x)?;
        }
        self.final_conv.forward(g, vars, x)
    }
}
