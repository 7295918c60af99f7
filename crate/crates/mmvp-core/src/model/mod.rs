//! The video-prediction pipeline: per-frame encoding, feature filtering,
//! motion-matrix construction, future-matrix prediction, multi-scale
//! composition and decoding.

mod compose;
mod decoder;
mod encoder;
mod motion;
mod predictor;

pub use compose::{compose_future_vars, identity_matrix, ComposedSource, SourceKind};
pub use decoder::Decoder;
pub use encoder::{Encoder, FilterBlock, PyramidVars};
pub use motion::{build_motion_matrices, normalize_matrix, MotionMatrix};
pub use predictor::Predictor;

use crate::data::SplitMix64;
use crate::error::{Error, Result};
use crate::nn::{ParamCount, ParamStore};
use crate::tensor::{Element, Graph, Tensor, Var};

/// Static model hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub c_in: usize,
    /// Observed frames T.
    pub t_obs: usize,
    /// Future frames T'.
    pub t_fut: usize,
    /// Encoder base channels; channel count doubles per downsample.
    pub c_img: usize,
    /// Matrix-predictor hidden channels.
    pub c_motion: usize,
    /// Downsample ratio between frames and the motion-matrix grid.
    pub s: usize,
    /// Composition scale denominators (scale 1/d), e.g. [1, 2, 4, 8].
    pub scales: Vec<usize>,
    /// Compose from the raw frames too; replaces the scale-1 feature source.
    pub include_image: bool,
    /// Divide the composition sum by T.
    pub average_composition: bool,
    /// Route encoder features through the filter block before matrix
    /// construction (ablation switch).
    pub use_filter: bool,
}

impl ModelConfig {
    /// 64x64 single-channel 10 -> 10 toy default.
    pub fn toy_default() -> Self {
        Self {
            height: 64,
            width: 64,
            c_in: 1,
            t_obs: 10,
            t_fut: 10,
            c_img: 16,
            c_motion: 32,
            s: 4,
            scales: vec![1, 2, 4, 8],
            include_image: true,
            average_composition: false,
            use_filter: true,
        }
    }

    /// Grid height/width of the motion matrices.
    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.s, self.width / self.s)
    }

    pub fn n_patches(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }

    /// Channel count of the encoder feature at scale 1/d.
    pub fn channels_at(&self, d: usize) -> usize {
        self.c_img * d
    }

    /// Scale denominators that actually feed composition (the image source
    /// replaces scale-1 features when `include_image`).
    pub fn composition_denoms(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .scales
            .iter()
            .copied()
            .filter(|&d| !(self.include_image && d == 1))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Denominators the encoder must materialize: composition scales plus
    /// the matrix-construction scale.
    pub fn feature_denoms(&self) -> Vec<usize> {
        let mut v = self.composition_denoms();
        v.push(self.s);
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.t_obs < 2 {
            return fail(format!("T must be >= 2, got {}", self.t_obs));
        }
        if self.t_fut < 1 {
            return fail("T_prime must be >= 1".into());
        }
        if self.c_in < 1 || self.c_img < 1 || self.c_motion < 1 {
            return fail("channel counts must be >= 1".into());
        }
        if !self.s.is_power_of_two() {
            return fail(format!("S must be a power of two, got {}", self.s));
        }
        if self.height % self.s != 0 || self.width % self.s != 0 {
            return fail(format!(
                "frame {}x{} not divisible by S={}",
                self.height, self.width, self.s
            ));
        }
        if self.scales.is_empty() {
            return fail("scales must name at least one composition scale".into());
        }
        for &d in &self.scales {
            if !d.is_power_of_two() {
                return fail(format!("scale denominator {d} must be a power of two"));
            }
            if self.height % d != 0 || self.width % d != 0 {
                return fail(format!(
                    "frame {}x{} not divisible by scale denominator {d}",
                    self.height, self.width
                ));
            }
        }
        if self.composition_denoms().is_empty() && !self.include_image {
            return fail("no composition sources configured".into());
        }
        for &d in &self.composition_denoms() {
            if d > self.s {
                let r = d / self.s;
                let c = self.channels_at(d);
                if c % (r * r) != 0 {
                    return fail(format!(
                        "scale 1/{d}: {c} channels not divisible by {} for shuffle onto the 1/{} grid",
                        r * r,
                        self.s
                    ));
                }
            }
        }
        if self.include_image && self.s > 1 {
            // image unshuffles by S; always valid since H,W divisible by S
        }
        let (gh, gw) = self.grid();
        if gh == 0 || gw == 0 {
            return fail("matrix grid is empty".into());
        }
        Ok(())
    }
}

/// Stage outputs of one forward pass (vars belong to the graph used).
pub struct ForwardVars {
    pub pyramid: PyramidVars,
    /// Features used for matrix construction (filtered unless disabled).
    pub match_feats: Var,
    /// Raw consecutive-frame matrices, (N, N) each, length T-1.
    pub raw_mats: Vec<Var>,
    /// Raw predicted matrices anchored at frame T, length T'.
    pub raw_mhats: Vec<Var>,
    /// Softmax-normalized versions of both.
    pub norm_mats: Vec<Var>,
    pub norm_mhats: Vec<Var>,
    pub composed: Vec<ComposedSource>,
    /// (T', H, W, C_in), unclamped.
    pub predictions: Var,
    pub loss: Option<Var>,
}

pub struct MmvpModel<E: Element> {
    pub cfg: ModelConfig,
    pub store: ParamStore<E>,
    encoder: Encoder,
    filter: FilterBlock,
    predictor: Predictor,
    decoder: Decoder,
}

impl<E: Element> MmvpModel<E> {
    /// Builds a model with seeded parameter init.
    pub fn build(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = SplitMix64::new(seed);
        let encoder = Encoder::new(&mut store, &mut rng, &cfg);
        let filter = FilterBlock::new(&mut store, &mut rng, &cfg);
        let predictor = Predictor::new(&mut store, &mut rng, &cfg);
        let decoder = Decoder::new(&mut store, &mut rng, &cfg)?;
        Ok(Self {
            cfg,
            store,
            encoder,
            filter,
            predictor,
            decoder,
        })
    }

    /// Same architecture and parameter values at a different precision.
    pub fn cast<F: Element>(&self) -> MmvpModel<F> {
        MmvpModel {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            filter: self.filter.clone(),
            predictor: self.predictor.clone(),
            decoder: self.decoder.clone(),
        }
    }

    pub fn enter(&self, g: &Graph<E>, trainable: bool) -> Vec<Var> {
        self.store.enter(g, trainable)
    }

    pub fn count_params(&self) -> ParamCount {
        self.store.count()
    }

    fn check_frames(&self, shape: &[usize], count: usize, what: &str) -> Result<()> {
        let want = [
            count,
            self.cfg.height,
            self.cfg.width,
            self.cfg.c_in,
        ];
        if shape != want {
            return Err(Error::ShapeMismatch {
                left: shape.to_vec(),
                right: want.to_vec(),
            });
        }
        let _ = what;
        Ok(())
    }

    /// Full pipeline on an existing graph. `frames` is (T, H, W, C_in) in
    /// [0,1]; `targets`, when present, is (T', H, W, C_in) and produces the
    /// MSE loss.
    pub fn forward_vars(
        &self,
        g: &Graph<E>,
        vars: &[Var],
        frames: Var,
        targets: Option<Var>,
    ) -> Result<ForwardVars> {
        let cfg = &self.cfg;
        self.check_frames(&g.shape(frames), cfg.t_obs, "frames")?;
        if let Some(t) = targets {
            self.check_frames(&g.shape(t), cfg.t_fut, "targets")?;
        }

        // 1. per-frame encoding (frames are batched along axis 0)
        let pyramid = self.encoder.forward(g, vars, frames)?;

        // 2. filter the matrix-scale feature
        let f_s = pyramid.get(cfg.s)?;
        let match_feats = if cfg.use_filter {
            self.filter.forward(g, vars, f_s)?
        } else {
            f_s
        };

        // 3. consecutive-frame motion matrices (raw cosine values)
        let raw_mats = motion::build_motion_matrix_vars(g, match_feats, cfg.t_obs)?;

        // 4. predict future matrices from the raw stack
        let raw_mhats = self.predictor.forward(g, vars, &raw_mats, cfg.grid())?;

        // 5. softmax-normalize every matrix before composition
        let norm_mats: Vec<Var> = raw_mats
            .iter()
            .map(|&m| g.softmax(m, &[1]))
            .collect::<Result<_>>()?;
        let norm_mhats: Vec<Var> = raw_mhats
            .iter()
            .map(|&m| g.softmax(m, &[1]))
            .collect::<Result<_>>()?;

        // 6. compose future features at every configured scale
        let mut sources = Vec::new();
        if cfg.include_image {
            sources.push((SourceKind::Image, frames));
        }
        for &d in &cfg.composition_denoms() {
            sources.push((SourceKind::Scale(d), pyramid.get(d)?));
        }
        let composed = compose_future_vars(g, cfg, &sources, &norm_mats, &norm_mhats)?;

        // 7. decode future frames
        let predictions = self.decoder.forward(g, vars, &composed)?;

        let loss = match targets {
            Some(t) => Some(g.mse_loss(predictions, t)?),
            None => None,
        };
        Ok(ForwardVars {
            pyramid,
            match_feats,
            raw_mats,
            raw_mhats,
            norm_mats,
            norm_mhats,
            composed,
            predictions,
            loss,
        })
    }

    /// Training-path convenience: fresh graph, parameters trainable, returns
    /// (graph, parameter vars, forward outputs). The loss is unclamped.
    pub fn training_forward(
        &self,
        frames: &Tensor<E>,
        targets: &Tensor<E>,
    ) -> Result<(Graph<E>, Vec<Var>, ForwardVars)> {
        let g = Graph::new();
        let vars = self.enter(&g, true);
        let fv = g.leaf(frames.clone(), false);
        let tv = g.leaf(targets.clone(), false);
        let out = self.forward_vars(&g, &vars, fv, Some(tv))?;
        Ok((g, vars, out))
    }

    /// Inference: predicted frames clamped to [0, 1].
    pub fn predict_frames(&self, frames: &Tensor<E>) -> Result<Tensor<E>> {
        let g = Graph::new();
        let vars = self.enter(&g, false);
        let fv = g.leaf(frames.clone(), false);
        let out = self.forward_vars(&g, &vars, fv, None)?;
        Ok(g
            .value(out.predictions)
            .map(|x| x.max(E::zero()).min(E::one())))
    }

    /// Normalized predicted matrices for a frame window (for heatmap dumps).
    pub fn predicted_matrices(&self, frames: &Tensor<E>) -> Result<Vec<MotionMatrix<E>>> {
        let g = Graph::new();
        let vars = self.enter(&g, false);
        let fv = g.leaf(frames.clone(), false);
        let out = self.forward_vars(&g, &vars, fv, None)?;
        let (gh, gw) = self.cfg.grid();
        out.norm_mhats
            .iter()
            .map(|&m| {
                let t = g.value(m).reshaped(&[gh, gw, gh, gw])?;
                Ok(MotionMatrix::new_normalized(t))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplitMix64;

    pub(crate) fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            height: 16,
            width: 16,
            c_in: 1,
            t_obs: 3,
            t_fut: 2,
            c_img: 4,
            c_motion: 4,
            s: 4,
            scales: vec![1, 2, 4],
            include_image: true,
            average_composition: false,
            use_filter: true,
        }
    }

    fn random_clip(cfg: &ModelConfig, frames: usize, seed: u64) -> Tensor<f32> {
        let mut rng = SplitMix64::new(seed);
        Tensor::from_fn(&[frames, cfg.height, cfg.width, cfg.c_in], |_| {
            rng.uniform() as f32
        })
    }

    #[test]
    fn toy_default_validates() {
        assert!(ModelConfig::toy_default().validate().is_ok());
    }

    #[test]
    fn forward_is_deterministic_and_loss_nonnegative() {
        let cfg = tiny_cfg();
        let model = MmvpModel::<f32>::build(cfg.clone(), 11).unwrap();
        let frames = random_clip(&cfg, cfg.t_obs, 1);
        let targets = random_clip(&cfg, cfg.t_fut, 2);
        let run = || {
            let (g, _, out) = model.training_forward(&frames, &targets).unwrap();
            (
                g.value(out.loss.unwrap()).item(),
                g.value(out.predictions),
            )
        };
        let (l1, p1) = run();
        let (l2, p2) = run();
        assert!(l1 >= 0.0);
        assert_eq!(l1.to_bits(), l2.to_bits(), "loss must be bit-identical");
        assert!(p1.bit_eq(&p2));
        assert_eq!(p1.shape(), &[2, 16, 16, 1]);
    }

    #[test]
    fn predictions_are_clamped_at_inference() {
        let cfg = tiny_cfg();
        let model = MmvpModel::<f32>::build(cfg.clone(), 3).unwrap();
        let frames = random_clip(&cfg, cfg.t_obs, 5);
        let preds = model.predict_frames(&frames).unwrap();
        assert!(preds.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn every_parameter_receives_finite_gradient() {
        let cfg = tiny_cfg();
        let model = MmvpModel::<f32>::build(cfg.clone(), 7).unwrap();
        let frames = random_clip(&cfg, cfg.t_obs, 3);
        let targets = random_clip(&cfg, cfg.t_fut, 4);
        let (g, vars, out) = model.training_forward(&frames, &targets).unwrap();
        g.backward(out.loss.unwrap()).unwrap();
        let mut nonzero_by_component = std::collections::HashMap::new();
        for (i, &v) in vars.iter().enumerate() {
            let grad = g
                .grad(v)
                .unwrap_or_else(|| panic!("no grad for {}", model.store.name(i)));
            assert!(grad.all_finite(), "non-finite grad on {}", model.store.name(i));
            if grad.data().iter().any(|&x| x != 0.0) {
                *nonzero_by_component
                    .entry(format!("{:?}", model.store.component(i)))
                    .or_insert(0usize) += 1;
            }
        }
        for comp in ["Encoder", "Filter", "Predictor", "Decoder"] {
            assert!(
                nonzero_by_component.get(comp).copied().unwrap_or(0) > 0,
                "no live gradients in {comp}"
            );
        }
    }

    #[test]
    fn raw_matrices_in_range_and_normalized_rows_stochastic() {
        let cfg = tiny_cfg();
        let model = MmvpModel::<f32>::build(cfg.clone(), 19).unwrap();
        let frames = random_clip(&cfg, cfg.t_obs, 9);
        let g = Graph::new();
        let vars = model.enter(&g, false);
        let fv = g.leaf(frames, false);
        let out = model.forward_vars(&g, &vars, fv, None).unwrap();
        assert_eq!(out.raw_mats.len(), cfg.t_obs - 1);
        assert_eq!(out.raw_mhats.len(), cfg.t_fut);
        for &m in &out.raw_mats {
            for &v in g.value(m).data() {
                assert!((-1.0 - 1e-6..=1.0 + 1e-6).contains(&(v as f64)));
            }
        }
        let n = cfg.n_patches();
        for &m in out.norm_mats.iter().chain(&out.norm_mhats) {
            let t = g.value(m);
            for r in 0..n {
                let s: f64 = t.data()[r * n..(r + 1) * n]
                    .iter()
                    .map(|&x| x as f64)
                    .sum();
                assert!((s - 1.0).abs() < 1e-5, "row sum {s}");
            }
        }
    }

    #[test]
    fn filter_ablation_builds_matrices_from_raw_features() {
        let mut cfg = tiny_cfg();
        cfg.use_filter = false;
        let model = MmvpModel::<f32>::build(cfg.clone(), 23).unwrap();
        let frames = random_clip(&cfg, cfg.t_obs, 6);
        let g = Graph::new();
        let vars = model.enter(&g, false);
        let fv = g.leaf(frames.clone(), false);
        let out = model.forward_vars(&g, &vars, fv, None).unwrap();
        // match features ARE the scale-1/S encoder features
        let f_s = out.pyramid.get(cfg.s).unwrap();
        assert!(g.value(out.match_feats).bit_eq(&g.value(f_s)));
        // matrices equal a direct construction from those features
        let feats_t = g.value(f_s);
        let per_frame: Vec<Tensor<f32>> = (0..cfg.t_obs)
            .map(|i| {
                let (gh, gw) = cfg.grid();
                let c = cfg.channels_at(cfg.s);
                let fl = gh * gw * c;
                Tensor::from_vec(
                    vec![gh, gw, c],
                    feats_t.data()[i * fl..(i + 1) * fl].to_vec(),
                )
                .unwrap()
            })
            .collect();
        let direct = build_motion_matrices(&per_frame).unwrap();
        for (v, m) in out.raw_mats.iter().zip(&direct) {
            assert!(g.value(*v).max_abs_diff(&m.as_square()) < 1e-6);
        }
        // and the filtered path differs (filter is live by default)
        let filtered = MmvpModel::<f32>::build(tiny_cfg(), 23).unwrap();
        let g2 = Graph::new();
        let vars2 = filtered.enter(&g2, false);
        let fv2 = g2.leaf(frames, false);
        let out2 = filtered.forward_vars(&g2, &vars2, fv2, None).unwrap();
        assert_ne!(
            g2.shape(out2.match_feats)[3],
            cfg.channels_at(cfg.s),
            "filter output has C_img channels, not the encoder width"
        );
    }

    #[test]
    fn count_params_matches_independent_arithmetic() {
        let cfg = tiny_cfg();
        let model = MmvpModel::<f32>::build(cfg.clone(), 0).unwrap();
        // independent recomputation from the declared layer shapes
        let conv2 = |cin: usize, cout: usize| 9 * cin * cout + cout;
        let conv3 = |cin: usize, cout: usize| 27 * cin * cout + cout;
        let rrdb = |c: usize| {
            let g = (c / 2).max(4);
            2 * (conv2(c, g) + conv2(c + g, g) + conv2(c + 2 * g, c))
        };
        let encoder = conv2(1, 4) // stem
            + conv2(4, 8) + rrdb(8) // level 1/2
            + conv2(8, 16) + rrdb(16); // level 1/4
        let filter = conv2(16, 4) + conv2(4, 4);
        let n = 16; // 4x4 grid
        let banks = 1; // ceil(2 / 2)
        let predictor = conv3(n, 4) + conv3(4, 4) + conv3(4, n * banks);
        let decoder = conv2(16, 16) // up to 1/2: 4*w_up(2)=16
            + rrdb(4 + 8) // w_up(2)=4 + skip 8
            + conv2(12, 16) // up to 1: 4*w_up(1)=16
            + rrdb(4 + 1) // w_up(1)=4 + image skip
            + conv2(5, 1);
        let c = model.count_params();
        assert_eq!(c.encoder, encoder);
        assert_eq!(c.filter, filter);
        assert_eq!(c.predictor, predictor);
        assert_eq!(c.decoder, decoder);
        assert_eq!(c.total, encoder + filter + predictor + decoder);
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut c = ModelConfig::toy_default();
        c.t_obs = 1;
        assert!(c.validate().is_err());

        let mut c = ModelConfig::toy_default();
        c.s = 3;
        assert!(c.validate().is_err());

        let mut c = ModelConfig::toy_default();
        c.height = 60; // not divisible by 8
        assert!(c.validate().is_err());

        let mut c = ModelConfig::toy_default();
        c.scales = vec![];
        assert!(c.validate().is_err());
    }

    #[test]
    fn effective_scales_drop_one_with_image() {
        let cfg = ModelConfig::toy_default();
        assert_eq!(cfg.composition_denoms(), vec![2, 4, 8]);
        assert_eq!(cfg.feature_denoms(), vec![2, 4, 8]);
        let mut no_img = cfg.clone();
        no_img.include_image = false;
        assert_eq!(no_img.composition_denoms(), vec![1, 2, 4, 8]);
    }

    #[test]
    fn grid_shape_matches_spec_example() {
        // 64x64, S=4 -> 16x16 grid
        let cfg = ModelConfig::toy_default();
        assert_eq!(cfg.grid(), (16, 16));
    }
}
