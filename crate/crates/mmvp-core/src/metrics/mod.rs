//! Image-quality metrics (PSNR, SSIM, frame-sum MSE), the SSIM-based
//! difficulty split, and whole-dataset evaluation against a predictor plus
//! the repeat-last-frame baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SequenceDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// SSIM window side (uniform window, valid-region sliding).
pub const SSIM_WINDOW: usize = 7;
/// PSNR value reported when MSE is below 1e-10.
pub const PSNR_CAP: f64 = 100.0;

fn check_same_shape(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn mse(pred: &Tensor<f32>, gt: &Tensor<f32>) -> f64 {
    let mut acc = 0.0f64;
    let mut comp = 0.0f64; // Kahan compensation
    for (&p, &t) in pred.data().iter().zip(gt.data()) {
        let d = (p as f64 - t as f64).powi(2) - comp;
        let next = acc + d;
        comp = (next - acc) - d;
        acc = next;
    }
    acc / pred.numel() as f64
}

/// 10·log10(L²/MSE), capped at [`PSNR_CAP`] dB for near-zero MSE.
pub fn psnr(pred: &Tensor<f32>, gt: &Tensor<f32>, data_range: f64) -> Result<f64> {
    check_same_shape(pred, gt)?;
    let m = mse(pred, gt);
    if m < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok(10.0 * (data_range * data_range / m).log10())
}

/// Per-frame sum over pixels of squared error.
pub fn mse_sum_frame(pred: &Tensor<f32>, gt: &Tensor<f32>) -> Result<f64> {
    check_same_shape(pred, gt)?;
    Ok(mse(pred, gt) * pred.numel() as f64)
}

/// Mean SSIM over 7x7 uniform windows (valid region), sample-variance
/// moments, C1 = (0.01 L)², C2 = (0.03 L)². Frames are (H, W) or (H, W, C);
/// multi-channel images average the per-channel scores.
pub fn ssim(pred: &Tensor<f32>, gt: &Tensor<f32>, data_range: f64) -> Result<f64> {
    check_same_shape(pred, gt)?;
    let (h, w, c) = match pred.shape() {
        [h, w] => (*h, *w, 1usize),
        [h, w, c] => (*h, *w, *c),
        other => {
            return Err(Error::Invalid(format!(
                "ssim expects (H, W) or (H, W, C) frames, got {other:?}"
            )))
        }
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Invalid(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window"
        )));
    }
    let mut total = 0.0;
    for ch in 0..c {
        let plane = |t: &Tensor<f32>| -> Vec<f64> {
            t.data()
                .iter()
                .skip(ch)
                .step_by(c)
                .map(|&v| v as f64)
                .collect()
        };
        total += ssim_plane(&plane(pred), &plane(gt), h, w, data_range);
    }
    Ok(total / c as f64)
}

/// Single-plane SSIM using summed-area tables for the window moments.
fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize, data_range: f64) -> f64 {
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let cov_norm = n / (n - 1.0); // sample (Bessel-corrected) moments

    // summed-area tables with a zero row/column at the top/left
    let sw = w + 1;
    let mut tables = vec![vec![0.0f64; (h + 1) * sw]; 5]; // x, y, x², y², xy
    for iy in 0..h {
        for ix in 0..w {
            let (a, b) = (x[iy * w + ix], y[iy * w + ix]);
            let vals = [a, b, a * a, b * b, a * b];
            for (t, v) in tables.iter_mut().zip(vals) {
                t[(iy + 1) * sw + ix + 1] =
                    v + t[iy * sw + ix + 1] + t[(iy + 1) * sw + ix] - t[iy * sw + ix];
            }
        }
    }
    let win_sum = |t: &[f64], iy: usize, ix: usize| {
        let (y1, x1) = (iy + SSIM_WINDOW, ix + SSIM_WINDOW);
        t[y1 * sw + x1] - t[iy * sw + x1] - t[y1 * sw + ix] + t[iy * sw + ix]
    };

    let mut acc = 0.0;
    let mut count = 0usize;
    for iy in 0..=h - SSIM_WINDOW {
        for ix in 0..=w - SSIM_WINDOW {
            let ux = win_sum(&tables[0], iy, ix) / n;
            let uy = win_sum(&tables[1], iy, ix) / n;
            let uxx = win_sum(&tables[2], iy, ix) / n;
            let uyy = win_sum(&tables[3], iy, ix) / n;
            let uxy = win_sum(&tables[4], iy, ix) / n;
            let vx = cov_norm * (uxx - ux * ux);
            let vy = cov_norm * (uyy - uy * uy);
            let vxy = cov_norm * (uxy - ux * uy);
            let s = ((2.0 * ux * uy + c1) * (2.0 * vxy + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            acc += s;
            count += 1;
        }
    }
    acc / count as f64
}

/// Validation-difficulty label from the SSIM between the last observed and
/// first future frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Intermediate,
    Hard,
}

impl Difficulty {
    pub fn from_ssim(s: f64) -> Self {
        if s >= 0.9 {
            Difficulty::Easy
        } else if s < 0.6 {
            Difficulty::Hard
        } else {
            Difficulty::Intermediate
        }
    }
}

/// easy iff ssim >= 0.9, hard iff ssim < 0.6, intermediate otherwise.
pub fn split_difficulty(last_observed: &Tensor<f32>, first_future: &Tensor<f32>) -> Result<Difficulty> {
    Ok(Difficulty::from_ssim(ssim(last_observed, first_future, 1.0)?))
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct Aggregate {
    pub count: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub mse_sum: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SubsetAggregates {
    pub full: Aggregate,
    pub easy: Aggregate,
    pub intermediate: Aggregate,
    pub hard: Aggregate,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct SequenceMetrics {
    pub index: usize,
    pub subset: Difficulty,
    pub psnr: f64,
    pub ssim: f64,
    pub mse_sum: f64,
}

/// Evaluation report; serializes to a TOML key-value tree with the fixed
/// key names psnr / ssim / mse_sum / subset / counts.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    /// Metrics operate on [0,1]-normalized frames with this data range.
    pub data_range: f64,
    pub t_obs: usize,
    pub t_fut: usize,
    pub counts: Counts,
    pub model: SubsetAggregates,
    pub baseline: SubsetAggregates,
    pub per_sequence: Vec<SequenceMetrics>,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct Counts {
    pub full: usize,
    pub easy: usize,
    pub intermediate: usize,
    pub hard: usize,
}

impl MetricReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(format!("report parse: {e}")))
    }
}

pub struct EvalSpec {
    pub t_obs: usize,
    pub t_fut: usize,
    pub data_range: f64,
}

struct SeqOutcome {
    subset: Difficulty,
    model: (f64, f64, f64),    // psnr, ssim, mse_sum
    baseline: (f64, f64, f64),
}

fn frame_of(seq: &Tensor<f32>, t: usize) -> Tensor<f32> {
    let s = seq.shape();
    let (h, w, c) = (s[1], s[2], s[3]);
    let fl = h * w * c;
    Tensor::from_vec(vec![h, w, c], seq.data()[t * fl..(t + 1) * fl].to_vec()).expect("frame size")
}

fn clip_metrics(pred: &Tensor<f32>, gt: &Tensor<f32>, t_fut: usize, range: f64) -> Result<(f64, f64, f64)> {
    let (mut p_acc, mut s_acc, mut m_acc) = (0.0, 0.0, 0.0);
    for t in 0..t_fut {
        let (pf, gf) = (frame_of(pred, t), frame_of(gt, t));
        p_acc += psnr(&pf, &gf, range)?;
        s_acc += ssim(&pf, &gf, range)?;
        m_acc += mse_sum_frame(&pf, &gf)?;
    }
    let n = t_fut as f64;
    Ok((p_acc / n, s_acc / n, m_acc / n))
}

/// Runs a predictor over every sequence of a dataset: feed the first T
/// frames, compare the T' predicted frames against ground truth, label the
/// sequence's difficulty, and aggregate per subset. The repeat-last-frame
/// baseline is always evaluated alongside.
pub fn evaluate<P>(predict: P, ds: &SequenceDataset, spec: &EvalSpec) -> Result<MetricReport>
where
    P: Fn(usize, &Tensor<f32>) -> Result<Tensor<f32>> + Sync,
{
    if (ds.seq_len as usize) < spec.t_obs + spec.t_fut {
        return Err(Error::Invalid(format!(
            "sequence length {} too short for T={} + T'={}",
            ds.seq_len, spec.t_obs, spec.t_fut
        )));
    }
    let outcomes: Vec<SeqOutcome> = (0..ds.num_sequences as usize)
        .into_par_iter()
        .map(|i| -> Result<SeqOutcome> {
            let frames = ds.frames_f32(i, 0, spec.t_obs);
            let gt = ds.frames_f32(i, spec.t_obs, spec.t_fut);
            let pred = predict(i, &frames)?;
            if pred.shape() != gt.shape() {
                return Err(Error::ShapeMismatch {
                    left: pred.shape().to_vec(),
                    right: gt.shape().to_vec(),
                });
            }
            let last = frame_of(&frames, spec.t_obs - 1);
            let subset = split_difficulty(&last, &frame_of(&gt, 0))?;
            // repeat-last-frame baseline
            let mut base = Vec::with_capacity(gt.numel());
            for _ in 0..spec.t_fut {
                base.extend_from_slice(last.data());
            }
            let baseline_pred = Tensor::from_vec(gt.shape().to_vec(), base)?;
            Ok(SeqOutcome {
                subset,
                model: clip_metrics(&pred, &gt, spec.t_fut, spec.data_range)?,
                baseline: clip_metrics(&baseline_pred, &gt, spec.t_fut, spec.data_range)?,
            })
        })
        .collect::<Result<_>>()?;

    let mut counts = Counts {
        full: outcomes.len(),
        ..Counts::default()
    };
    for o in &outcomes {
        match o.subset {
            Difficulty::Easy => counts.easy += 1,
            Difficulty::Intermediate => counts.intermediate += 1,
            Difficulty::Hard => counts.hard += 1,
        }
    }
    let agg = |pick: &dyn Fn(&SeqOutcome) -> (f64, f64, f64),
               keep: &dyn Fn(&SeqOutcome) -> bool| {
        let mut sums = [KahanSum::default(), KahanSum::default(), KahanSum::default()];
        let mut count = 0usize;
        for o in outcomes.iter().filter(|o| keep(o)) {
            let (p, s, m) = pick(o);
            sums[0].add(p);
            sums[1].add(s);
            sums[2].add(m);
            count += 1;
        }
        let n = count.max(1) as f64;
        Aggregate {
            count,
            psnr: sums[0].value() / n,
            ssim: sums[1].value() / n,
            mse_sum: sums[2].value() / n,
        }
    };
    let section = |pick: &dyn Fn(&SeqOutcome) -> (f64, f64, f64)| SubsetAggregates {
        full: agg(pick, &|_| true),
        easy: agg(pick, &|o| o.subset == Difficulty::Easy),
        intermediate: agg(pick, &|o| o.subset == Difficulty::Intermediate),
        hard: agg(pick, &|o| o.subset == Difficulty::Hard),
    };
    let per_sequence = outcomes
        .iter()
        .enumerate()
        .map(|(index, o)| SequenceMetrics {
            index,
            subset: o.subset,
            psnr: o.model.0,
            ssim: o.model.1,
            mse_sum: o.model.2,
        })
        .collect();
    Ok(MetricReport {
        data_range: spec.data_range,
        t_obs: spec.t_obs,
        t_fut: spec.t_fut,
        counts,
        model: section(&|o| o.model),
        baseline: section(&|o| o.baseline),
        per_sequence,
    })
}

/// File-based evaluation: predictions stored as a dataset (seq_len = T')
/// against a ground-truth dataset, observed length `t_obs`.
pub fn evaluate_files(
    pred: &SequenceDataset,
    gt: &SequenceDataset,
    t_obs: usize,
    data_range: f64,
) -> Result<MetricReport> {
    if pred.num_sequences != gt.num_sequences {
        return Err(Error::Invalid(format!(
            "prediction file has {} sequences, ground truth has {}",
            pred.num_sequences, gt.num_sequences
        )));
    }
    let t_fut = pred.seq_len as usize;
    let spec = EvalSpec {
        t_obs,
        t_fut,
        data_range,
    };
    evaluate(
        |i, _frames| Ok(pred.frames_f32(i, 0, t_fut)),
        gt,
        &spec,
    )
}

#[derive(Default)]
struct KahanSum {
    acc: f64,
    comp: f64,
}

impl KahanSum {
    fn add(&mut self, v: f64) {
        let y = v - self.comp;
        let t = self.acc + y;
        self.comp = (t - self.acc) - y;
        self.acc = t;
    }
    fn value(&self) -> f64 {
        self.acc
    }
}
