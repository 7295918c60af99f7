//! Motion matrices: cosine similarity between every pair of feature patches
//! of consecutive frames. A patch is the channel vector at one grid
//! location; matrices are kept as (N, N) with rows = source patch index
//! (row-major over the grid) and columns = target patch index.

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

/// 4-D patch-pair similarity array M in R^{h x w x h x w}. `normalized`
/// marks post-softmax matrices (rows are transport distributions).
#[derive(Clone, Debug)]
pub struct MotionMatrix<E: Element> {
    values: Tensor<E>,
    normalized: bool,
}

impl<E: Element> MotionMatrix<E> {
    pub fn new_raw(values: Tensor<E>) -> Self {
        Self {
            values,
            normalized: false,
        }
    }

    pub fn new_normalized(values: Tensor<E>) -> Self {
        Self {
            values,
            normalized: true,
        }
    }

    pub fn values(&self) -> &Tensor<E> {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// (h, w) of the underlying grid.
    pub fn grid(&self) -> (usize, usize) {
        let s = self.values.shape();
        (s[0], s[1])
    }

    /// The (N, N) view, rows = source patches.
    pub fn as_square(&self) -> Tensor<E> {
        let (h, w) = self.grid();
        self.values
            .reshaped(&[h * w, h * w])
            .expect("4d matrix is square")
    }

    /// Heatmap over the target grid for one source patch.
    pub fn row_heatmap(&self, hs: usize, ws: usize) -> Tensor<E> {
        let (h, w) = self.grid();
        let n = h * w;
        let sq = self.as_square();
        let row = hs * w + ws;
        Tensor::from_vec(vec![h, w], sq.data()[row * n..(row + 1) * n].to_vec())
            .expect("row size")
    }
}

/// In-graph construction: `feats` is (T, h, w, C); returns T-1 raw cosine
/// matrices of shape (N, N). Patch vectors with norm below 1e-12 yield
/// similarity 0.
pub fn build_motion_matrix_vars<E: Element>(
    g: &Graph<E>,
    feats: Var,
    t_obs: usize,
) -> Result<Vec<Var>> {
    let shape = g.shape(feats);
    let [t, h, w, c] = shape[..] else {
        return Err(Error::Invalid(format!(
            "expected (T, h, w, C) features, got {shape:?}"
        )));
    };
    if t != t_obs {
        return Err(Error::ShapeMismatch {
            left: vec![t],
            right: vec![t_obs],
        });
    }
    if t < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 frames for one motion matrix, got {t}"
        )));
    }
    let n = h * w;
    // normalize every frame's patch matrix once, reuse for both sides
    let mut unit: Vec<Var> = Vec::with_capacity(t);
    for i in 0..t {
        let f = g.narrow(feats, 0, i, 1)?;
        let flat = g.reshape(f, &[n, c])?;
        unit.push(g.l2_normalize_rows(flat)?);
    }
    (0..t - 1).map(|i| g.matmul_nt(unit[i], unit[i + 1])).collect()
}

/// Raw cosine matrices M_{i,i+1} from per-frame filtered features
/// ((h, w, C) or (1, h, w, C) each).
pub fn build_motion_matrices<E: Element>(feats: &[Tensor<E>]) -> Result<Vec<MotionMatrix<E>>> {
    if feats.len() < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 frames for one motion matrix, got {}",
            feats.len()
        )));
    }
    let norm: Vec<usize> = match feats[0].shape() {
        [h, w, c] => vec![*h, *w, *c],
        [1, h, w, c] => vec![*h, *w, *c],
        other => {
            return Err(Error::Invalid(format!(
                "expected (h, w, C) features, got {other:?}"
            )))
        }
    };
    let (h, w, c) = (norm[0], norm[1], norm[2]);
    for f in feats {
        let s = f.shape();
        let ok = s == [h, w, c] || s == [1, h, w, c];
        if !ok {
            return Err(Error::ShapeMismatch {
                left: s.to_vec(),
                right: norm.clone(),
            });
        }
    }
    let g = Graph::new();
    let mut data = Vec::new();
    for f in feats {
        data.extend_from_slice(f.data());
    }
    let stacked = g.constant(Tensor::from_vec(vec![feats.len(), h, w, c], data)?);
    let vars = build_motion_matrix_vars(&g, stacked, feats.len())?;
    vars.into_iter()
        .map(|v| {
            Ok(MotionMatrix::new_raw(
                g.value(v).reshaped(&[h, w, h, w])?,
            ))
        })
        .collect()
}

/// Softmax over the target index pair for each source location; the result
/// is row-stochastic viewed as an N x N matrix. Rejects double application.
pub fn normalize_matrix<E: Element>(m: &MotionMatrix<E>) -> Result<MotionMatrix<E>> {
    if m.is_normalized() {
        return Err(Error::Invalid(
            "motion matrix is already normalized".into(),
        ));
    }
    let (h, w) = m.grid();
    let g = Graph::new();
    let v = g.constant(m.as_square());
    let s = g.softmax(v, &[1])?;
    Ok(MotionMatrix::new_normalized(
        g.value(s).reshaped(&[h, w, h, w])?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplitMix64;

    fn feat(h: usize, w: usize, c: usize, f: impl FnMut(usize) -> f64) -> Tensor<f64> {
        Tensor::from_fn(&[h, w, c], f)
    }

    #[test]
    fn self_similarity_diagonal_is_one() {
        let mut rng = SplitMix64::new(3);
        let a = feat(3, 3, 4, |_| rng.range(-1.0, 1.0));
        let mats = build_motion_matrices(&[a.clone(), a]).unwrap();
        assert_eq!(mats.len(), 1);
        let sq = mats[0].as_square();
        for p in 0..9 {
            assert!((sq.at(&[p, p]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_extremes() {
        // patch vectors: e0, e1 orthogonal; e0 vs -e0 antiparallel
        let a = Tensor::<f64>::from_vec(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::<f64>::from_vec(vec![1, 2, 2], vec![-1.0, 0.0, 0.0, 1.0]).unwrap();
        let mats = build_motion_matrices(&[a, b]).unwrap();
        let sq = mats[0].as_square();
        assert!((sq.at(&[0, 0]) + 1.0).abs() < 1e-12, "antiparallel -> -1");
        assert!(sq.at(&[0, 1]).abs() < 1e-12, "orthogonal -> 0");
        assert!((sq.at(&[1, 1]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_patch_guard() {
        let a = Tensor::from_vec(vec![1, 2, 1], vec![0.0, 1.0]).unwrap();
        let b = Tensor::from_vec(vec![1, 2, 1], vec![1.0, 1.0]).unwrap();
        let mats = build_motion_matrices(&[a, b]).unwrap();
        let sq = mats[0].as_square();
        assert_eq!(sq.at(&[0, 0]), 0.0);
        assert_eq!(sq.at(&[0, 1]), 0.0);
        assert_eq!(sq.at(&[1, 0]), 1.0);
    }

    #[test]
    fn raw_entries_in_cosine_range() {
        let mut rng = SplitMix64::new(11);
        let frames: Vec<Tensor<f64>> = (0..4)
            .map(|_| feat(4, 4, 8, |_| rng.range(-100.0, 100.0)))
            .collect();
        let mats = build_motion_matrices(&frames).unwrap();
        assert_eq!(mats.len(), 3);
        for m in &mats {
            for &v in m.values().data() {
                assert!((-1.0 - 1e-6..=1.0 + 1e-6).contains(&v));
            }
        }
    }

    #[test]
    fn matrix_count_and_shape_at_paper_scale() {
        // T=10 observed, 64x64, S=4 -> 9 matrices of (16,16,16,16)
        let mut rng = SplitMix64::new(5);
        let frames: Vec<Tensor<f64>> = (0..10)
            .map(|_| feat(16, 16, 4, |_| rng.uniform()))
            .collect();
        let mats = build_motion_matrices(&frames).unwrap();
        assert_eq!(mats.len(), 9);
        assert_eq!(mats[0].values().shape(), &[16, 16, 16, 16]);
    }

    #[test]
    fn normalize_rows_sum_to_one_and_double_normalize_errors() {
        let mut rng = SplitMix64::new(8);
        let frames: Vec<Tensor<f64>> = (0..2)
            .map(|_| feat(3, 3, 4, |_| rng.range(-2.0, 2.0)))
            .collect();
        let raw = build_motion_matrices(&frames).unwrap().remove(0);
        assert!(!raw.is_normalized());
        let norm = normalize_matrix(&raw).unwrap();
        assert!(norm.is_normalized());
        let sq = norm.as_square();
        for p in 0..9 {
            let mut s = 0.0;
            for q in 0..9 {
                let v = sq.at(&[p, q]);
                assert!(v >= 0.0);
                s += v;
            }
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert!(normalize_matrix(&norm).is_err());
    }

    #[test]
    fn uniform_raw_matrix_normalizes_to_uniform() {
        let m = MotionMatrix::new_raw(Tensor::<f64>::full(&[2, 2, 2, 2], 3.7));
        let n = normalize_matrix(&m).unwrap();
        for &v in n.values().data() {
            assert!((v - 1.0 / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_row_saturates_after_softmax() {
        let mut vals = vec![0.0f64; 16];
        vals[2] = 50.0; // row 0, column 2
        let m = MotionMatrix::new_raw(Tensor::from_vec(vec![2, 2, 2, 2], vals).unwrap());
        let n = normalize_matrix(&m).unwrap().as_square();
        assert!(n.at(&[0, 2]) > 1.0 - 1e-6);
    }

    #[test]
    fn row_heatmap_extracts_target_slice() {
        let mut rng = SplitMix64::new(2);
        let m = MotionMatrix::new_raw(Tensor::<f64>::from_fn(&[2, 3, 2, 3], |_| rng.uniform()));
        let hm = m.row_heatmap(1, 2);
        assert_eq!(hm.shape(), &[2, 3]);
        assert_eq!(hm.at(&[1, 0]), m.values().at(&[1, 2, 1, 0]));
    }
}
