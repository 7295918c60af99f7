//! Pixel shuffle / unshuffle: lossless space-to-depth permutations that move
//! any feature scale (or the raw frame) onto the motion-matrix grid and back.

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Var};

/// (N, H, W, C) -> (N, H/r, W/r, C·r²); output channel index is
/// c·r² + dy·r + dx for source offset (dy, dx) inside each r x r cell.
pub fn pixel_unshuffle<E: Element>(g: &Graph<E>, x: Var, r: usize) -> Result<Var> {
    if r == 0 {
        return Err(Error::Invalid("pixel_unshuffle factor must be >= 1".into()));
    }
    if r == 1 {
        return Ok(x);
    }
    let shape = g.shape(x);
    let [n, h, w, c] = shape[..] else {
        return Err(Error::Invalid(format!(
            "pixel_unshuffle expects rank 4 (N,H,W,C), got {shape:?}"
        )));
    };
    if h % r != 0 || w % r != 0 {
        return Err(Error::Invalid(format!(
            "pixel_unshuffle: H={h}, W={w} not divisible by r={r}"
        )));
    }
    let (y, xg) = (h / r, w / r);
    let v = g.reshape(x, &[n, y, r, xg, r, c])?;
    let v = g.permute(v, &[0, 1, 3, 5, 2, 4])?; // (N, Y, X, C, dy, dx)
    g.reshape(v, &[n, y, xg, c * r * r])
}

/// (N, h, w, C·r²) -> (N, h·r, w·r, C); exact inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle<E: Element>(g: &Graph<E>, x: Var, r: usize) -> Result<Var> {
    if r == 0 {
        return Err(Error::Invalid("pixel_shuffle factor must be >= 1".into()));
    }
    if r == 1 {
        return Ok(x);
    }
    let shape = g.shape(x);
    let [n, h, w, ct] = shape[..] else {
        return Err(Error::Invalid(format!(
            "pixel_shuffle expects rank 4 (N,h,w,C·r²), got {shape:?}"
        )));
    };
    if ct % (r * r) != 0 {
        return Err(Error::Invalid(format!(
            "pixel_shuffle: {ct} channels not divisible by r²={}",
            r * r
        )));
    }
    let c = ct / (r * r);
    let v = g.reshape(x, &[n, h, w, c, r, r])?;
    let v = g.permute(v, &[0, 1, 4, 2, 5, 3])?; // (N, h, dy, w, dx, C)
    g.reshape(v, &[n, h * r, w * r, c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplitMix64;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
        let mut rng = SplitMix64::new(seed);
        Tensor::from_fn(shape, |_| rng.uniform() as f32)
    }

    #[test]
    fn factor_one_is_identity() {
        let g = Graph::new();
        let t = random(&[1, 4, 4, 2], 1);
        let x = g.constant(t.clone());
        let u = pixel_unshuffle(&g, x, 1).unwrap();
        let s = pixel_shuffle(&g, x, 1).unwrap();
        assert!(g.value(u).bit_eq(&t));
        assert!(g.value(s).bit_eq(&t));
    }

    #[test]
    fn unshuffle_index_mapping() {
        // one-channel 4x4 input, r=2: element at (y=0, x=1) lands at
        // channel c·r²+dy·r+dx = 1, grid position (0,0)
        let g = Graph::new();
        let t = Tensor::<f32>::from_fn(&[1, 4, 4, 1], |i| i as f32);
        let x = g.constant(t.clone());
        let u = pixel_unshuffle(&g, x, 2).unwrap();
        let out = g.value(u);
        assert_eq!(out.shape(), &[1, 2, 2, 4]);
        assert_eq!(out.at(&[0, 0, 0, 1]), t.at(&[0, 0, 1, 0]));
        // and the full mapping
        for y in 0..2 {
            for xg in 0..2 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        assert_eq!(
                            out.at(&[0, y, xg, dy * 2 + dx]),
                            t.at(&[0, y * 2 + dy, xg * 2 + dx, 0])
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn shuffle_shape_arithmetic() {
        let g = Graph::new();
        let x = g.constant(random(&[1, 2, 2, 8], 3));
        let s = pixel_shuffle(&g, x, 2).unwrap();
        assert_eq!(g.shape(s), vec![1, 4, 4, 2]);
    }

    #[test]
    fn round_trip_bit_exact_all_factors() {
        for &r in &[1usize, 2, 4, 8] {
            let t = random(&[2, 8, 16, 3], r as u64);
            let g = Graph::new();
            let x = g.constant(t.clone());
            let u = pixel_unshuffle(&g, x, r).unwrap();
            let back = pixel_shuffle(&g, u, r).unwrap();
            assert!(g.value(back).bit_eq(&t), "r={r}");
            // and the other order
            let s = pixel_shuffle(&g, u, r).unwrap();
            let again = pixel_unshuffle(&g, s, r).unwrap();
            assert!(g.value(again).bit_eq(&g.value(u)), "r={r}");
        }
    }

    #[test]
    fn unshuffle_is_a_permutation_of_elements() {
        let t = random(&[1, 6, 6, 2], 9);
        let g = Graph::new();
        let u = pixel_unshuffle(&g, g.constant(t.clone()), 3).unwrap();
        let mut a: Vec<u32> = t.data().iter().map(|x| x.to_bits()).collect();
        let mut b: Vec<u32> = g.value(u).data().iter().map(|x| x.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn errors_name_offending_dims() {
        let g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[1, 5, 4, 1]));
        let msg = pixel_unshuffle(&g, x, 2).unwrap_err().to_string();
        assert!(msg.contains("H=5") && msg.contains("W=4") && msg.contains("r=2"), "{msg}");
        let y = g.constant(Tensor::zeros(&[1, 2, 2, 6]));
        assert!(pixel_shuffle(&g, y, 2).is_err());
    }

    #[test]
    fn gradients_flow_through_shuffles() {
        let t = random(&[1, 4, 4, 4], 17).cast::<f64>();
        let err = crate::tensor::check::finite_diff_check(
            |g, v| {
                let u = pixel_unshuffle(g, v, 2)?;
                let s = pixel_shuffle(g, u, 4)?;
                let w = g.constant(Tensor::from_fn(&[1, 8, 8, 1], |i| ((i % 13) as f64).sin()));
                Ok(g.sum(g.mul(s, w)?))
            },
            &t,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    proptest! {
        #[test]
        fn prop_round_trip(seed in 0u64..1000, r in prop::sample::select(vec![1usize, 2, 4]), c in 1usize..4) {
            let t = random(&[1, 8, 8, c], seed);
            let g = Graph::new();
            let x = g.constant(t.clone());
            let u = pixel_unshuffle(&g, x, r).unwrap();
            let back = pixel_shuffle(&g, u, r).unwrap();
            prop_assert!(g.value(back).bit_eq(&t));
        }
    }
}
