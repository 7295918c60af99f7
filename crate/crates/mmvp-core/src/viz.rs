//! Motion-matrix heatmap rendering: min-max scaled, nearest-neighbor
//! upsampled binary PGM images, plus overlays on ground-truth frames.

use std::path::{Path, PathBuf};

use crate::data::SequenceDataset;
use crate::error::{Error, Result};
use crate::model::MmvpModel;
use crate::tensor::Tensor;

/// Min-max scales a (gh, gw) heatmap to [0, 255] (a degenerate range maps
/// to mid-gray 128) and upsamples to (out_h, out_w) by nearest neighbor.
pub fn heatmap_bytes(row: &Tensor<f32>, out_h: usize, out_w: usize) -> Vec<u8> {
    let [gh, gw] = row.shape() else {
        panic!("heatmap must be rank 2, got {:?}", row.shape());
    };
    let (gh, gw) = (*gh, *gw);
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for &v in row.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = hi - lo;
    let scaled: Vec<u8> = if range < 1e-12 {
        vec![128u8; gh * gw]
    } else {
        row.data()
            .iter()
            .map(|&v| (((v - lo) / range) * 255.0).round() as u8)
            .collect()
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let sy = y * gh / out_h;
        for x in 0..out_w {
            let sx = x * gw / out_w;
            out.push(scaled[sy * gw + sx]);
        }
    }
    out
}

/// Binary PGM: header "P5\n{W} {H}\n255\n" followed by row-major bytes.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    bytes
}

/// For each future step j, renders the normalized predicted matrix row at
/// `patch` as `heatmap_{j:02}.pgm` (exactly T' files), plus
/// `overlay_{j:02}.pgm` blended 50/50 with the ground-truth future frame
/// when the dataset contains it. Returns the heatmap paths.
pub fn dump_heatmaps(
    model: &MmvpModel<f32>,
    ds: &SequenceDataset,
    seq: usize,
    patch: (usize, usize),
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let cfg = &model.cfg;
    if seq >= ds.num_sequences as usize {
        return Err(Error::Invalid(format!(
            "sequence {seq} out of range ({} sequences)",
            ds.num_sequences
        )));
    }
    if (ds.seq_len as usize) < cfg.t_obs {
        return Err(Error::Invalid(format!(
            "sequence length {} shorter than T = {}",
            ds.seq_len, cfg.t_obs
        )));
    }
    let (gh, gw) = cfg.grid();
    if patch.0 >= gh || patch.1 >= gw {
        return Err(Error::Invalid(format!(
            "patch ({}, {}) outside the {gh}x{gw} grid",
            patch.0, patch.1
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let frames = ds.frames_f32(seq, 0, cfg.t_obs);
    let mats = model.predicted_matrices(&frames)?;
    let (h, w) = (cfg.height, cfg.width);
    let mut paths = Vec::with_capacity(mats.len());
    for (j, m) in mats.iter().enumerate() {
        let heat = heatmap_bytes(&m.row_heatmap(patch.0, patch.1).cast(), h, w);
        let path = out_dir.join(format!("heatmap_{j:02}.pgm"));
        std::fs::write(&path, encode_pgm(w, h, &heat))?;
        paths.push(path);
        let future_t = cfg.t_obs + j;
        if future_t < ds.seq_len as usize {
            let frame = ds.frame_bytes(seq, future_t);
            let blended: Vec<u8> = frame
                .iter()
                .zip(&heat)
                .map(|(&f, &hv)| ((f as u16 + hv as u16) / 2) as u8)
                .collect();
            let opath = out_dir.join(format!("overlay_{j:02}.pgm"));
            std::fs::write(&opath, encode_pgm(w, h, &blended))?;
        }
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_is_exact() {
        let bytes = encode_pgm(64, 64, &[0u8; 64 * 64]);
        assert!(bytes.starts_with(b"P5\n64 64\n255\n"));
        assert_eq!(bytes.len(), 13 + 4096);
    }

    #[test]
    fn degenerate_range_maps_to_mid_gray() {
        let row = Tensor::<f32>::full(&[4, 4], 0.0625);
        let px = heatmap_bytes(&row, 8, 8);
        assert!(px.iter().all(|&b| b == 128));
    }

    #[test]
    fn one_hot_row_renders_single_saturated_patch() {
        let mut v = vec![0.0f32; 16];
        v[5] = 1.0; // grid position (1, 1) of a 4x4 grid
        let row = Tensor::from_vec(vec![4, 4], v).unwrap();
        let px = heatmap_bytes(&row, 16, 16);
        let saturated: usize = px.iter().filter(|&&b| b == 255).count();
        assert_eq!(saturated, 16, "one 4x4 block of a 16x16 image");
        // block lives at rows 4..8, cols 4..8
        for y in 0..16 {
            for x in 0..16 {
                let expect = ((4..8).contains(&y) && (4..8).contains(&x)) as u8 * 255;
                assert_eq!(px[y * 16 + x], expect);
            }
        }
    }

    #[test]
    fn nearest_neighbor_upsampling_indexing() {
        let row = Tensor::from_vec(vec![2, 2], vec![0.0f32, 1.0, 0.5, 0.25]).unwrap();
        let px = heatmap_bytes(&row, 4, 4);
        // top-left 2x2 block comes from source (0,0) = 0.0 -> 0
        assert_eq!(px[0], 0);
        assert_eq!(px[5], 0);
        // top-right block from (0,1) = 1.0 -> 255
        assert_eq!(px[2], 255);
        assert_eq!(px[7], 255);
    }
}
