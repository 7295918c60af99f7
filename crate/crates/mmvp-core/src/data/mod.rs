//! Deterministic synthetic bouncing-sprites sequences (a Moving-MNIST
//! analogue with procedural glyphs) and the packed dataset container.

mod format;
mod prng;

pub use format::{read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use prng::{splitmix64, SplitMix64};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GLYPH_SIZE: usize = 16;
pub const GLYPH_COUNT: u64 = 10;

/// One moving sprite: glyph id, top-left position and velocity in pixels.
#[derive(Clone, Copy, Debug)]
pub struct SpriteSpec {
    pub glyph_id: u8,
    pub position: (f64, f64),
    pub velocity: (f64, f64),
}

/// Packed u8 video sequences, frames normalized to [0,1] on load.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceDataset {
    pub num_sequences: u32,
    pub seq_len: u32,
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub data: Vec<u8>,
}

impl SequenceDataset {
    pub fn frame_len(&self) -> usize {
        (self.height * self.width * self.channels) as usize
    }

    pub fn frame_bytes(&self, seq: usize, t: usize) -> &[u8] {
        let fl = self.frame_len();
        let off = (seq * self.seq_len as usize + t) * fl;
        &self.data[off..off + fl]
    }

    /// Frames [t0, t0+count) of one sequence as an (count, H, W, C) tensor
    /// with intensities value/255.
    pub fn frames_f32(&self, seq: usize, t0: usize, count: usize) -> Tensor<f32> {
        let fl = self.frame_len();
        let mut out = Vec::with_capacity(count * fl);
        for t in t0..t0 + count {
            out.extend(self.frame_bytes(seq, t).iter().map(|&b| b as f32 / 255.0));
        }
        Tensor::from_vec(
            vec![
                count,
                self.height as usize,
                self.width as usize,
                self.channels as usize,
            ],
            out,
        )
        .expect("frame arithmetic")
    }

    /// Quantizes [0,1] frames back to u8 (used when writing predictions).
    pub fn from_frames_f32(frames: &[Tensor<f32>], height: u32, width: u32, channels: u32) -> Self {
        let seq_len = frames
            .first()
            .map(|f| f.shape()[0] as u32)
            .unwrap_or_default();
        let mut data = Vec::new();
        for f in frames {
            data.extend(
                f.data()
                    .iter()
                    .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
            );
        }
        Self {
            num_sequences: frames.len() as u32,
            seq_len,
            height,
            width,
            channels,
            data,
        }
    }
}

/// 16x16 procedural glyph bitmaps, intensity 255 on 0 background.
pub fn glyph(id: u8) -> [u8; GLYPH_SIZE * GLYPH_SIZE] {
    let mut g = [0u8; GLYPH_SIZE * GLYPH_SIZE];
    let c = 7.5f64;
    for y in 0..GLYPH_SIZE {
        for x in 0..GLYPH_SIZE {
            let (dx, dy) = (x as f64 - c, y as f64 - c);
            let r2 = dx * dx + dy * dy;
            let on = match id {
                0 => r2 <= 6.5 * 6.5,                                   // disk
                1 => (3.5 * 3.5..=6.5 * 6.5).contains(&r2),             // ring
                2 => (2..=13).contains(&x) && (2..=13).contains(&y),    // square
                3 => {
                    // frame: square border of thickness 3
                    (2..=13).contains(&x)
                        && (2..=13).contains(&y)
                        && !((5..=10).contains(&x) && (5..=10).contains(&y))
                }
                4 => {
                    // cross
                    ((6..=9).contains(&y) && (1..=14).contains(&x))
                        || ((6..=9).contains(&x) && (1..=14).contains(&y))
                }
                5 => {
                    // X: both diagonals
                    (x as f64 - y as f64).abs() <= 1.5 || (x as f64 + y as f64 - 15.0).abs() <= 1.5
                }
                6 => {
                    // upward triangle
                    (2..=13).contains(&y) && dx.abs() <= (y as f64 - 1.5) * 0.54
                }
                7 => dx.abs() + dy.abs() <= 6.5,                        // diamond
                8 => (6..=9).contains(&y) && (1..=14).contains(&x),     // H-bar
                9 => (6..=9).contains(&x) && (1..=14).contains(&y),     // V-bar
                _ => unreachable!("glyph id out of range"),
            };
            if on {
                g[y * GLYPH_SIZE + x] = 255;
            }
        }
    }
    g
}

/// Reflects a coordinate into [0, max], negating the velocity component on
/// each boundary crossing; speed is preserved.
fn reflect(p: &mut f64, v: &mut f64, max: f64) {
    while *p < 0.0 || *p > max {
        if *p < 0.0 {
            *p = -*p;
            *v = -*v;
        } else {
            *p = 2.0 * max - *p;
            *v = -*v;
        }
    }
}

fn sample_sprites(
    rng: &mut SplitMix64,
    n_sprites: usize,
    h: usize,
    w: usize,
    speed_range: (f64, f64),
) -> Vec<SpriteSpec> {
    let (x_max, y_max) = ((w - GLYPH_SIZE) as f64, (h - GLYPH_SIZE) as f64);
    (0..n_sprites)
        .map(|_| {
            // fixed draw order: glyph, x, y, angle, speed
            let glyph_id = rng.below(GLYPH_COUNT) as u8;
            let x = rng.range(0.0, x_max.max(f64::MIN_POSITIVE));
            let y = rng.range(0.0, y_max.max(f64::MIN_POSITIVE));
            let angle = rng.range(0.0, std::f64::consts::TAU);
            let speed = rng.range(speed_range.0, speed_range.1);
            SpriteSpec {
                glyph_id,
                position: (x, y),
                velocity: (speed * angle.cos(), speed * angle.sin()),
            }
        })
        .collect()
}

fn render_frame(sprites: &[SpriteSpec], _h: usize, w: usize, frame: &mut [u8]) {
    frame.fill(0);
    for s in sprites {
        let ix = s.position.0.round() as usize;
        let iy = s.position.1.round() as usize;
        let bitmap = glyph(s.glyph_id);
        for gy in 0..GLYPH_SIZE {
            let row = &mut frame[(iy + gy) * w + ix..(iy + gy) * w + ix + GLYPH_SIZE];
            for (dst, &src) in row.iter_mut().zip(&bitmap[gy * GLYPH_SIZE..]) {
                *dst = (*dst).max(src); // overlapping sprites saturate
            }
        }
    }
}

fn generate_one(
    seed: u64,
    index: u64,
    seq_len: usize,
    h: usize,
    w: usize,
    n_sprites: usize,
    speed_range: (f64, f64),
) -> Vec<u8> {
    let mut rng = SplitMix64::derive(seed, index);
    let mut sprites = sample_sprites(&mut rng, n_sprites, h, w, speed_range);
    let (x_max, y_max) = ((w - GLYPH_SIZE) as f64, (h - GLYPH_SIZE) as f64);
    let mut out = vec![0u8; seq_len * h * w];
    for t in 0..seq_len {
        render_frame(&sprites, h, w, &mut out[t * h * w..(t + 1) * h * w]);
        for s in &mut sprites {
            s.position.0 += s.velocity.0;
            s.position.1 += s.velocity.1;
            reflect(&mut s.position.0, &mut s.velocity.0, x_max);
            reflect(&mut s.position.1, &mut s.velocity.1, y_max);
        }
    }
    out
}

/// Deterministic dataset generation: a pure function of its arguments.
/// Sequence `i` draws from the sub-stream seeded with `seed ^ splitmix(i)`,
/// so parallel generation is bit-identical to serial.
pub fn generate_sequences(
    seed: u64,
    count: usize,
    seq_len: usize,
    height: usize,
    width: usize,
    n_sprites: usize,
) -> Result<SequenceDataset> {
    generate_with_speed(seed, count, seq_len, height, width, n_sprites, (2.0, 4.0))
}

/// Like [`generate_sequences`] with an explicit initial speed range
/// (`(0.0, 0.0)` gives static scenes, useful for baseline tests).
pub fn generate_with_speed(
    seed: u64,
    count: usize,
    seq_len: usize,
    height: usize,
    width: usize,
    n_sprites: usize,
    speed_range: (f64, f64),
) -> Result<SequenceDataset> {
    if height < GLYPH_SIZE || width < GLYPH_SIZE {
        return Err(Error::Invalid(format!(
            "frame {height}x{width} cannot fit a {GLYPH_SIZE}x{GLYPH_SIZE} glyph"
        )));
    }
    if count == 0 || seq_len == 0 || n_sprites == 0 {
        return Err(Error::Invalid(
            "count, seq_len and n_sprites must all be >= 1".into(),
        ));
    }
    let per_seq = seq_len * height * width;
    let chunks: Vec<Vec<u8>> = (0..count)
        .into_par_iter()
        .map(|i| {
            generate_one(
                seed,
                i as u64,
                seq_len,
                height,
                width,
                n_sprites,
                speed_range,
            )
        })
        .collect();
    let mut data = Vec::with_capacity(count * per_seq);
    for c in chunks {
        data.extend_from_slice(&c);
    }
    Ok(SequenceDataset {
        num_sequences: count as u32,
        seq_len: seq_len as u32,
        height: height as u32,
        width: width as u32,
        channels: 1,
        data,
    })
}
