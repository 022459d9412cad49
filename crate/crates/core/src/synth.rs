//! Procedural test scenes: smooth, colourful content with controllable exposure.
//!
//! Used by the examples and tests when no photographs are at hand.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::image_io::{self, Image};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exposure {
    /// Scaled down and gamma-darkened; mean intensity well below mid-grey.
    Under(f32),
    /// Pushed towards white.
    Over(f32),
    Normal,
}

impl Exposure {
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Exposure::Under(k) => (k * v.powf(1.3)).clamp(0.0, 1.0),
            Exposure::Over(k) => (1.0 - (1.0 - v) * k).clamp(0.0, 1.0),
            Exposure::Normal => v,
        }
    }
}

struct Blob {
    cx: f32,
    cy: f32,
    radius: f32,
    colour: [f32; 3],
}

/// A well-exposed scene of soft gradients, blobs and stripes; values in `[0.05, 0.95]`.
pub fn scene(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.6));
    let tilt: [f32; 3] = std::array::from_fn(|_| rng.random_range(-0.25..0.25));
    let blobs: Vec<Blob> = (0..rng.random_range(3..7))
        .map(|_| Blob {
            cx: rng.random_range(0.0..1.0),
            cy: rng.random_range(0.0..1.0),
            radius: rng.random_range(0.08..0.3),
            colour: std::array::from_fn(|_| rng.random_range(-0.35..0.35)),
        })
        .collect();
    let freq = rng.random_range(2.0..7.0f32);
    let phase = rng.random_range(0.0..6.28f32);
    let stripe: f32 = rng.random_range(0.0..0.08);
    Image::from_fn(width, height, |x, y, c| {
        let u = x as f32 / width.max(2).saturating_sub(1) as f32;
        let v = y as f32 / height.max(2).saturating_sub(1) as f32;
        let mut val = base[c] + tilt[c] * (u - v);
        for b in &blobs {
            let d2 = (u - b.cx).powi(2) + (v - b.cy).powi(2);
            val += b.colour[c] * (-d2 / (2.0 * b.radius * b.radius)).exp();
        }
        val += stripe * (freq * 6.28 * (u + 0.5 * v) + phase).sin();
        val.clamp(0.05, 0.95)
    })
    .expect("generated in range")
}

pub fn expose(img: &Image, exposure: Exposure) -> Image {
    let data = img.data().iter().map(|&v| exposure.apply(v)).collect();
    Image::new(img.width(), img.height(), data).expect("exposure keeps range")
}

/// Alternating under- and over-exposed renderings of distinct scenes.
pub fn mixed_exposure_set(count: usize, size: usize, seed: u64) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..count)
        .map(|i| {
            let s = scene(size, size, seed.wrapping_mul(1000).wrapping_add(i as u64));
            let e = if i % 2 == 0 {
                Exposure::Under(rng.random_range(0.12..0.35))
            } else {
                Exposure::Over(rng.random_range(0.25..0.55))
            };
            expose(&s, e)
        })
        .collect()
}

/// Writes [`mixed_exposure_set`] as `scene_000.png`, `scene_001.png`, ...
pub fn write_mixed_exposure_set(dir: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(crate::error::ImageError::Io)?;
    for (i, img) in mixed_exposure_set(count, size, seed).iter().enumerate() {
        image_io::save(img, dir.join(format!("scene_{i:03}.png")))?;
    }
    Ok(())
}
