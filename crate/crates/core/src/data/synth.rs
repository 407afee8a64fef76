use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use super::{Mask, RasterImage};
use crate::{Error, Result};

pub const BACKGROUND_INTENSITY: f64 = 0.15;
pub const BUILDING_INTENSITY: f64 = 0.65;

const MIN_SIDE: usize = 4;
const MAX_SIDE: usize = 32;

/// Generates a SAR-like scene: bright axis-aligned rectangles (buildings) on a
/// dark background, multiplied by unit-mean gamma speckle with shape `looks`
/// and clipped to `[0, 1]`. Passing `f64::INFINITY` for `looks` disables
/// speckle. The mask marks the union of rectangles.
pub fn synth_scene(
    seed: u64,
    height: usize,
    width: usize,
    n_buildings: usize,
    looks: f64,
) -> Result<(RasterImage, Mask)> {
    if height < MAX_SIDE || width < MAX_SIDE {
        return Err(Error::Size(format!(
            "synthetic scenes need at least {MAX_SIDE}x{MAX_SIDE} pixels, got {height}x{width}"
        )));
    }
    if looks.is_nan() || looks < 1.0 {
        return Err(Error::Config(format!("looks must be >= 1, got {looks}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = Mask::zeros(height, width);
    for _ in 0..n_buildings {
        let bh = rng.random_range(MIN_SIDE..=MAX_SIDE);
        let bw = rng.random_range(MIN_SIDE..=MAX_SIDE);
        let top = rng.random_range(0..=height - bh);
        let left = rng.random_range(0..=width - bw);
        for r in top..top + bh {
            for c in left..left + bw {
                mask.set(r, c, true);
            }
        }
    }

    let speckle = if looks.is_finite() {
        Some(Gamma::new(looks, 1.0 / looks).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let data = mask
        .data()
        .iter()
        .map(|&m| {
            let mean = if m == 1 { BUILDING_INTENSITY } else { BACKGROUND_INTENSITY };
            match &speckle {
                Some(g) => (mean * g.sample(&mut rng)).clamp(0.0, 1.0),
                None => mean,
            }
        })
        .collect();
    Ok((RasterImage::new(height, width, data)?, mask))
}
