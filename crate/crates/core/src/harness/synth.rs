//! Seeded synthetic images: a colour gradient plus a few Gaussian blobs.

use crate::config::ModelConfig;
use crate::image::Image;
use crate::rng::SplitMix64;

pub fn synthetic_image(side: usize, channels: usize, rng: &mut SplitMix64) -> Image {
    let base: Vec<f64> = (0..channels).map(|_| 0.2 + 0.4 * rng.uniform()).collect();
    let tilt: Vec<(f64, f64)> = (0..channels)
        .map(|_| (rng.uniform() - 0.5, rng.uniform() - 0.5))
        .collect();
    let blobs: Vec<(f64, f64, f64, Vec<f64>)> = (0..3)
        .map(|_| {
            let cy = rng.uniform() * side as f64;
            let cx = rng.uniform() * side as f64;
            let radius = side as f64 * (0.08 + 0.2 * rng.uniform());
            let colour = (0..channels).map(|_| rng.uniform() - 0.5).collect();
            (cy, cx, radius, colour)
        })
        .collect();

    let mut data = Vec::with_capacity(side * side * channels);
    let inv = 1.0 / side as f64;
    for y in 0..side {
        for x in 0..side {
            for ch in 0..channels {
                let (ty, tx) = tilt[ch];
                let mut v = base[ch] + ty * y as f64 * inv + tx * x as f64 * inv;
                for (cy, cx, r, colour) in &blobs {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    v += colour[ch] * libm::exp(-d2 / (2.0 * r * r));
                }
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Image {
        height: side,
        width: side,
        channels,
        data,
    }
}

/// `count` images for `config`, one forked stream per image.
pub fn synthetic_batch(config: &ModelConfig, count: usize, seed: u64) -> Vec<Image> {
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| synthetic_image(config.image, config.channels, &mut rng.fork()))
        .collect()
}
