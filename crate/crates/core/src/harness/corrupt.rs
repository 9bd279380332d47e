//! Synthetic image corruptions, a small stand-in for common-corruption
//! benchmarks. Every kind takes a severity in `1..=5` and is deterministic
//! for a given seed. Outputs are clamped to `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionKind {
    GaussianNoise,
    ImpulseNoise,
    BoxBlur,
    Contrast,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::BoxBlur,
        CorruptionKind::Contrast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::BoxBlur => "box_blur",
            CorruptionKind::Contrast => "contrast",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown corruption kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

pub fn corrupt(image: &Image, spec: &CorruptionSpec) -> Result<Image> {
    if !(1..=5).contains(&spec.severity) {
        return Err(Error::Invalid(format!(
            "severity {} outside 1..=5",
            spec.severity
        )));
    }
    let s = spec.severity as f64;
    let mut rng = SplitMix64::new(spec.seed);
    let mut out = image.clone();
    match spec.kind {
        CorruptionKind::GaussianNoise => {
            let sigma = 0.04 * s;
            for v in &mut out.data {
                *v += sigma * rng.normal();
            }
        }
        CorruptionKind::ImpulseNoise => {
            let frac = 0.01 * s;
            for v in &mut out.data {
                if rng.uniform() < frac {
                    *v = if rng.uniform() < 0.5 { 0.0 } else { 1.0 };
                }
            }
        }
        CorruptionKind::BoxBlur => box_blur(image, &mut out, spec.severity as usize),
        CorruptionKind::Contrast => {
            let factor = 1.0 - 0.12 * s;
            let c = image.channels;
            let pixels = (image.height * image.width) as f64;
            for ch in 0..c {
                let mean = image.data.iter().skip(ch).step_by(c).sum::<f64>() / pixels;
                for v in out.data.iter_mut().skip(ch).step_by(c) {
                    *v = mean + (*v - mean) * factor;
                }
            }
        }
    }
    for v in &mut out.data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// `(2r+1)^2` box average per channel; windows are cut at the border and
/// averaged over the pixels they still cover.
fn box_blur(src: &Image, dst: &mut Image, radius: usize) {
    let (h, w, c) = (src.height, src.width, src.channels);
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(h - 1));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(radius), (x + radius).min(w - 1));
            let count = ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
            for ch in 0..c {
                let mut sum = 0.0;
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        sum += src.get(yy, xx, ch);
                    }
                }
                dst.data[(y * w + x) * c + ch] = sum / count;
            }
        }
    }
}
