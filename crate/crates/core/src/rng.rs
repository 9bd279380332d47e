//! SplitMix64 generator with Box-Muller normals.
//!
//! The algorithm is fixed so that seeded fixtures are reproducible on every
//! platform and from other languages:
//!
//! ```text
//! state <- state + 0x9E3779B97F4A7C15            (wrapping)
//! z <- state
//! z <- (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9      (wrapping)
//! z <- (z ^ (z >> 27)) * 0x94D049BB133111EB      (wrapping)
//! output z ^ (z >> 31)
//! ```
//!
//! `uniform()` is `(next >> 11) * 2^-53` in `[0, 1)`. `normal()` draws two
//! outputs `u1 = ((next >> 11) + 1) * 2^-53` in `(0, 1]` and `u2 = uniform()`
//! and returns `sqrt(-2 ln u1) * cos(2 pi u2)`; the sine branch is discarded.
//! `ln` and `cos` come from `libm` so results do not depend on the host libm.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * TWO_POW_M53;
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * std::f64::consts::PI * u2)
    }

    /// Uniform integer in `0..n`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        (self.uniform() * n as f64) as usize % n
    }

    /// Derives an independent stream, e.g. one per image in a batch.
    pub fn fork(&mut self) -> SplitMix64 {
        SplitMix64::new(self.next_u64())
    }
}
