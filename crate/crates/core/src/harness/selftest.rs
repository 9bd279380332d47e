//! Built-in oracle suite behind the `selftest` subcommand.
//!
//! The reference computations here are deliberately naive (explicit loops,
//! materialized outer products) and share no code with the engine paths
//! they check.

use crate::config::ModelConfig;
use crate::error::Result;
use crate::model_io::random_init;
use crate::moran::spatial_scores;
use crate::rng::SplitMix64;
use crate::sata::split_tokens;
use crate::tensor::{row_softmax, Matrix};

use super::format::{csv, g9};
use super::synth::synthetic_batch;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub violations: usize,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.max_error <= self.tolerance
    }
}

/// Local Moran scores by materializing `z z^T`, multiplying by `W` with a
/// triple loop and reading the diagonal, followed by plain-loop
/// normalizations.
pub fn naive_scores(x: &Matrix, w: &Matrix) -> Vec<f64> {
    let n = x.rows();
    let d = x.cols();
    let mut a = vec![0.0; n];
    for i in 0..n {
        for t in 0..d {
            a[i] += x.get(i, t);
        }
        a[i] /= d as f64;
    }
    let z = naive_standardize(&a);
    let mut outer = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            outer[i][j] = z[i] * z[j];
        }
    }
    let mut local = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for k in 0..n {
            acc += outer[i][k] * w.get(k, i);
        }
        local[i] = acc;
    }
    naive_standardize(&local)
}

fn naive_standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mut mean = 0.0;
    for x in v {
        mean += x;
    }
    mean /= n;
    let mut var = 0.0;
    for x in v {
        var += (x - mean) * (x - mean);
    }
    let sd = (var / n).sqrt();
    if sd == 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - mean) / sd).collect()
}

fn random_matrix(rng: &mut SplitMix64, rows: usize, cols: usize, normal: bool) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| if normal { rng.normal() } else { rng.uniform() })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

pub fn check_moran_oracle(seed: u64, cases: usize) -> Result<CheckResult> {
    let mut rng = SplitMix64::new(seed);
    let mut max_error: f64 = 0.0;
    for _ in 0..cases {
        let n = 1 + rng.below(16);
        let d = 1 + rng.below(8);
        let x = random_matrix(&mut rng, n, d, true);
        let w = random_matrix(&mut rng, n, n, false);
        let got = spatial_scores(&x, &w)?.s;
        for (g, e) in got.iter().zip(naive_scores(&x, &w)) {
            max_error = max_error.max((g - e).abs());
        }
    }
    Ok(CheckResult {
        name: "moran_oracle",
        cases,
        max_error,
        violations: 0,
        tolerance: 1e-9,
    })
}

pub fn check_permutation(seed: u64, cases: usize) -> Result<CheckResult> {
    let mut rng = SplitMix64::new(seed);
    let mut max_error: f64 = 0.0;
    for _ in 0..cases {
        let n = 2 + rng.below(15);
        let d = 1 + rng.below(8);
        let x = random_matrix(&mut rng, n, d, true);
        let w = random_matrix(&mut rng, n, n, false);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.below(i + 1));
        }
        let xp = x.select_rows(&perm);
        let mut wp = Matrix::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                wp.set(r, c, w.get(perm[r], perm[c]));
            }
        }
        let s = spatial_scores(&x, &w)?.s;
        let sp = spatial_scores(&xp, &wp)?.s;
        for k in 0..n {
            max_error = max_error.max((sp[k] - s[perm[k]]).abs());
        }
    }
    Ok(CheckResult {
        name: "permutation_equivariance",
        cases,
        max_error,
        violations: 0,
        tolerance: 1e-12,
    })
}

pub fn check_split(seed: u64, cases: usize) -> Result<CheckResult> {
    let mut rng = SplitMix64::new(seed);
    let mut violations = 0;
    for _ in 0..cases {
        let n = 1 + rng.below(64);
        let x = random_matrix(&mut rng, n, 3, true);
        let w = random_matrix(&mut rng, n, n, false);
        let scores = spatial_scores(&x, &w)?;
        let alpha = 0.1 + 2.9 * rng.uniform();
        let split = split_tokens(&scores, alpha);
        let mut seen = vec![0u32; n];
        for &i in split.set_a.iter().chain(&split.set_b) {
            seen[i] += 1;
        }
        violations += seen.iter().filter(|&&c| c != 1).count();
        let lower = alpha * (scores.mean_s - scores.abs_median_s);
        let upper = alpha * (scores.mean_s + scores.abs_median_s);
        for &i in &split.set_b {
            let v = scores.s[i];
            if !(lower <= v && v <= upper) {
                violations += 1;
            }
        }
        for &i in &split.set_a {
            let v = scores.s[i];
            if lower <= v && v <= upper {
                violations += 1;
            }
        }
    }
    Ok(CheckResult {
        name: "split_partition",
        cases,
        max_error: 0.0,
        violations,
        tolerance: 0.0,
    })
}

pub fn check_softmax(seed: u64, cases: usize) -> Result<CheckResult> {
    let mut rng = SplitMix64::new(seed);
    let mut max_error: f64 = 0.0;
    for _ in 0..cases {
        let rows = 1 + rng.below(8);
        let cols = 1 + rng.below(32);
        let data = (0..rows * cols).map(|_| 100.0 * rng.uniform() - 50.0).collect();
        let p = row_softmax(&Matrix::from_vec(rows, cols, data)?);
        for row in p.iter_rows() {
            max_error = max_error.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    Ok(CheckResult {
        name: "softmax_rows",
        cases,
        max_error,
        violations: 0,
        tolerance: 1e-9,
    })
}

fn small_config() -> ModelConfig {
    ModelConfig {
        depth: 4,
        dim: 16,
        heads: 2,
        ffn_ratio: 2.0,
        patch: 4,
        image: 16,
        channels: 3,
        num_classes: 5,
        gamma: 0.5,
        alpha: 1.0,
        ..Default::default()
    }
}

/// Token counts are preserved and bypassed tokens leave the FFN sub-block
/// bit-for-bit unchanged.
pub fn check_restoration(seed: u64, cases: usize) -> Result<CheckResult> {
    let model = random_init(&small_config(), seed)?;
    let mut violations = 0;
    for img in synthetic_batch(&model.config, cases, seed ^ 0x5eed) {
        model.forward_inspect(&img, |view| {
            let before = &view.attention.features;
            if view.output.rows() != before.rows() {
                violations += 1;
            }
            if let Some(detail) = view.detail {
                for &r in &detail.plan.residuals {
                    let same = before
                        .row(r + 1)
                        .iter()
                        .zip(view.output.row(r + 1))
                        .all(|(a, b)| a.to_bits() == b.to_bits());
                    if !same {
                        violations += 1;
                    }
                }
                if view.trace.ffn_tokens != 1 + view.trace.n_b + view.trace.n_groups {
                    violations += 1;
                }
            }
        })?;
    }
    Ok(CheckResult {
        name: "restoration",
        cases,
        max_error: 0.0,
        violations,
        tolerance: 0.0,
    })
}

/// Plain ViT against the stage with a band wide enough to hold every token.
pub fn check_baseline_equivalence(seed: u64, cases: usize) -> Result<CheckResult> {
    let mut plain = random_init(&small_config(), seed)?;
    plain.config.sata_enabled = false;
    let mut wide = plain.clone();
    wide.config.sata_enabled = true;
    wide.config.alpha = 1e12;
    let mut max_error: f64 = 0.0;
    for img in synthetic_batch(&plain.config, cases, seed ^ 0xba5e) {
        let a = plain.forward(&img)?.logits;
        let b = wide.forward(&img)?.logits;
        for (x, y) in a.iter().zip(&b) {
            max_error = max_error.max((x - y).abs());
        }
    }
    Ok(CheckResult {
        name: "baseline_equivalence",
        cases,
        max_error,
        violations: 0,
        tolerance: 1e-9,
    })
}

pub fn run_selftest(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = SplitMix64::new(seed);
    Ok(vec![
        check_moran_oracle(rng.next_u64(), 100)?,
        check_permutation(rng.next_u64(), 50)?,
        check_split(rng.next_u64(), 1000)?,
        check_softmax(rng.next_u64(), 100)?,
        check_restoration(rng.next_u64(), 8)?,
        check_baseline_equivalence(rng.next_u64(), 4)?,
    ])
}

pub fn selftest_csv(results: &[CheckResult]) -> String {
    let header = ["check", "cases", "max_error", "violations", "status"].map(String::from);
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.name.to_string(),
                r.cases.to_string(),
                g9(r.max_error),
                r.violations.to_string(),
                if r.passed() { "pass" } else { "fail" }.to_string(),
            ]
        })
        .collect();
    csv(&header, &rows)
}
