//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process exits nonzero if any fail.
//!
//!     cargo test -p sata-core --test acceptance

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use sata_core::config::ModelConfig;
use sata_core::harness::synthetic_batch;
use sata_core::model_io::random_init;
use sata_core::moran::spatial_scores;
use sata_core::rng::SplitMix64;
use sata_core::sata::split_tokens;
use sata_core::tensor::Matrix;

type Outcome = Result<String, String>;

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("moran_oracle_equivalence", moran_oracle),
        ("baseline_equivalence", baseline_equivalence),
        ("restoration_invariant", restoration),
        ("ffn_load_reduction", ffn_load),
        ("permutation_equivariance", permutation),
        ("split_correctness", split_correctness),
        ("determinism", determinism),
        ("stability_completeness", stability_completeness),
        ("end_to_end_smoke", end_to_end),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---- fixtures ----------------------------------------------------------

fn random_matrix(rng: &mut SplitMix64, rows: usize, cols: usize, normal: bool) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| if normal { rng.normal() } else { rng.uniform() })
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn vit_8x32() -> ModelConfig {
    ModelConfig {
        depth: 8,
        dim: 32,
        heads: 4,
        gamma: 0.7,
        alpha: 1.0,
        sata_enabled: true,
        ..ModelConfig::default()
    }
}

/// Population z-score with a zero vector for constant input.
fn standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - mean) / sd).collect()
}

/// Local Moran scores the long way: token means, z, the full outer product
/// z z^T, the product with W by a triple loop, then its diagonal.
fn oracle_scores(x: &Matrix, w: &Matrix) -> Vec<f64> {
    let n = x.rows();
    let a: Vec<f64> = (0..n)
        .map(|i| (0..x.cols()).map(|t| x.get(i, t)).sum::<f64>() / x.cols() as f64)
        .collect();
    let z = standardize(&a);
    let mut prod = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                prod[i][j] += z[i] * z[k] * w.get(k, j);
            }
        }
    }
    let diag: Vec<f64> = (0..n).map(|i| prod[i][i]).collect();
    standardize(&diag)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

// ---- criteria ----------------------------------------------------------

fn moran_oracle() -> Outcome {
    let mut rng = SplitMix64::new(0x0a11_ce);
    let start = Instant::now();
    let mut max_err: f64 = 0.0;
    for _ in 0..100 {
        let n = 1 + rng.below(16);
        let d = 1 + rng.below(8);
        let x = random_matrix(&mut rng, n, d, true);
        let w = random_matrix(&mut rng, n, n, false);
        let got = spatial_scores(&x, &w).map_err(|e| e.to_string())?.s;
        for (g, e) in got.iter().zip(oracle_scores(&x, &w)) {
            max_err = max_err.max((g - e).abs());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let detail = format!("max error {max_err:.3e} (< 1e-9), {elapsed:.3}s (< 1s)");
    if max_err < 1e-9 && elapsed < 1.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn baseline_equivalence() -> Outcome {
    let mut plain = random_init(&vit_8x32(), 11).map_err(|e| e.to_string())?;
    plain.config.sata_enabled = false;
    let mut wide = plain.clone();
    wide.config.sata_enabled = true;
    wide.config.alpha = 1e12;
    let mut linf: f64 = 0.0;
    for img in synthetic_batch(&plain.config, 10, 12) {
        let a = plain.forward(&img).map_err(|e| e.to_string())?.logits;
        let b = wide.forward(&img).map_err(|e| e.to_string())?;
        if b.traces.iter().any(|t| t.sata_active && t.n_a != 0) {
            return Err("band did not cover every token".into());
        }
        for (x, y) in a.iter().zip(&b.logits) {
            linf = linf.max((x - y).abs());
        }
    }
    let detail = format!("logit L-inf {linf:.3e} (< 1e-9) over 10 images");
    if linf < 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn restoration() -> Outcome {
    let model = random_init(&vit_8x32(), 21).map_err(|e| e.to_string())?;
    let n_all = model.config.num_tokens();
    let mut count_bad = 0;
    let mut row_bad = 0;
    let mut residual_rows = 0;
    for img in synthetic_batch(&model.config, 50, 22) {
        model
            .forward_inspect(&img, |v| {
                if v.output.rows() != v.attention.features.rows() || v.output.rows() != n_all {
                    count_bad += 1;
                }
                if let Some(detail) = v.detail {
                    for &r in &detail.plan.residuals {
                        residual_rows += 1;
                        let before = v.attention.features.row(r + 1);
                        let after = v.output.row(r + 1);
                        if before.iter().zip(after).any(|(a, b)| a.to_bits() != b.to_bits()) {
                            row_bad += 1;
                        }
                    }
                }
            })
            .map_err(|e| e.to_string())?;
    }
    let detail = format!(
        "50 forwards, {count_bad} token-count mismatches, {row_bad}/{residual_rows} residual rows changed"
    );
    if count_bad == 0 && row_bad == 0 && residual_rows > 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ffn_load() -> Outcome {
    let model = random_init(&vit_8x32(), 21).map_err(|e| e.to_string())?;
    let cfg = &model.config;
    let n_all = cfg.num_tokens();
    let (d, h) = (cfg.dim as u64, cfg.hidden() as u64);
    let mut qualifying = 0;
    let mut violations = 0;
    for img in synthetic_batch(cfg, 50, 22) {
        let out = model.forward(&img).map_err(|e| e.to_string())?;
        for t in out.traces.iter().filter(|t| t.sata_active) {
            let expected = 2 * t.ffn_tokens as u64 * (d * h + h * d);
            if t.ffn_flops != expected {
                violations += 1;
            }
            if t.n_a >= 2 && t.n_groups >= 1 {
                qualifying += 1;
                if t.ffn_tokens >= n_all {
                    violations += 1;
                }
            }
        }
    }
    let detail = format!("{qualifying} qualifying blocks, {violations} violations");
    if violations == 0 && qualifying > 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn permutation() -> Outcome {
    let mut rng = SplitMix64::new(0x9e3);
    let mut max_err: f64 = 0.0;
    for _ in 0..50 {
        let n = 2 + rng.below(15);
        let d = 1 + rng.below(8);
        let x = random_matrix(&mut rng, n, d, true);
        let w = random_matrix(&mut rng, n, n, false);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.below(i + 1));
        }
        let xp = x.select_rows(&perm);
        let wp = Matrix::from_vec(
            n,
            n,
            (0..n * n).map(|k| w.get(perm[k / n], perm[k % n])).collect(),
        )
        .unwrap();
        let s = spatial_scores(&x, &w).map_err(|e| e.to_string())?.s;
        let sp = spatial_scores(&xp, &wp).map_err(|e| e.to_string())?.s;
        for k in 0..n {
            max_err = max_err.max((sp[k] - s[perm[k]]).abs());
        }
    }
    let detail = format!("max error {max_err:.3e} (<= 1e-12) over 50 cases");
    if max_err <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn split_correctness() -> Outcome {
    let mut rng = SplitMix64::new(0x5b1);
    let mut violations = 0;
    for case in 0..1000 {
        let n = 1 + rng.below(64);
        // Every fourth case uses coarse integer inputs so scores tie and land
        // on the band edges.
        let x = if case % 4 == 0 {
            Matrix::from_vec(n, 1, (0..n).map(|_| rng.below(3) as f64).collect()).unwrap()
        } else {
            random_matrix(&mut rng, n, 3, true)
        };
        let w = random_matrix(&mut rng, n, n, false);
        let scores = spatial_scores(&x, &w).map_err(|e| e.to_string())?;
        let alpha = 0.1 + 2.9 * rng.uniform();
        let split = split_tokens(&scores, alpha);

        let s = &scores.s;
        let mean = s.iter().sum::<f64>() / n as f64;
        let med = median(s).abs();
        let (lo, hi) = (alpha * (mean - med), alpha * (mean + med));
        let mut seen = vec![0; n];
        for &i in split.set_a.iter().chain(&split.set_b) {
            seen[i] += 1;
        }
        violations += seen.iter().filter(|&&c| c != 1).count();
        for (i, &v) in s.iter().enumerate() {
            let in_band = lo <= v && v <= hi;
            if in_band != split.set_b.contains(&i) {
                violations += 1;
            }
        }
        let sorted = |v: &[usize]| v.windows(2).all(|p| p[0] < p[1]);
        if !sorted(&split.set_a) || !sorted(&split.set_b) {
            violations += 1;
        }
    }
    let detail = format!("1000 vectors, {violations} violations");
    if violations == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sata(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sata"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`sata {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

fn write_config(dir: &Path, name: &str, cfg: &ModelConfig) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string(cfg).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = write_config(dir.path(), "c.json", &vit_8x32());
    let m = dir.path().join("m");
    let m = m.to_str().unwrap();
    sata(&["init", "--model", m, "--config", &cfg, "--seed", "7"])?;
    let runs: [&[&str]; 3] = [
        &["selftest", "--seed", "7"],
        &["stats", "--model", m, "--seed", "7"],
        &["stability", "--model", m, "--seed", "7"],
    ];
    let mut bytes = 0;
    for args in runs {
        let a = sata(args)?;
        let b = sata(args)?;
        if a != b {
            return Err(format!("`sata {}` differed between runs", args[0]));
        }
        if a.is_empty() {
            return Err(format!("`sata {}` produced no output", args[0]));
        }
        bytes += a.len();
    }
    Ok(format!("selftest, stats, stability byte-identical ({bytes} bytes each run)"))
}

fn parse_stability(csv: &[u8]) -> Result<Vec<(usize, f64, f64)>, String> {
    let text = String::from_utf8(csv.to_vec()).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    if lines.next() != Some("block,delta_attention,delta_sata") {
        return Err("unexpected stability header".into());
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(format!("bad row {l:?}"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
            Ok((f[0].parse().map_err(|_| format!("bad block {l:?}"))?, num(f[1])?, num(f[2])?))
        })
        .collect()
}

fn stability_completeness() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = vit_8x32();
    let blocks = cfg.depth;
    let cfg_path = write_config(dir.path(), "c.json", &cfg);
    let m = dir.path().join("m");
    let m = m.to_str().unwrap();
    sata(&["init", "--model", m, "--config", &cfg_path, "--seed", "3"])?;

    let rows = parse_stability(&sata(&["stability", "--model", m, "--seed", "3"])?)?;
    let pairs = 4 * 5;
    if rows.len() != pairs * blocks {
        return Err(format!("{} records, expected {}", rows.len(), pairs * blocks));
    }
    for (k, &(b, da, ds)) in rows.iter().enumerate() {
        if b != k % blocks {
            return Err(format!("record {k} has block {b}"));
        }
        if !(-1.0..=1.0).contains(&da) || !(-1.0..=1.0).contains(&ds) {
            return Err(format!("record {k} out of range: {da}, {ds}"));
        }
    }
    let clean = parse_stability(&sata(&["stability", "--model", m, "--corruption", "none"])?)?;
    if clean.len() != blocks || clean.iter().any(|&(_, a, s)| a != 1.0 || s != 1.0) {
        return Err(format!("clean/clean records not all 1.0: {clean:?}"));
    }
    Ok(format!(
        "{pairs} pairs x {blocks} blocks, deltas in [-1, 1], clean/clean == 1.0"
    ))
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ModelConfig {
        depth: 12,
        dim: 64,
        heads: 4,
        ..ModelConfig::default()
    };
    let cfg_path = write_config(dir.path(), "c.json", &cfg);
    let m = dir.path().join("m");
    let m = m.to_str().unwrap();
    let start = Instant::now();
    sata(&["init", "--model", m, "--config", &cfg_path, "--seed", "1"])?;
    let logits = sata(&["forward", "--model", m, "--seed", "1"])?;
    let stats = sata(&["stats", "--model", m, "--seed", "1"])?;
    let sweep = sata(&["sweep", "--model", m, "--seed", "1"])?;
    let elapsed = start.elapsed().as_secs_f64();

    let lines = |b: &[u8]| String::from_utf8_lossy(b).lines().count();
    if lines(&logits) != 1 + cfg.num_classes {
        return Err(format!("forward printed {} lines", lines(&logits)));
    }
    if lines(&stats) != 1 + cfg.depth {
        return Err(format!("stats printed {} lines", lines(&stats)));
    }
    if lines(&sweep) != 1 + 6 {
        return Err(format!("sweep printed {} lines", lines(&sweep)));
    }
    let detail = format!("12 blocks, d=64 in {elapsed:.2}s (< 60s)");
    if elapsed < 60.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}
