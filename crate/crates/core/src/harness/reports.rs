//! Stability, per-block statistics, parameter sweeps and FLOPs reports.
//! Each report has a row type and a `*_csv` renderer with a fixed header.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::sata::{ffn_flops, BlockTrace};
use crate::tensor::dot;
use crate::vit::VitModel;

use super::corrupt::{corrupt, CorruptionSpec};
use super::format::{csv, g9};

pub const HIST_BINS: usize = 32;
pub const HIST_RANGE: (f64, f64) = (-5.0, 5.0);

/// Cosine similarity. Two zero vectors compare as 1, a zero against a
/// nonzero vector as 0. The result is clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape {
            op: "cosine_similarity",
            left: (u.len(), 1),
            right: (v.len(), 1),
        });
    }
    let nu = dot(u, u);
    let nv = dot(v, v);
    Ok(match (nu == 0.0, nv == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        // sqrt(nu * nu) == nu exactly, so identical inputs give exactly 1.
        _ => (dot(u, v) / (nu * nv).sqrt()).clamp(-1.0, 1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityRecord {
    pub block_index: usize,
    pub delta_attention: f64,
    pub delta_sata: f64,
}

/// Per-block similarity of class-token attention rows and of spatial score
/// vectors between two forwards.
pub fn stability_records(model: &VitModel, clean: &Image, other: &Image) -> Result<Vec<StabilityRecord>> {
    let a = model.forward(clean)?;
    let b = if clean == other {
        a.clone()
    } else {
        model.forward(other)?
    };
    a.traces
        .iter()
        .zip(&b.traces)
        .map(|(ta, tb)| {
            Ok(StabilityRecord {
                block_index: ta.block_index,
                delta_attention: cosine_similarity(&ta.cls_attention, &tb.cls_attention)?,
                delta_sata: cosine_similarity(&ta.s_snapshot, &tb.s_snapshot)?,
            })
        })
        .collect()
}

pub fn stability_report(model: &VitModel, image: &Image, spec: &CorruptionSpec) -> Result<Vec<StabilityRecord>> {
    let corrupted = corrupt(image, spec)?;
    stability_records(model, image, &corrupted)
}

/// Block-wise mean over several record sets of equal length.
pub fn average_stability(sets: &[Vec<StabilityRecord>]) -> Vec<StabilityRecord> {
    let Some(first) = sets.first() else {
        return Vec::new();
    };
    let k = sets.len() as f64;
    (0..first.len())
        .map(|b| StabilityRecord {
            block_index: first[b].block_index,
            delta_attention: sets.iter().map(|s| s[b].delta_attention).sum::<f64>() / k,
            delta_sata: sets.iter().map(|s| s[b].delta_sata).sum::<f64>() / k,
        })
        .collect()
}

pub fn stability_csv(records: &[StabilityRecord]) -> String {
    let header = ["block", "delta_attention", "delta_sata"].map(String::from);
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| vec![r.block_index.to_string(), g9(r.delta_attention), g9(r.delta_sata)])
        .collect();
    csv(&header, &rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub block: usize,
    pub mean_s: f64,
    pub abs_median_s: f64,
    pub lower: f64,
    pub upper: f64,
    pub n_a: f64,
    pub n_b: f64,
    pub ffn_tokens: f64,
    pub ffn_flops: f64,
    pub hist: [u64; HIST_BINS],
}

/// Histogram bin of a score; values outside the range land in the end bins.
pub fn hist_bin(s: f64) -> usize {
    let (lo, hi) = HIST_RANGE;
    let t = (s - lo) / (hi - lo) * HIST_BINS as f64;
    (t.floor().max(0.0) as usize).min(HIST_BINS - 1)
}

/// Per-block statistics over a batch. Scalars are batch means; histogram
/// counts are summed over the batch.
pub fn stats_report(model: &VitModel, images: &[Image]) -> Result<Vec<StatsRow>> {
    if images.is_empty() {
        return Err(Error::Empty("stats_report"));
    }
    let per_image: Vec<Vec<BlockTrace>> = images
        .iter()
        .map(|img| model.forward(img).map(|o| o.traces))
        .collect::<Result<_>>()?;
    let k = images.len() as f64;
    let depth = model.config.depth;
    Ok((0..depth)
        .map(|b| {
            let traces: Vec<&BlockTrace> = per_image.iter().map(|t| &t[b]).collect();
            let mean = |f: &dyn Fn(&BlockTrace) -> f64| traces.iter().map(|t| f(t)).sum::<f64>() / k;
            let mut hist = [0u64; HIST_BINS];
            for t in &traces {
                for &s in &t.s_snapshot {
                    hist[hist_bin(s)] += 1;
                }
            }
            StatsRow {
                block: b,
                mean_s: mean(&|t| t.mean_s),
                abs_median_s: mean(&|t| t.abs_median_s),
                lower: mean(&|t| t.lower),
                upper: mean(&|t| t.upper),
                n_a: mean(&|t| t.n_a as f64),
                n_b: mean(&|t| t.n_b as f64),
                ffn_tokens: mean(&|t| t.ffn_tokens as f64),
                ffn_flops: mean(&|t| t.ffn_flops as f64),
                hist,
            }
        })
        .collect())
}

pub fn stats_csv(rows: &[StatsRow]) -> String {
    let mut header: Vec<String> = [
        "block", "mean_s", "abs_median_s", "lower", "upper", "n_a", "n_b", "ffn_tokens", "ffn_flops",
    ]
    .map(String::from)
    .to_vec();
    header.extend((0..HIST_BINS).map(|i| format!("hist_{i}")));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.block.to_string(),
                g9(r.mean_s),
                g9(r.abs_median_s),
                g9(r.lower),
                g9(r.upper),
                g9(r.n_a),
                g9(r.n_b),
                g9(r.ffn_tokens),
                g9(r.ffn_flops),
            ];
            row.extend(r.hist.iter().map(u64::to_string));
            row
        })
        .collect();
    csv(&header, &body)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    Gamma,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "gamma" => Ok(SweepParam::Gamma),
            _ => Err(Error::Invalid(format!("sweep parameter must be alpha or gamma, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param_value: f64,
    /// FFN FLOPs summed over blocks, mean over the batch.
    pub total_flops: f64,
    /// Mean L2 distance between logits and the plain-ViT logits.
    pub logit_drift: f64,
    /// Mean FFN token count per block.
    pub ffn_tokens: Vec<f64>,
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn sweep(model: &VitModel, images: &[Image], param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    if images.is_empty() {
        return Err(Error::Empty("sweep"));
    }
    let mut baseline_model = model.clone();
    baseline_model.config.sata_enabled = false;
    let baseline: Vec<Vec<f64>> = images
        .iter()
        .map(|img| baseline_model.forward(img).map(|o| o.logits))
        .collect::<Result<_>>()?;

    let k = images.len() as f64;
    let depth = model.config.depth;
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut m = model.clone();
        m.config.sata_enabled = true;
        match param {
            SweepParam::Alpha => m.config.alpha = value,
            SweepParam::Gamma => m.config.gamma = value,
        }
        m.config.validate()?;
        let mut total_flops = 0.0;
        let mut drift = 0.0;
        let mut tokens = vec![0.0; depth];
        for (img, base) in images.iter().zip(&baseline) {
            let out = m.forward(img)?;
            total_flops += out.traces.iter().map(|t| t.ffn_flops as f64).sum::<f64>();
            drift += l2(&out.logits, base);
            for (acc, t) in tokens.iter_mut().zip(&out.traces) {
                *acc += t.ffn_tokens as f64;
            }
        }
        rows.push(SweepRow {
            param_value: value,
            total_flops: total_flops / k,
            logit_drift: drift / k,
            ffn_tokens: tokens.into_iter().map(|t| t / k).collect(),
        });
    }
    Ok(rows)
}

/// Columns `param_value,total_flops,logit_drift` followed by one
/// `ffn_tokens_<block>` column per block.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let depth = rows.first().map_or(0, |r| r.ffn_tokens.len());
    let mut header: Vec<String> = ["param_value", "total_flops", "logit_drift"].map(String::from).to_vec();
    header.extend((0..depth).map(|b| format!("ffn_tokens_{b}")));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![g9(r.param_value), g9(r.total_flops), g9(r.logit_drift)];
            row.extend(r.ffn_tokens.iter().map(|&t| g9(t)));
            row
        })
        .collect();
    csv(&header, &body)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopsRow {
    pub block: usize,
    pub ffn_tokens_vanilla: f64,
    pub ffn_tokens_sata: f64,
    pub flops_vanilla: f64,
    pub flops_sata: f64,
}

/// FFN load of the configured model against the plain ViT, batch means.
pub fn flops_report(model: &VitModel, images: &[Image]) -> Result<Vec<FlopsRow>> {
    if images.is_empty() {
        return Err(Error::Empty("flops_report"));
    }
    let cfg: &ModelConfig = &model.config;
    let n_all = cfg.num_tokens();
    let vanilla = ffn_flops(n_all, cfg.dim, cfg.hidden()) as f64;
    let k = images.len() as f64;
    let mut tokens = vec![0.0; cfg.depth];
    let mut flops = vec![0.0; cfg.depth];
    for img in images {
        for t in model.forward(img)?.traces {
            tokens[t.block_index] += t.ffn_tokens as f64;
            flops[t.block_index] += t.ffn_flops as f64;
        }
    }
    Ok((0..cfg.depth)
        .map(|b| FlopsRow {
            block: b,
            ffn_tokens_vanilla: n_all as f64,
            ffn_tokens_sata: tokens[b] / k,
            flops_vanilla: vanilla,
            flops_sata: flops[b] / k,
        })
        .collect())
}

/// Per-block rows followed by a `total` row.
pub fn flops_csv(rows: &[FlopsRow]) -> String {
    let header = ["block", "ffn_tokens_vanilla", "ffn_tokens_sata", "flops_vanilla", "flops_sata"]
        .map(String::from);
    let mut body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.block.to_string(),
                g9(r.ffn_tokens_vanilla),
                g9(r.ffn_tokens_sata),
                g9(r.flops_vanilla),
                g9(r.flops_sata),
            ]
        })
        .collect();
    let sum = |f: fn(&FlopsRow) -> f64| rows.iter().map(f).sum::<f64>();
    body.push(vec![
        "total".into(),
        g9(sum(|r| r.ffn_tokens_vanilla)),
        g9(sum(|r| r.ffn_tokens_sata)),
        g9(sum(|r| r.flops_vanilla)),
        g9(sum(|r| r.flops_sata)),
    ]);
    csv(&header, &body)
}
