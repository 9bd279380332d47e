//! Spatial-autocorrelation token analysis between attention and FFN.
//!
//! Patch tokens are scored with local Moran's I using the block's attention
//! map as the weight matrix. Tokens whose score lies in the closed band
//! `[alpha (mean_s - |median_s|), alpha (mean_s + |median_s|)]` go to the FFN
//! unchanged. Out-of-band tokens are split into two alternating halves; each
//! token of the first half links to its most similar token in the second
//! half, linked tokens are averaged into one FFN input, and unlinked tokens
//! of the second half bypass the FFN. Every position is restored afterward:
//! group members receive their group's FFN delta, bypassed tokens keep their
//! residual-stream value. The class token always goes through the FFN.

use crate::config::{AttentionReduce, MatchMetric, ModelConfig};
use crate::error::Result;
use crate::moran::{spatial_scores_with, SpatialScores};
use crate::tensor::{dot, Matrix};
use crate::vit::{ffn, AttentionOutput, BlockWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    /// In-band token indices, ascending.
    pub set_b: Vec<usize>,
    /// Out-of-band token indices, ascending.
    pub set_a: Vec<usize>,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeGroup {
    /// The second-half token the edges point to.
    pub target: usize,
    /// Target plus all sources, ascending.
    pub members: Vec<usize>,
    /// Unweighted mean of the member feature rows.
    pub representative: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MergePlan {
    pub a1: Vec<usize>,
    pub a2: Vec<usize>,
    /// `(source in a1, target in a2)`, in `a1` order.
    pub edges: Vec<(usize, usize)>,
    /// One group per `a2` token with at least one incoming edge, in `a2` order.
    pub groups: Vec<MergeGroup>,
    /// Tokens that skip the FFN.
    pub residuals: Vec<usize>,
}

/// Per-block statistics. Token indices and counts refer to patch tokens
/// except `n_tokens` and `ffn_tokens`, which include the class token.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace {
    pub block_index: usize,
    pub sata_active: bool,
    pub n_tokens: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub n_groups: usize,
    pub n_residual: usize,
    pub ffn_tokens: usize,
    pub s_snapshot: Vec<f64>,
    pub mean_s: f64,
    pub abs_median_s: f64,
    pub lower: f64,
    pub upper: f64,
    pub ffn_flops: u64,
    /// Class-token row of the head-averaged attention, over patch tokens.
    pub cls_attention: Vec<f64>,
}

/// Intermediate results of one stage invocation.
#[derive(Debug, Clone)]
pub struct StageDetail {
    pub scores: SpatialScores,
    pub split: SplitResult,
    pub plan: MergePlan,
}

/// FLOPs of the two FFN linear layers for `n_tokens` tokens, counting a
/// multiply-accumulate as two operations. Bias and GELU are not counted.
pub fn ffn_flops(n_tokens: usize, dim: usize, hidden: usize) -> u64 {
    2 * n_tokens as u64 * (dim as u64 * hidden as u64 + hidden as u64 * dim as u64)
}

/// Partition by the closed band around the score statistics. Out-of-band
/// means below the lower bound or above the upper bound.
pub fn split_tokens(scores: &SpatialScores, alpha: f64) -> SplitResult {
    let lower = alpha * (scores.mean_s - scores.abs_median_s);
    let upper = alpha * (scores.mean_s + scores.abs_median_s);
    let (set_b, set_a) = (0..scores.s.len()).partition(|&i| {
        let v = scores.s[i];
        lower <= v && v <= upper
    });
    SplitResult {
        set_b,
        set_a,
        lower,
        upper,
    }
}

fn similarity(a: &[f64], b: &[f64], metric: MatchMetric) -> f64 {
    let d = dot(a, b);
    match metric {
        MatchMetric::Dot => d,
        MatchMetric::Cosine => {
            let denom = (dot(a, a) * dot(b, b)).sqrt();
            if denom == 0.0 {
                0.0
            } else {
                d / denom
            }
        }
    }
}

/// Bipartite matching over `set_a`, whose entries index rows of `features`.
///
/// Even positions of `set_a` form the source half, odd positions the target
/// half. Ties go to the lowest target index.
pub fn bipartite_match(set_a: &[usize], features: &Matrix, metric: MatchMetric) -> MergePlan {
    if set_a.len() <= 1 {
        return MergePlan {
            a2: set_a.to_vec(),
            residuals: set_a.to_vec(),
            ..MergePlan::default()
        };
    }
    let mut sorted = set_a.to_vec();
    sorted.sort_unstable();
    let a1: Vec<usize> = sorted.iter().copied().step_by(2).collect();
    let a2: Vec<usize> = sorted.iter().copied().skip(1).step_by(2).collect();

    let mut sources: Vec<Vec<usize>> = vec![Vec::new(); a2.len()];
    let mut edges = Vec::with_capacity(a1.len());
    for &src in &a1 {
        let row = features.row(src);
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for (k, &dst) in a2.iter().enumerate() {
            let sim = similarity(row, features.row(dst), metric);
            if sim > best_sim {
                best_sim = sim;
                best = k;
            }
        }
        sources[best].push(src);
        edges.push((src, a2[best]));
    }

    let mut groups = Vec::new();
    let mut residuals = Vec::new();
    for (k, &target) in a2.iter().enumerate() {
        if sources[k].is_empty() {
            residuals.push(target);
            continue;
        }
        let mut members = sources[k].clone();
        members.push(target);
        members.sort_unstable();
        let mut representative = vec![0.0; features.cols()];
        for &m in &members {
            for (r, v) in representative.iter_mut().zip(features.row(m)) {
                *r += v;
            }
        }
        let inv = 1.0 / members.len() as f64;
        for r in &mut representative {
            *r *= inv;
        }
        groups.push(MergeGroup {
            target,
            members,
            representative,
        });
    }
    MergePlan {
        a1,
        a2,
        edges,
        groups,
        residuals,
    }
}

/// Token-to-token weights over patch tokens only (class row and column
/// dropped), reduced across heads.
pub fn moran_weights(attn: &AttentionOutput, reduce: AttentionReduce) -> Matrix {
    let n = attn.mean_attention.rows();
    match reduce {
        AttentionReduce::Mean => attn.mean_attention.slice(1, n, 1, n),
        AttentionReduce::Max => {
            let mut w = attn.per_head[0].slice(1, n, 1, n);
            for head in &attn.per_head[1..] {
                for r in 1..n {
                    for (o, v) in w.row_mut(r - 1).iter_mut().zip(&head.row(r)[1..]) {
                        *o = o.max(*v);
                    }
                }
            }
            w
        }
    }
}

/// Scores and split of the patch tokens of `x`.
pub fn analyze(
    x: &Matrix,
    attn: &AttentionOutput,
    cfg: &ModelConfig,
) -> Result<(SpatialScores, SplitResult)> {
    let n = x.rows();
    let patches = x.slice(1, n, 0, x.cols());
    let w = moran_weights(attn, cfg.attention_reduce);
    let scores = spatial_scores_with(&patches, &w, cfg.moran_convention())?;
    let split = split_tokens(&scores, cfg.alpha);
    Ok((scores, split))
}

fn cls_attention(attn: &AttentionOutput) -> Vec<f64> {
    attn.mean_attention.row(0)[1..].to_vec()
}

/// Trace for a block that runs the plain FFN. Scores and bounds are still
/// reported; all patch tokens count as in-band.
pub fn passive_trace(
    x: &Matrix,
    attn: &AttentionOutput,
    cfg: &ModelConfig,
    block_index: usize,
) -> Result<BlockTrace> {
    let (scores, split) = analyze(x, attn, cfg)?;
    let n = x.rows();
    Ok(BlockTrace {
        block_index,
        sata_active: false,
        n_tokens: n,
        n_a: 0,
        n_b: n - 1,
        n_groups: 0,
        n_residual: 0,
        ffn_tokens: n,
        mean_s: scores.mean_s,
        abs_median_s: scores.abs_median_s,
        s_snapshot: scores.s,
        lower: split.lower,
        upper: split.upper,
        ffn_flops: ffn_flops(n, cfg.dim, cfg.hidden()),
        cls_attention: cls_attention(attn),
    })
}

/// Runs the FFN sub-block with token analysis. `x` is the post-attention
/// residual stream (class token in row 0). Output has the same shape and
/// token order as `x`.
pub fn sata_stage(
    x: &Matrix,
    attn: &AttentionOutput,
    cfg: &ModelConfig,
    block: &BlockWeights,
    block_index: usize,
) -> Result<(Matrix, BlockTrace, StageDetail)> {
    let n = x.rows();
    let (scores, split) = analyze(x, attn, cfg)?;
    let patches = x.slice(1, n, 0, x.cols());
    let plan = bipartite_match(&split.set_a, &patches, cfg.match_metric);

    // FFN input rows: class, in-band tokens, group representatives.
    let mut rows: Vec<usize> = Vec::with_capacity(1 + split.set_b.len());
    rows.push(0);
    rows.extend(split.set_b.iter().map(|i| i + 1));
    let mut input = x.select_rows(&rows);
    if !plan.groups.is_empty() {
        let mut data = input.into_data();
        for g in &plan.groups {
            data.extend_from_slice(&g.representative);
        }
        input = Matrix::from_vec(rows.len() + plan.groups.len(), x.cols(), data)?;
    }
    let delta = ffn(&input, block, cfg.layer_norm_eps)?;

    let mut out = x.clone();
    for (k, &r) in rows.iter().enumerate() {
        add_row(out.row_mut(r), delta.row(k));
    }
    for (g, group) in plan.groups.iter().enumerate() {
        let d = delta.row(rows.len() + g);
        for &m in &group.members {
            add_row(out.row_mut(m + 1), d);
        }
    }

    let ffn_tokens = input.rows();
    let trace = BlockTrace {
        block_index,
        sata_active: true,
        n_tokens: n,
        n_a: split.set_a.len(),
        n_b: split.set_b.len(),
        n_groups: plan.groups.len(),
        n_residual: plan.residuals.len(),
        ffn_tokens,
        s_snapshot: scores.s.clone(),
        mean_s: scores.mean_s,
        abs_median_s: scores.abs_median_s,
        lower: split.lower,
        upper: split.upper,
        ffn_flops: ffn_flops(ffn_tokens, cfg.dim, cfg.hidden()),
        cls_attention: cls_attention(attn),
    };
    Ok((out, trace, StageDetail { scores, split, plan }))
}

fn add_row(dst: &mut [f64], delta: &[f64]) {
    for (o, d) in dst.iter_mut().zip(delta) {
        *o += d;
    }
}
