//! Pre-norm ViT encoder with an optional token-analysis stage between
//! attention and FFN.
//!
//! Row-vector convention throughout: a linear layer computes `x W + b` with
//! `W` stored as `in x out`.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::sata::{self, BlockTrace, StageDetail};
use crate::tensor::{gelu, layer_norm, matmul, softmax_in_place, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Matrix::zeros(input, output),
            bias: vec![0.0; output],
        }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = matmul(x, &self.weight)?;
        y.add_row_vector(&self.bias)?;
        Ok(y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNormParams {
    pub fn identity(dim: usize) -> Self {
        LayerNormParams {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }

    pub fn apply(&self, x: &Matrix, eps: f64) -> Result<Matrix> {
        layer_norm(x, &self.gain, &self.bias, eps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub proj: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnWeights {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub norm1: LayerNormParams,
    pub attn: AttentionWeights,
    pub norm2: LayerNormParams,
    pub ffn: FfnWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VitModel {
    pub config: ModelConfig,
    pub patch_embed: Linear,
    pub cls_token: Vec<f64>,
    pub pos_embed: Matrix,
    pub blocks: Vec<BlockWeights>,
    pub norm: LayerNormParams,
    pub head: Linear,
}

/// A named parameter tensor. Vectors have a one-element shape.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

fn mat_shape(m: &Matrix) -> Vec<usize> {
    vec![m.rows(), m.cols()]
}

impl VitModel {
    /// All-zero weights (layer-norm gains 1) with shapes from `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let hidden = config.hidden();
        let blocks = (0..config.depth)
            .map(|_| BlockWeights {
                norm1: LayerNormParams::identity(d),
                attn: AttentionWeights {
                    q: Linear::zeros(d, d),
                    k: Linear::zeros(d, d),
                    v: Linear::zeros(d, d),
                    proj: Linear::zeros(d, d),
                },
                norm2: LayerNormParams::identity(d),
                ffn: FfnWeights {
                    fc1: Linear::zeros(d, hidden),
                    fc2: Linear::zeros(hidden, d),
                },
            })
            .collect();
        Ok(VitModel {
            config: config.clone(),
            patch_embed: Linear::zeros(config.patch_len(), d),
            cls_token: vec![0.0; d],
            pos_embed: Matrix::zeros(config.num_tokens(), d),
            blocks,
            norm: LayerNormParams::identity(d),
            head: Linear::zeros(d, config.num_classes),
        })
    }

    /// Parameter tensors in canonical (serialization and init) order.
    pub fn tensors<'a>(&'a self) -> Vec<TensorRef<'a>> {
        let mut out = Vec::new();
        let push = &mut |name: String, shape: Vec<usize>, data: &'a [f64]| {
            out.push(TensorRef { name, shape, data })
        };
        push_linear(push, "patch_embed", &self.patch_embed);
        (push)("cls_token".into(), vec![self.cls_token.len()], &self.cls_token);
        (push)("pos_embed".into(), mat_shape(&self.pos_embed), self.pos_embed.data());
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("block{i}");
            push_norm(push, &format!("{p}.norm1"), &b.norm1);
            push_attn_linear(push, &p, "q", &b.attn.q);
            push_attn_linear(push, &p, "k", &b.attn.k);
            push_attn_linear(push, &p, "v", &b.attn.v);
            push_attn_linear(push, &p, "o", &b.attn.proj);
            push_norm(push, &format!("{p}.norm2"), &b.norm2);
            push_ffn_linear(push, &p, "1", &b.ffn.fc1);
            push_ffn_linear(push, &p, "2", &b.ffn.fc2);
        }
        push_norm(push, "norm", &self.norm);
        push_linear(push, "head", &self.head);
        out
    }

    /// Mutable view in the same order as [`VitModel::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        // Shapes and names are taken from the immutable view first.
        let meta: Vec<(String, Vec<usize>)> = self
            .tensors()
            .into_iter()
            .map(|t| (t.name, t.shape))
            .collect();
        let mut slices: Vec<&mut [f64]> = Vec::with_capacity(meta.len());
        slices.extend(linear_slices(&mut self.patch_embed));
        slices.push(&mut self.cls_token);
        slices.push(matrix_slice(&mut self.pos_embed));
        for b in &mut self.blocks {
            slices.push(&mut b.norm1.gain);
            slices.push(&mut b.norm1.bias);
            slices.extend(linear_slices(&mut b.attn.q));
            slices.extend(linear_slices(&mut b.attn.k));
            slices.extend(linear_slices(&mut b.attn.v));
            slices.extend(linear_slices(&mut b.attn.proj));
            slices.push(&mut b.norm2.gain);
            slices.push(&mut b.norm2.bias);
            slices.extend(linear_slices(&mut b.ffn.fc1));
            slices.extend(linear_slices(&mut b.ffn.fc2));
        }
        slices.push(&mut self.norm.gain);
        slices.push(&mut self.norm.bias);
        slices.extend(linear_slices(&mut self.head));
        debug_assert_eq!(meta.len(), slices.len());
        meta.into_iter()
            .zip(slices)
            .map(|((name, shape), data)| TensorMut { name, shape, data })
            .collect()
    }

    pub fn forward(&self, image: &Image) -> Result<ForwardOutput> {
        self.forward_inspect(image, |_| {})
    }

    /// Forward pass that hands every block's intermediate state to `inspect`.
    pub fn forward_inspect<F>(&self, image: &Image, mut inspect: F) -> Result<ForwardOutput>
    where
        F: FnMut(&BlockView<'_>),
    {
        let cfg = &self.config;
        let mut x = patch_embed(image, self)?;
        let mut traces = Vec::with_capacity(self.blocks.len());
        for (index, block) in self.blocks.iter().enumerate() {
            let attn = mhsa(&x, block, cfg)?;
            let (out, trace, detail) = if cfg.sata_active(index) {
                let (out, trace, detail) = sata::sata_stage(&attn.features, &attn, cfg, block, index)?;
                (out, trace, Some(detail))
            } else {
                let mut out = attn.features.clone();
                out.add_assign(&ffn(&attn.features, block, cfg.layer_norm_eps)?)?;
                let trace = sata::passive_trace(&attn.features, &attn, cfg, index)?;
                (out, trace, None)
            };
            inspect(&BlockView {
                index,
                attention: &attn,
                output: &out,
                detail: detail.as_ref(),
                trace: &trace,
            });
            traces.push(trace);
            x = out;
        }
        let normed = self.norm.apply(&x.slice(0, 1, 0, x.cols()), cfg.layer_norm_eps)?;
        let logits = self.head.apply(&normed)?.into_data();
        Ok(ForwardOutput { logits, traces })
    }
}

fn push_linear<'a>(push: &mut impl FnMut(String, Vec<usize>, &'a [f64]), prefix: &str, l: &'a Linear) {
    push(format!("{prefix}.w"), mat_shape(&l.weight), l.weight.data());
    push(format!("{prefix}.b"), vec![l.bias.len()], &l.bias);
}

fn push_attn_linear<'a>(
    push: &mut impl FnMut(String, Vec<usize>, &'a [f64]),
    block: &str,
    tag: &str,
    l: &'a Linear,
) {
    push(format!("{block}.attn.w{tag}"), mat_shape(&l.weight), l.weight.data());
    push(format!("{block}.attn.b{tag}"), vec![l.bias.len()], &l.bias);
}

fn push_ffn_linear<'a>(
    push: &mut impl FnMut(String, Vec<usize>, &'a [f64]),
    block: &str,
    tag: &str,
    l: &'a Linear,
) {
    push(format!("{block}.ffn.w{tag}"), mat_shape(&l.weight), l.weight.data());
    push(format!("{block}.ffn.b{tag}"), vec![l.bias.len()], &l.bias);
}

fn push_norm<'a>(
    push: &mut impl FnMut(String, Vec<usize>, &'a [f64]),
    prefix: &str,
    n: &'a LayerNormParams,
) {
    push(format!("{prefix}.gain"), vec![n.gain.len()], &n.gain);
    push(format!("{prefix}.bias"), vec![n.bias.len()], &n.bias);
}

fn matrix_slice(m: &mut Matrix) -> &mut [f64] {
    m.data_mut()
}

fn linear_slices(l: &mut Linear) -> [&mut [f64]; 2] {
    [matrix_slice(&mut l.weight), &mut l.bias]
}

/// Per-block state passed to [`VitModel::forward_inspect`].
pub struct BlockView<'a> {
    pub index: usize,
    pub attention: &'a AttentionOutput,
    /// Block output (residual stream after the FFN sub-block).
    pub output: &'a Matrix,
    /// Split and merge plan, present only for blocks that ran the stage.
    pub detail: Option<&'a StageDetail>,
    pub trace: &'a BlockTrace,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub traces: Vec<BlockTrace>,
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `x + proj(concat_h(M_h V_h))`.
    pub features: Matrix,
    /// Post-softmax attention averaged over heads.
    pub mean_attention: Matrix,
    pub per_head: Vec<Matrix>,
}

/// Splits the image into patches, projects them, prepends the class token
/// and adds position embeddings.
pub fn patch_embed(image: &Image, model: &VitModel) -> Result<Matrix> {
    let cfg = &model.config;
    if image.height != cfg.image || image.width != cfg.image || image.channels != cfg.channels {
        return Err(Error::Shape {
            op: "patch_embed",
            left: (image.height, image.width * image.channels),
            right: (cfg.image, cfg.image * cfg.channels),
        });
    }
    let (p, g, c) = (cfg.patch, cfg.grid(), cfg.channels);
    let mut patches = Matrix::zeros(cfg.num_patches(), cfg.patch_len());
    for gy in 0..g {
        for gx in 0..g {
            let row = patches.row_mut(gy * g + gx);
            let mut k = 0;
            for py in 0..p {
                for px in 0..p {
                    for ch in 0..c {
                        row[k] = image.get(gy * p + py, gx * p + px, ch);
                        k += 1;
                    }
                }
            }
        }
    }
    let embedded = model.patch_embed.apply(&patches)?;
    let mut tokens = Matrix::zeros(cfg.num_tokens(), cfg.dim);
    tokens.row_mut(0).copy_from_slice(&model.cls_token);
    for i in 0..embedded.rows() {
        tokens.row_mut(i + 1).copy_from_slice(embedded.row(i));
    }
    tokens.add_assign(&model.pos_embed)?;
    Ok(tokens)
}

/// Pre-norm multi-head self-attention sub-block, residual included.
pub fn mhsa(x: &Matrix, block: &BlockWeights, cfg: &ModelConfig) -> Result<AttentionOutput> {
    if x.cols() != cfg.dim {
        return Err(Error::Shape {
            op: "mhsa",
            left: x.shape(),
            right: (cfg.dim, cfg.dim),
        });
    }
    let n = x.rows();
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let normed = block.norm1.apply(x, cfg.layer_norm_eps)?;
    let q = block.attn.q.apply(&normed)?;
    let k = block.attn.k.apply(&normed)?;
    let v = block.attn.v.apply(&normed)?;

    let mut concat = Matrix::zeros(n, cfg.dim);
    let mut mean_attention = Matrix::zeros(n, n);
    let mut per_head = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (c0, c1) = (h * hd, (h + 1) * hd);
        let qh = q.slice(0, n, c0, c1);
        let kh = k.slice(0, n, c0, c1);
        let vh = v.slice(0, n, c0, c1);
        let mut scores = matmul(&qh, &kh.transpose())?;
        scores.scale(scale);
        for r in 0..n {
            softmax_in_place(scores.row_mut(r));
        }
        let out = matmul(&scores, &vh)?;
        for r in 0..n {
            concat.row_mut(r)[c0..c1].copy_from_slice(out.row(r));
        }
        mean_attention.add_assign(&scores)?;
        per_head.push(scores);
    }
    mean_attention.scale(1.0 / cfg.heads as f64);

    let mut features = block.attn.proj.apply(&concat)?;
    features.add_assign(x)?;
    Ok(AttentionOutput {
        features,
        mean_attention,
        per_head,
    })
}

/// FFN delta `fc2(gelu(fc1(LN(x))))`; the caller adds the residual.
pub fn ffn(x: &Matrix, block: &BlockWeights, eps: f64) -> Result<Matrix> {
    let normed = block.norm2.apply(x, eps)?;
    let hidden = gelu(&block.ffn.fc1.apply(&normed)?);
    block.ffn.fc2.apply(&hidden)
}
