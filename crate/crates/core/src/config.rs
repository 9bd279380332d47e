use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moran::MoranConvention;

/// How per-head attention maps are reduced to the single token-to-token
/// weight matrix fed to the Moran statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionReduce {
    #[default]
    Mean,
    Max,
}

/// Similarity used to pick bipartite merge partners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMetric {
    #[default]
    Cosine,
    Dot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_ratio: f64,
    pub patch: usize,
    pub image: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    pub num_classes: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_true")]
    pub sata_enabled: bool,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
    #[serde(default)]
    pub moran_row_convention: bool,
    #[serde(default)]
    pub attention_reduce: AttentionReduce,
    #[serde(default)]
    pub match_metric: MatchMetric,
}

fn default_channels() -> usize {
    3
}
fn default_gamma() -> f64 {
    0.7
}
fn default_alpha() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_eps() -> f64 {
    1e-6
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 8,
            dim: 32,
            heads: 4,
            ffn_ratio: 4.0,
            patch: 4,
            image: 32,
            channels: default_channels(),
            num_classes: 10,
            gamma: default_gamma(),
            alpha: default_alpha(),
            sata_enabled: true,
            layer_norm_eps: default_eps(),
            moran_row_convention: false,
            attention_reduce: AttentionReduce::Mean,
            match_metric: MatchMetric::Cosine,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.depth == 0 || self.dim == 0 || self.heads == 0 || self.num_classes == 0 {
            return fail("depth, dim, heads and num_classes must be positive".into());
        }
        if self.dim % self.heads != 0 {
            return fail(format!("dim {} not divisible by heads {}", self.dim, self.heads));
        }
        if self.patch == 0 || self.image == 0 || self.image % self.patch != 0 {
            return fail(format!(
                "image {} not divisible by patch {}",
                self.image, self.patch
            ));
        }
        if self.channels == 0 {
            return fail("channels must be positive".into());
        }
        let hidden = self.ffn_ratio * self.dim as f64;
        if !(hidden >= 1.0) || (hidden - hidden.round()).abs() > 1e-9 {
            return fail(format!(
                "ffn_ratio {} x dim {} is not a positive integer",
                self.ffn_ratio, self.dim
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(self.alpha > 0.0) || self.alpha.is_infinite() {
            return fail(format!("alpha {} must be positive and finite", self.alpha));
        }
        if !(self.layer_norm_eps >= 0.0) {
            return fail("layer_norm_eps must be nonnegative".into());
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        (self.ffn_ratio * self.dim as f64).round() as usize
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn grid(&self) -> usize {
        self.image / self.patch
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Patch tokens plus the class token.
    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    /// First 0-based block index where the token analysis runs:
    /// `ceil(gamma * depth)`. A 1e-9 slack absorbs products such as
    /// `0.7 * 10 = 7.000000000000001`.
    pub fn sata_start(&self) -> usize {
        let start = (self.gamma * self.depth as f64 - 1e-9).ceil().max(0.0) as usize;
        start.min(self.depth)
    }

    pub fn sata_active(&self, block: usize) -> bool {
        self.sata_enabled && block >= self.sata_start()
    }

    pub fn moran_convention(&self) -> MoranConvention {
        if self.moran_row_convention {
            MoranConvention::Row
        } else {
            MoranConvention::Diagonal
        }
    }
}
