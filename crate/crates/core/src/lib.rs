//! Inference-only vision transformer with spatial-autocorrelation token
//! analysis (SATA) between attention and FFN, plus a measurement harness.
//!
//! In blocks from `ceil(gamma * depth)` onward, patch tokens are scored with
//! local Moran's I using the block's attention map as spatial weights.
//! Tokens with out-of-band scores are merged by bipartite matching before
//! the FFN, which shrinks the FFN workload; all token positions are restored
//! afterward.

pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod image;
pub mod model_io;
pub mod moran;
pub mod rng;
pub mod sata;
pub mod tensor;
pub mod vit;

pub use config::{AttentionReduce, MatchMetric, ModelConfig};
pub use error::{Error, Result};
pub use image::Image;
pub use model_io::{load_model, random_init, save_model};
pub use moran::{spatial_scores, SpatialScores};
pub use sata::{BlockTrace, MergePlan, SplitResult};
pub use tensor::Matrix;
pub use vit::{ForwardOutput, VitModel};
