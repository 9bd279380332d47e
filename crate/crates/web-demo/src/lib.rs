//! Browser bindings for the token-analysis engine: per-block score and
//! split maps, an alpha sweep, and clean-vs-corrupted stability curves.
//!
//! Everything crosses the boundary as flat `Float64Array`/`Int32Array`
//! buffers; the page in `www/` does the drawing.

use sata_core::harness::{
    corrupt, stability_records, sweep, synthetic_batch, CorruptionKind, CorruptionSpec, SweepParam,
};
use sata_core::model_io::random_init;
use sata_core::{Image, ModelConfig, VitModel};
use wasm_bindgen::prelude::*;

fn js_err(e: sata_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Split label for tokens kept in the FFN as themselves.
pub const LABEL_KEPT: i32 = -1;
/// Split label for out-of-band tokens that bypass the FFN unmerged.
pub const LABEL_RESIDUAL: i32 = -2;

#[wasm_bindgen]
pub struct Demo {
    model: VitModel,
    clean: Image,
    corruption: Option<CorruptionSpec>,
    scores: Vec<Vec<f64>>,
    labels: Vec<Vec<i32>>,
    ffn_tokens: Vec<usize>,
    logits: Vec<f64>,
}

#[wasm_bindgen]
impl Demo {
    /// Seeded random model (32x32 RGB input, 4x4 patches) and one
    /// synthetic image.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, depth: usize, dim: usize) -> Result<Demo, JsError> {
        let config = ModelConfig {
            depth,
            dim,
            ..ModelConfig::default()
        };
        config.validate().map_err(js_err)?;
        let model = random_init(&config, seed).map_err(js_err)?;
        let clean = synthetic_batch(&config, 1, seed).remove(0);
        let mut demo = Demo {
            model,
            clean,
            corruption: None,
            scores: Vec::new(),
            labels: Vec::new(),
            ffn_tokens: Vec::new(),
            logits: Vec::new(),
        };
        demo.run()?;
        Ok(demo)
    }

    pub fn grid(&self) -> usize {
        self.model.config.grid()
    }

    pub fn depth(&self) -> usize {
        self.model.config.depth
    }

    pub fn num_tokens(&self) -> usize {
        self.model.config.num_tokens()
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<(), JsError> {
        let mut config = self.model.config.clone();
        config.alpha = alpha;
        self.reconfigure(config)
    }

    pub fn set_gamma(&mut self, gamma: f64) -> Result<(), JsError> {
        let mut config = self.model.config.clone();
        config.gamma = gamma;
        self.reconfigure(config)
    }

    /// `kind` is one of gaussian_noise, impulse_noise, box_blur, contrast,
    /// or `none`.
    pub fn set_corruption(&mut self, kind: &str, severity: u8, seed: u64) -> Result<(), JsError> {
        self.corruption = match kind {
            "none" => None,
            k => Some(CorruptionSpec {
                kind: k.parse().map_err(js_err)?,
                severity,
                seed,
            }),
        };
        self.run()
    }

    /// Current (possibly corrupted) input, HWC in `[0, 1]`.
    pub fn image(&self) -> Result<Vec<f64>, JsError> {
        Ok(self.input()?.data.clone())
    }

    /// Standardized spatial scores of the patch tokens at `block`,
    /// row-major over the patch grid.
    pub fn scores(&self, block: usize) -> Vec<f64> {
        self.scores.get(block).cloned().unwrap_or_default()
    }

    /// Per-patch split labels at `block`: `-1` kept, `-2` residual, `k >= 0`
    /// member of merge group `k`. Passive blocks are all `-1`.
    pub fn labels(&self, block: usize) -> Vec<i32> {
        self.labels.get(block).cloned().unwrap_or_default()
    }

    /// Tokens entering the FFN in each block.
    pub fn ffn_tokens(&self) -> Vec<u32> {
        self.ffn_tokens.iter().map(|&n| n as u32).collect()
    }

    pub fn logits(&self) -> Vec<f64> {
        self.logits.clone()
    }

    /// For each alpha: `[alpha, total FFN FLOPs, logit drift]`, flattened.
    pub fn alpha_sweep(&self, alphas: &[f64]) -> Result<Vec<f64>, JsError> {
        let img = self.input()?;
        let rows = sweep(&self.model, std::slice::from_ref(&img), SweepParam::Alpha, alphas)
            .map_err(js_err)?;
        Ok(rows
            .iter()
            .flat_map(|r| [r.param_value, r.total_flops, r.logit_drift])
            .collect())
    }

    /// Severity 1..=5 of `kind` against the clean image: for each severity,
    /// `depth` attention deltas followed by `depth` score deltas.
    pub fn stability_curve(&self, kind: &str, seed: u64) -> Result<Vec<f64>, JsError> {
        let kind: CorruptionKind = kind.parse().map_err(js_err)?;
        let mut out = Vec::new();
        for severity in 1..=5 {
            let spec = CorruptionSpec { kind, severity, seed };
            let other = corrupt(&self.clean, &spec).map_err(js_err)?;
            let recs = stability_records(&self.model, &self.clean, &other).map_err(js_err)?;
            out.extend(recs.iter().map(|r| r.delta_attention));
            out.extend(recs.iter().map(|r| r.delta_sata));
        }
        Ok(out)
    }
}

impl Demo {
    fn reconfigure(&mut self, config: ModelConfig) -> Result<(), JsError> {
        config.validate().map_err(js_err)?;
        self.model.config = config;
        self.run()
    }

    fn input(&self) -> Result<Image, JsError> {
        match &self.corruption {
            Some(spec) => corrupt(&self.clean, spec).map_err(js_err),
            None => Ok(self.clean.clone()),
        }
    }

    fn run(&mut self) -> Result<(), JsError> {
        let img = self.input()?;
        let patches = self.model.config.num_patches();
        let mut labels = Vec::new();
        let out = self
            .model
            .forward_inspect(&img, |view| {
                let mut row = vec![LABEL_KEPT; patches];
                if let Some(detail) = view.detail {
                    for &r in &detail.plan.residuals {
                        row[r] = LABEL_RESIDUAL;
                    }
                    for (k, g) in detail.plan.groups.iter().enumerate() {
                        for &m in &g.members {
                            row[m] = k as i32;
                        }
                    }
                }
                labels.push(row);
            })
            .map_err(js_err)?;
        self.scores = out.traces.iter().map(|t| t.s_snapshot.clone()).collect();
        self.ffn_tokens = out.traces.iter().map(|t| t.ffn_tokens).collect();
        self.labels = labels;
        self.logits = out.logits;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_cover_every_patch() {
        let demo = Demo::new(3, 4, 16).unwrap();
        let n = demo.grid() * demo.grid();
        for b in 0..demo.depth() {
            assert_eq!(demo.scores(b).len(), n);
            assert_eq!(demo.labels(b).len(), n);
        }
        // Default gamma 0.7 on 4 blocks activates blocks 2 and 3.
        assert!(demo.labels(0).iter().all(|&l| l == LABEL_KEPT));
        assert!(demo.ffn_tokens()[3] as usize <= demo.num_tokens());
    }

    #[test]
    fn sweep_and_stability_shapes() {
        let demo = Demo::new(3, 4, 16).unwrap();
        assert_eq!(demo.alpha_sweep(&[0.5, 1.0, 2.0]).unwrap().len(), 9);
        assert_eq!(demo.stability_curve("box_blur", 1).unwrap().len(), 5 * 2 * 4);
    }
}
