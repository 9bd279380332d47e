//! Experiment harness: corruptions, stability and score statistics,
//! parameter sweeps, FLOPs accounting and the built-in oracle suite.

pub mod corrupt;
pub mod format;
pub mod reports;
pub mod selftest;
pub mod synth;

pub use corrupt::{corrupt, CorruptionKind, CorruptionSpec};
pub use reports::{
    average_stability, cosine_similarity, flops_csv, flops_report, stability_csv,
    stability_records, stability_report, stats_csv, stats_report, sweep, sweep_csv,
    StabilityRecord, StatsRow, SweepParam, SweepRow,
};
pub use selftest::{run_selftest, selftest_csv};
pub use synth::{synthetic_batch, synthetic_image};
