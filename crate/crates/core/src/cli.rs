//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ModelConfig;
use crate::error::Error;
use crate::harness::{
    self, average_stability, flops_csv, flops_report, run_selftest, selftest_csv, stability_csv,
    stability_records, stats_csv, stats_report, sweep, sweep_csv, synthetic_batch,
    CorruptionKind, CorruptionSpec, SweepParam,
};
use crate::image::{load_image, Image};
use crate::model_io::{load_model, model_checksum, random_init, save_model};
use crate::vit::VitModel;

#[derive(Debug, Parser)]
#[command(name = "sata", about = "ViT inference with spatial-autocorrelation token analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded random model to --model.
    Init(Common),
    /// Print logits (CSV `class,logit`) for one image.
    Forward(Common),
    /// Per-block score statistics and FFN load.
    Stats(Common),
    /// Clean-vs-corrupted cosine similarity per block.
    Stability(Common),
    /// Sweep alpha or gamma and report FLOPs and logit drift.
    Sweep(Common),
    /// FFN tokens and FLOPs per block, plain ViT vs. token analysis.
    Flops(Common),
    /// Run the built-in oracle suite.
    Selftest(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Model path prefix (`m` for `m.manifest.json` + `m.weights.bin`).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Model config JSON, used by `init`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input image (raw f64 or PGM/PPM); repeat for a batch.
    #[arg(long)]
    image: Vec<PathBuf>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Disable the token-analysis stage.
    #[arg(long)]
    no_sata: bool,
    /// gaussian_noise, impulse_noise, box_blur, contrast, or none.
    #[arg(long)]
    corruption: Option<String>,
    #[arg(long)]
    severity: Option<u8>,
    /// Synthetic images to generate when no --image is given.
    #[arg(long, default_value_t = 4)]
    batch: usize,
    /// Sweep parameter: alpha or gamma.
    #[arg(long, default_value = "alpha")]
    param: String,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    /// Average stability records over all (corruption, severity) pairs.
    #[arg(long)]
    average: bool,
}

enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Runs the CLI with `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Init(a) => init(&a),
        Command::Forward(a) => {
            let model = load(&a)?;
            let img = images(&a, &model.config, 1)?.remove(0);
            let out = model.forward(&img)?;
            let rows: Vec<Vec<String>> = out
                .logits
                .iter()
                .enumerate()
                .map(|(i, &l)| vec![i.to_string(), harness::format::g9(l)])
                .collect();
            emit(&a, &harness::format::csv(&["class".into(), "logit".into()], &rows))
        }
        Command::Stats(a) => {
            let model = load(&a)?;
            let batch = images(&a, &model.config, a.batch)?;
            emit(&a, &stats_csv(&stats_report(&model, &batch)?))
        }
        Command::Stability(a) => stability(&a),
        Command::Sweep(a) => {
            let model = load(&a)?;
            let param: SweepParam = a.param.parse().or_else(|e: Error| usage(e.to_string()))?;
            let values = if !a.values.is_empty() {
                a.values.clone()
            } else {
                match param {
                    SweepParam::Alpha => vec![0.5, 0.75, 1.0, 1.25, 1.5, 2.0],
                    SweepParam::Gamma => (0..=10).map(|i| i as f64 / 10.0).collect(),
                }
            };
            for &v in &values {
                match param {
                    SweepParam::Alpha => check_alpha(v)?,
                    SweepParam::Gamma => check_gamma(v)?,
                }
            }
            let batch = images(&a, &model.config, a.batch)?;
            emit(&a, &sweep_csv(&sweep(&model, &batch, param, &values)?))
        }
        Command::Flops(a) => {
            let model = load(&a)?;
            let batch = images(&a, &model.config, a.batch)?;
            emit(&a, &flops_csv(&flops_report(&model, &batch)?))
        }
        Command::Selftest(a) => {
            let results = run_selftest(a.seed)?;
            emit(&a, &selftest_csv(&results))?;
            if results.iter().all(|r| r.passed()) {
                Ok(())
            } else {
                Err(CliError::Data(Error::Invalid("selftest failed".into())))
            }
        }
    }
}

fn check_alpha(v: f64) -> CliResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        usage(format!("alpha must be positive, got {v}"))
    }
}

fn check_gamma(v: f64) -> CliResult<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        usage(format!("gamma must be in [0, 1], got {v}"))
    }
}

fn apply_overrides(a: &Common, cfg: &mut ModelConfig) -> CliResult<()> {
    if let Some(v) = a.alpha {
        check_alpha(v)?;
        cfg.alpha = v;
    }
    if let Some(v) = a.gamma {
        check_gamma(v)?;
        cfg.gamma = v;
    }
    if a.no_sata {
        cfg.sata_enabled = false;
    }
    Ok(())
}

fn init(a: &Common) -> CliResult<()> {
    let Some(path) = &a.model else {
        return usage("init requires --model PATH");
    };
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.clone(),
                reason: e.to_string(),
            })?
        }
        None => ModelConfig::default(),
    };
    apply_overrides(a, &mut cfg)?;
    let model = random_init(&cfg, a.seed)?;
    save_model(&model, path)?;
    println!("{:016x}", model_checksum(&model));
    Ok(())
}

fn load(a: &Common) -> CliResult<VitModel> {
    let Some(path) = &a.model else {
        return usage("--model PATH is required");
    };
    let mut model = load_model(path)?;
    apply_overrides(a, &mut model.config)?;
    Ok(model)
}

fn images(a: &Common, cfg: &ModelConfig, count: usize) -> CliResult<Vec<Image>> {
    if a.image.is_empty() {
        if count == 0 {
            return usage("--batch must be positive");
        }
        return Ok(synthetic_batch(cfg, count, a.seed));
    }
    Ok(a.image
        .iter()
        .map(|p| load_image(p, cfg.image, cfg.channels))
        .collect::<Result<_, _>>()?)
}

fn stability(a: &Common) -> CliResult<()> {
    let model = load(a)?;
    let clean = images(a, &model.config, 1)?.remove(0);
    if let Some(s) = a.severity {
        if !(1..=5).contains(&s) {
            return usage(format!("severity must be in 1..=5, got {s}"));
        }
    }
    let kinds: Vec<Option<CorruptionKind>> = match a.corruption.as_deref() {
        None => CorruptionKind::ALL.into_iter().map(Some).collect(),
        Some("none") => vec![None],
        Some(k) => vec![Some(k.parse().or_else(|e: Error| usage(e.to_string()))?)],
    };
    let severities: Vec<u8> = a.severity.map_or((1..=5).collect(), |s| vec![s]);

    let mut sets = Vec::new();
    for kind in kinds {
        match kind {
            None => sets.push(stability_records(&model, &clean, &clean)?),
            Some(kind) => {
                for &severity in &severities {
                    let spec = CorruptionSpec {
                        kind,
                        severity,
                        seed: a.seed,
                    };
                    sets.push(harness::stability_report(&model, &clean, &spec)?);
                }
            }
        }
    }
    let records = if a.average {
        average_stability(&sets)
    } else {
        sets.concat()
    };
    emit(a, &stability_csv(&records))
}

fn emit(a: &Common, text: &str) -> CliResult<()> {
    match &a.out {
        Some(path) => write_file(path, text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source: e,
                })?;
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| {
        CliError::Data(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["sata"]), 1);
        assert_eq!(run(["sata", "bogus"]), 1);
        assert_eq!(run(["sata", "stats"]), 1);
        assert_eq!(run(["sata", "init"]), 1);
    }

    #[test]
    fn data_errors_exit_two() {
        assert_eq!(run(["sata", "stats", "--model", "/nonexistent/m"]), 2);
    }

    #[test]
    fn bad_override_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m");
        let cfg = dir.path().join("c.json");
        fs::write(
            &cfg,
            r#"{"depth":2,"dim":8,"heads":2,"ffn_ratio":2,"patch":2,"image":4,"num_classes":3}"#,
        )
        .unwrap();
        let m_s = m.to_str().unwrap();
        assert_eq!(run(["sata", "init", "--model", m_s, "--config", cfg.to_str().unwrap()]), 0);
        assert_eq!(run(["sata", "stats", "--model", m_s, "--alpha", "-1"]), 1);
        assert_eq!(run(["sata", "stability", "--model", m_s, "--severity", "9"]), 1);
        assert_eq!(run(["sata", "stability", "--model", m_s, "--corruption", "fog"]), 1);
        assert_eq!(run(["sata", "sweep", "--model", m_s, "--param", "beta"]), 1);
    }
}
