//! Batch orchestration: one TOML config, one subcommand per pipeline stage.
//!
//! Each subcommand writes into `<paths.output>/<subcommand>/` together with a
//! `log.jsonl` and a `run_manifest.json`. Stdout carries only the summary line.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use commands::{beams_from_cloud, Context, ASSET_DIR, BACKGROUND_CLOUD, BACKGROUND_PROVENANCE, MODEL_FILE, SEQUENCE_DIR};
pub use config::{
    CastMethod, DropModeKind, GridsearchSection, MeshEntry, MetricsSection, ModelKind, PathsSection, PipelineConfig, RaycastSection,
    RaydropSection, ReconstructSection, SynthSection,
};
pub use manifest::{digest_file, list_files, sha256_hex, RunLog, RunManifest, RUN_LOG, RUN_MANIFEST};

use crate::error::{Error, Result};
use crate::ingest::CloudFormat;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "LIDARSIM_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "lidarsim", version, about = "Point-cloud LiDAR simulation pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = WORKERS_ENV, default_value_t = 0)]
    pub workers: usize,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cloud format of written sequences.
    #[arg(long, global = true, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    AsciiPly,
    Binary,
}

impl From<FormatArg> for CloudFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::AsciiPly => CloudFormat::AsciiPly,
            FormatArg::Binary => CloudFormat::Binary,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Background map and object assets from the source sequence.
    Reconstruct,
    /// Re-simulate every source frame from the reconstruction.
    Raycast,
    /// Fit the return model on simulated versus real features.
    RaydropTrain,
    /// Thin the simulated frames with the trained return model.
    RaydropApply {
        /// Keep points whose return probability is at least this.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Simulate the sequence for a new sensor.
    Synth,
    /// LPCS and Chamfer between simulated and real frames.
    Metrics,
    /// Rank raycasting configurations by mean LPCS.
    Gridsearch,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Reconstruct => "reconstruct",
            Command::Raycast => "raycast",
            Command::RaydropTrain => "raydrop-train",
            Command::RaydropApply { .. } => "raydrop-apply",
            Command::Synth => "synth",
            Command::Metrics => "metrics",
            Command::Gridsearch => "gridsearch",
        }
    }
}

/// Loads the config, applies flag overrides and validates the result.
pub fn build_context(cli: &Cli) -> Result<Context> {
    let path = cli
        .config
        .clone()
        .ok_or_else(|| Error::Config(vec!["--config: a configuration file is required".into()]))?;
    let mut config = PipelineConfig::load(&path)?;
    if let Some(s) = cli.seed {
        config.seed = Some(s);
    }
    if let Some(f) = cli.format {
        config.paths.format = f.into();
    }
    if let Command::RaydropApply { threshold: Some(t) } = cli.command {
        config.raydrop.threshold = t;
        config.raydrop.mode = DropModeKind::Threshold;
    }
    config.validate()?;
    let canonical = serde_json::to_string(&config).expect("configs serialize");
    Ok(Context {
        config_sha256: sha256_hex(canonical.as_bytes()),
        config,
        config_path: path,
        workers: cli.workers,
    })
}

pub fn execute(cli: &Cli) -> Result<String> {
    let ctx = build_context(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .map_err(|e| Error::Config(vec![format!("--workers: {e}")]))?;
    pool.install(|| match cli.command {
        Command::Reconstruct => commands::reconstruct(&ctx),
        Command::Raycast => commands::raycast_stage(&ctx),
        Command::RaydropTrain => commands::raydrop_train(&ctx),
        Command::RaydropApply { .. } => commands::raydrop_apply(&ctx),
        Command::Synth => commands::synth(&ctx),
        Command::Metrics => commands::metrics(&ctx),
        Command::Gridsearch => commands::gridsearch(&ctx),
    })
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    subcommand: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    problems: Vec<String>,
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Domain(_) => "domain",
        Error::Invalid { .. } => "invalid",
        Error::Io { .. } => "io",
        Error::Parse { .. } => "parse",
        Error::Load { .. } => "load",
        Error::Json { .. } => "json",
        Error::EmptyMap => "empty_map",
        Error::Training(_) => "training",
        Error::MissingAssets { .. } => "missing_assets",
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::Config(_) => "config",
    }
}

/// Runs the parsed command. Failures print one JSON object to stderr; exit code
/// 2 marks configuration errors and 1 everything else.
pub fn main_with(cli: Cli) -> ExitCode {
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let problems = match &e {
                Error::Config(list) => list.clone(),
                _ => Vec::new(),
            };
            let report = ErrorReport {
                error: error_kind(&e),
                subcommand: cli.command.name(),
                message: e.to_string(),
                problems,
            };
            eprintln!("{}", serde_json::to_string(&report).expect("error reports serialize"));
            ExitCode::from(if matches!(e, Error::Config(_)) { 2 } else { 1 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from(["lidarsim", "raydrop-apply", "--config", "c.toml", "--threshold", "0.3", "--workers", "8", "--format", "ascii-ply"]).unwrap();
        assert_eq!(cli.workers, 8);
        assert_eq!(cli.format, Some(FormatArg::AsciiPly));
        assert!(matches!(cli.command, Command::RaydropApply { threshold: Some(t) } if t == 0.3));
    }

    #[test]
    fn missing_config_is_a_config_error() {
        let cli = Cli::try_parse_from(["lidarsim", "metrics"]).unwrap();
        assert!(matches!(build_context(&cli), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_apply_before_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[paths]\nsequence = \"s/manifest.json\"\n").unwrap();
        let p = path.to_str().unwrap();
        let cli = Cli::try_parse_from(["lidarsim", "metrics", "--config", p]).unwrap();
        assert!(matches!(build_context(&cli), Err(Error::Config(l)) if l[0].starts_with("seed")));
        let cli = Cli::try_parse_from(["lidarsim", "raydrop-apply", "--config", p, "--seed", "4", "--threshold", "0.32"]).unwrap();
        let ctx = build_context(&cli).unwrap();
        assert_eq!((ctx.config.seed, ctx.config.raydrop.threshold), (Some(4), 0.32));
        assert_eq!(ctx.config.paths.sequence, dir.path().join("s/manifest.json"));
    }
}
