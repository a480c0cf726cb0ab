//! `uqeval` command-line runner.
//!
//! Subcommands: `synth` writes a synthetic dataset, `train` fits an
//! ensemble and writes a run directory, `evaluate` scores a trained run and
//! `compare` forms out-of-domain / in-domain ratios of two summaries.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 invalid configuration,
//! 3 invalid data, format or lineage, 4 training divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use uqeval::data::{SplitStrategy, SyntheticSpec};
use uqeval::estimators::UncertaintyKind;
use uqeval::experiment::{cmd_compare, cmd_evaluate, cmd_synth, cmd_train, write_compare, MetricsSummary, RunConfig};
use uqeval::UqError;

#[derive(Debug, Parser)]
#[command(
    name = "uqeval",
    version,
    about = "Train and evaluate uncertainty estimators for regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (`data.csv` and `noise.csv`).
    Synth {
        /// JSON synthetic spec; defaults are used for missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the configured estimator and write a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the split strategy (`random` or `group`).
        #[arg(long)]
        split: Option<SplitStrategy>,
    },
    /// Evaluate a trained run on its test split.
    Evaluate {
        /// Path to a run's `manifest.json`.
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to the manifest's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Uncertainty columns to score (`ale`, `epi`, `total`); all by default.
        #[arg(long = "uncertainty")]
        uncertainty: Vec<UncertaintyKind>,
    },
    /// Compare an in-domain and an out-of-domain summary of the same method.
    Compare {
        /// In-domain `summary.json`.
        in_domain: PathBuf,
        /// Out-of-domain `summary.json`.
        out_of_domain: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &UqError) -> u8 {
    match err {
        UqError::Config(_) => 2,
        UqError::Divergence { .. } => 4,
        UqError::Input(_)
        | UqError::Dimension { .. }
        | UqError::DegenerateUncertainty(_)
        | UqError::InfeasibleSplit(_)
        | UqError::MissingColumn { .. }
        | UqError::Parse { .. }
        | UqError::NonFinite { .. }
        | UqError::EmptyFile { .. }
        | UqError::Format { .. }
        | UqError::Lineage(_)
        | UqError::Csv(_)
        | UqError::Json(_) => 3,
        UqError::Io(_) => 1,
    }
}

fn read_synth_spec(path: &Path) -> uqeval::Result<SyntheticSpec> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| UqError::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> uqeval::Result<()> {
    match cli.command {
        Command::Synth { config, out, seed } => {
            let mut spec = match config {
                Some(path) => read_synth_spec(&path)?,
                None => SyntheticSpec::default(),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            std::fs::create_dir_all(&out)?;
            let data = cmd_synth(&spec, &out)?;
            println!("wrote {} rows to {}", data.len(), out.join("data.csv").display());
        }
        Command::Train {
            config,
            out,
            seed,
            split,
        } => {
            let mut cfg = RunConfig::from_file(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(strategy) = split {
                cfg.split.strategy = strategy;
            }
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| UqError::Config("no output directory: pass --out or set `output_dir`".into()))?;
            let outcome = cmd_train(&cfg, &out)?;
            println!(
                "trained {} ({} models) -> {}",
                cfg.method.name(),
                outcome.manifest.models.len(),
                outcome.manifest_path.display()
            );
        }
        Command::Evaluate {
            manifest,
            out,
            uncertainty,
        } => {
            let out = match out {
                Some(dir) => dir,
                None => manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            std::fs::create_dir_all(&out)?;
            let eval = cmd_evaluate(&manifest, &uncertainty, &out)?;
            print!("{}", eval.summary.to_table());
        }
        Command::Compare {
            in_domain,
            out_of_domain,
            out,
        } => {
            let report = cmd_compare(
                &MetricsSummary::read(&in_domain)?,
                &MetricsSummary::read(&out_of_domain)?,
            )?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                write_compare(&report, &dir)?;
            }
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
