use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use biasprobe_core::dataset::{make_synthetic_corpus, SynthOptions};
use biasprobe_core::instrumentation::{audit_checkpoints, filter_audit, AUDIT_MODELS, DEFAULT_MARGIN};
use biasprobe_core::models::checkpoint;
use biasprobe_core::plot::{self, Figure};
use biasprobe_core::runner::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "biasprobe", version, about = "Bias auditing for face-frontalization GANs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Render a figure from a finished run directory.
    Plot {
        #[arg(short, long)]
        artifact: PathBuf,
        /// recovery_bars, match_bars, variance_curves, pca_scatter or filter_scatter
        #[arg(short, long)]
        figure: Figure,
    },
    /// Write a synthetic avatar corpus with its manifest.
    Synth {
        #[arg(short = 'n', long, default_value_t = 100)]
        subjects: usize,
        #[arg(short, long, default_value_t = 32)]
        resolution: usize,
        #[arg(short, long, default_value_t = 0)]
        seed: u64,
        /// Fraction of subjects with attribute A.
        #[arg(long, default_value_t = 0.5)]
        ratio: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Cross-model filter PCA over six checkpoints.
    AuditFilters {
        /// Six model run directories or generator checkpoint directories.
        #[arg(short, long, num_args = 1.., required = true)]
        models: Vec<PathBuf>,
        /// Index of the unbiased model among `--models`.
        #[arg(long)]
        reference: usize,
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: f64,
        /// Write the scatter JSON here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn audit(models: &[PathBuf], reference: usize, margin: f64) -> Result<serde_json::Value> {
    if models.len() != AUDIT_MODELS {
        bail!("audit-filters needs exactly {AUDIT_MODELS} checkpoints, got {}", models.len());
    }
    let is_bundle = |p: &Path| p.join("bundle.json").exists();
    if models.iter().all(|p| is_bundle(p)) {
        let bundles = models
            .iter()
            .map(|p| checkpoint::load_bundle(p, None).with_context(|| format!("loading {}", p.display())))
            .collect::<Result<Vec<_>>>()?;
        let mut by_role = serde_json::Map::new();
        for (role, _) in &bundles[0].generators {
            let gens = bundles
                .iter()
                .map(|b| b.generator(*role).context("checkpoints mix model kinds"))
                .collect::<Result<Vec<_>>>()?;
            let scatters = filter_audit(&gens, reference, margin)?;
            by_role.insert(role.name().to_string(), serde_json::to_value(scatters)?);
        }
        return Ok(serde_json::Value::Object(by_role));
    }
    Ok(serde_json::to_value(audit_checkpoints(models, reference, margin)?)?)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let art = runner::run(&cfg)?;
            println!("{}", art.dir.display());
            for r in &art.reports {
                println!("  report {}", r.display());
            }
            for p in &art.plots {
                println!("  plot   {}", p.display());
            }
        }
        Command::Plot { artifact, figure } => {
            for p in plot::plot(&artifact, figure)? {
                println!("{}", p.display());
            }
        }
        Command::Synth { subjects, resolution, seed, ratio, output } => {
            let opts = SynthOptions { n_subjects: subjects, resolution, seed, attribute_ratio: ratio };
            let (_, manifest) = make_synthetic_corpus(&opts, &output)?;
            println!("{}", manifest.display());
        }
        Command::AuditFilters { models, reference, margin, output } => {
            let value = audit(&models, reference, margin)?;
            let text = serde_json::to_string_pretty(&value)?;
            match output {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => println!("{text}"),
            }
        }
    }
    Ok(())
}
