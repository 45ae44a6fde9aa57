//! Command-line pipeline around `xsynth-core`: dataset manifests, cross-map
//! training, synthesis, evaluation and a synthetic demo corpus.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod config;
pub mod demo;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use error::{CliError, Result};

use config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(
    name = "xsynth",
    version,
    about = "Thermal-to-visible face synthesis by multi-region feature inversion"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Dataset manifest CSV.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Pipeline config file (`key = value` lines).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config worker count.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one cross-spectrum map per region.
    Train(Common),
    /// Synthesize a visible image for every eval entry.
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Directory holding the trained region models.
        #[arg(long)]
        models: PathBuf,
    },
    /// Score synthesized images against the visible gallery.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory holding the synthesized images.
        #[arg(long = "synth-dir")]
        synth_dir: PathBuf,
    },
    /// Write a synthetic paired-band demo corpus with manifest and config.
    MakeDemoData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        subjects: usize,
    },
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.apply_seed();
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => pipeline::cmd_train(&c.manifest, &load_config(&c)?, &c.out),
        Command::Synthesize { common: c, models } => {
            pipeline::cmd_synthesize(&c.manifest, &load_config(&c)?, &models, &c.out)
        }
        Command::Evaluate { common: c, synth_dir } => {
            pipeline::cmd_evaluate(&c.manifest, &load_config(&c)?, &synth_dir, &c.out)
        }
        Command::MakeDemoData { out, seed, subjects } => demo::make_demo_data(&out, seed, subjects),
    }
}
