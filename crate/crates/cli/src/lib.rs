//! Argument parsing and subcommand dispatch for the `patchcanvas` binary.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use patchcanvas_core::pipeline::{self, LOSSES, VSE_DIR, VSE_LOSSES};
use patchcanvas_core::training::{load_checkpoint, read_checkpoint};
use patchcanvas_core::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "patchcanvas", version, about = "Text-to-image canvas painter: pretrain, train, sample, inspect, evaluate")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Key-value config file (`section.key = value` per line).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed; overrides `seed` from the config file.
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override a single config key, e.g. `--set train.steps=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain the visual-semantic embedding; writes `<out>/vse/` and `<out>/vse_losses.csv`.
    VsePretrain,
    /// Adversarial training on the frozen embedding; writes `<out>/losses.csv` and `<out>/ckpt_<step>/`.
    Train,
    /// Paint images for one caption, each with a JSON attention trace.
    Sample {
        /// A `ckpt_<step>` directory written by `train`.
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        #[arg(long)]
        caption: String,
        /// Number of images, each with fresh noise.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        count: u64,
    },
    /// Render a trace JSON as a timestep-by-token heat map (PNG and SVG).
    AttnMap {
        /// A `sample_XXX.json` written by `sample`.
        #[arg(long, value_name = "PATH")]
        trace: PathBuf,
    },
    /// Inception score and embedding recall of a trained checkpoint.
    Eval {
        /// A `ckpt_<step>` directory written by `train`.
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
    },
}

impl Common {
    /// Layer the config file, then `--set`, then `--seed`/`--out` over `base`.
    pub fn resolve(&self, mut cfg: RunConfig) -> Result<RunConfig> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            cfg.apply_kv(&text).with_context(|| format!("in config {}", path.display()))?;
        }
        for kv in &self.overrides {
            let Some((key, value)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{kv}`");
            };
            cfg.set(key.trim(), value)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Config for commands that start from a checkpoint: its own config is
/// the default layer, so only deliberate overrides can disagree with it.
fn checkpoint_config(common: &Common, dir: &Path) -> Result<RunConfig> {
    let ckpt = read_checkpoint(dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
    common.resolve(ckpt.config)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::VsePretrain => {
            let cfg = cli.common.resolve(RunConfig::default())?;
            let out = &cfg.out_dir;
            let run = pipeline::run_vse_pretrain(&cfg, out)?;
            let last = run.history.last().map(|p| p.loss).unwrap_or(f64::NAN);
            println!(
                "embedding pretrained for {} steps (final ranking loss {last:.4}); wrote {} and {}",
                run.history.len(),
                out.join(VSE_DIR).display(),
                out.join(VSE_LOSSES).display()
            );
        }
        Command::Train => {
            let cfg = cli.common.resolve(RunConfig::default())?;
            let out = &cfg.out_dir;
            let run = pipeline::run_train(&cfg, out)?;
            let last = run.outcome.checkpoints.last().context("training wrote no checkpoint")?;
            println!(
                "trained {} steps; wrote {} and {}",
                run.outcome.records.len(),
                out.join(LOSSES).display(),
                last.display()
            );
        }
        Command::Sample {
            checkpoint,
            caption,
            count,
        } => {
            let cfg = checkpoint_config(&cli.common, checkpoint)?;
            let ckpt = load_checkpoint(checkpoint, &cfg)?;
            let paths = pipeline::run_sample(&ckpt, caption, *count as usize, cfg.seed, &cfg.out_dir)?;
            for p in paths {
                println!("{}", p.display());
            }
        }
        Command::AttnMap { trace } => {
            let cfg = cli.common.resolve(RunConfig::default())?;
            let (png, svg) = pipeline::run_attention_map(trace, &cfg.out_dir)?;
            println!("{}\n{}", png.display(), svg.display());
        }
        Command::Eval { checkpoint } => {
            let cfg = checkpoint_config(&cli.common, checkpoint)?;
            let ckpt = load_checkpoint(checkpoint, &cfg)?;
            let report = pipeline::run_eval(&ckpt, &cfg, &cfg.out_dir)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}
