//! Run configuration and its flat `section.key = value` file format.
//!
//! Precedence when assembling a config is flags > file > defaults; the file
//! layer is applied with [`RunConfig::apply_kv`] and individual overrides
//! with [`RunConfig::set`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::metrics::MetricsConfig;
use crate::seed::derive_seed;
use crate::training::TrainConfig;
use crate::vse::VseConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Manifest,
}

impl FromStr for DataSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "synthetic" => Ok(DataSource::Synthetic),
            "manifest" => Ok(DataSource::Manifest),
            other => Err(format!("unknown data source `{other}`")),
        }
    }
}

impl std::fmt::Display for DataSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DataSource::Synthetic => "synthetic",
            DataSource::Manifest => "manifest",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    pub manifest: Option<PathBuf>,
    /// Square image side used everywhere in the pipeline.
    pub size: usize,
    pub samples_per_class: usize,
    /// Fraction of samples held out from training.
    pub holdout: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            manifest: None,
            size: 32,
            samples_per_class: 200,
            holdout: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub vse: VseConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            vse: VseConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            train: TrainConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn format_value(&self) -> String;
}

macro_rules! fromstr_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse::<$t>().map_err(|e| e.to_string())
            }
            fn format_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

fromstr_value!(usize, u64, f64, DataSource);

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s.is_empty() {
            Err("empty path".into())
        } else {
            Ok(PathBuf::from(s))
        }
    }
    fn format_value(&self) -> String {
        self.display().to_string()
    }
}

impl ConfigValue for Option<PathBuf> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok((!s.is_empty()).then(|| PathBuf::from(s)))
    }
    fn format_value(&self) -> String {
        self.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+ : $ty:ty),* $(,)?) => {
        impl RunConfig {
            /// Every recognised key, in file order.
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            /// Set one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                match key {
                    $($key => {
                        self.$($field).+ = <$ty as ConfigValue>::parse_value(value)
                            .map_err(|e| Error::Config(format!("`{key}`: {e}")))?;
                    })*
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                if key == "data.size" {
                    self.generator.size = self.data.size;
                }
                Ok(())
            }

            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, <$ty as ConfigValue>::format_value(&self.$($field).+))),*]
            }
        }
    };
}

config_keys! {
    "seed" => seed: u64,
    "output.dir" => out_dir: PathBuf,
    "data.source" => data.source: DataSource,
    "data.manifest" => data.manifest: Option<PathBuf>,
    "data.size" => data.size: usize,
    "data.samples_per_class" => data.samples_per_class: usize,
    "data.holdout" => data.holdout: f64,
    "vse.word_dim" => vse.word_dim: usize,
    "vse.hidden" => vse.hidden: usize,
    "vse.image_channels" => vse.image_channels: usize,
    "vse.margin" => vse.margin: f64,
    "vse.lr" => vse.lr: f64,
    "vse.steps" => vse.steps: usize,
    "vse.batch" => vse.batch: usize,
    "vse.embeddings" => vse.embeddings: Option<PathBuf>,
    "generator.timesteps" => generator.timesteps: usize,
    "generator.noise_dim" => generator.noise_dim: usize,
    "generator.cond_dim" => generator.cond_dim: usize,
    "generator.hidden" => generator.hidden: usize,
    "generator.patch" => generator.patch: usize,
    "generator.channels" => generator.channels: usize,
    "discriminator.channels" => discriminator.channels: usize,
    "train.steps" => train.steps: usize,
    "train.batch" => train.batch: usize,
    "train.lr" => train.lr: f64,
    "train.beta1" => train.beta1: f64,
    "train.beta2" => train.beta2: f64,
    "train.kl_weight" => train.kl_weight: f64,
    "train.checkpoint_every" => train.checkpoint_every: usize,
    "train.vse_checkpoint" => train.vse_checkpoint: Option<PathBuf>,
    "metrics.samples" => metrics.samples: usize,
    "metrics.splits" => metrics.splits: usize,
    "metrics.classifier_steps" => metrics.classifier_steps: usize,
    "metrics.retrieval_pool" => metrics.retrieval_pool: usize,
    "metrics.retrieval_pools" => metrics.retrieval_pools: usize,
}

/// Keys that fix parameter shapes; a checkpoint must agree on all of them.
pub const MODEL_SHAPE_KEYS: &[&str] = &[
    "data.size",
    "vse.word_dim",
    "vse.hidden",
    "vse.image_channels",
    "generator.timesteps",
    "generator.noise_dim",
    "generator.cond_dim",
    "generator.hidden",
    "generator.patch",
    "generator.channels",
    "discriminator.channels",
];

/// Shape keys relevant to the embedding alone.
pub const VSE_SHAPE_KEYS: &[&str] = &["data.size", "vse.word_dim", "vse.hidden", "vse.image_channels"];

impl RunConfig {
    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&std::fs::read_to_string(path)?)
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries().into_iter().find(|(k, _)| *k == key).map(|(_, v)| v)
    }

    /// Cross-field checks.
    pub fn validate(&self) -> Result<()> {
        if self.generator.size != self.data.size {
            return Err(Error::Config(format!(
                "generator size {} differs from data size {}",
                self.generator.size, self.data.size
            )));
        }
        self.generator.validate()?;
        if self.data.source == DataSource::Manifest && self.data.manifest.is_none() {
            return Err(Error::Config("data.source = manifest requires data.manifest".into()));
        }
        if !(0.0..1.0).contains(&self.data.holdout) {
            return Err(Error::Config("data.holdout must lie in [0, 1)".into()));
        }
        if self.train.batch < 2 || self.vse.batch < 2 {
            return Err(Error::BatchTooSmall(self.train.batch.min(self.vse.batch)));
        }
        if self.metrics.splits == 0 {
            return Err(Error::Config("metrics.splits must be positive".into()));
        }
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            size: self.data.size,
            samples_per_class: self.data.samples_per_class,
            seed: derive_seed(self.seed, "data"),
            ..Default::default()
        }
    }

    /// Ensure every shape key agrees between `self` (expected) and `found`.
    pub fn check_shapes_match(&self, found: &RunConfig) -> Result<()> {
        self.check_keys_match(found, MODEL_SHAPE_KEYS)
    }

    pub fn check_keys_match(&self, found: &RunConfig, keys: &[&str]) -> Result<()> {
        for key in keys {
            let (e, f) = (self.get(key), found.get(key));
            if e != f {
                return Err(Error::ConfigMismatch {
                    key: key.to_string(),
                    expected: e.unwrap_or_default(),
                    found: f.unwrap_or_default(),
                });
            }
        }
        Ok(())
    }
}
