//! Adversarial training: batch construction, the discriminator and
//! generator objectives, the alternating loop, checkpoints and loss curves.

mod batch;
mod checkpoint;
mod loss;
mod trainer;

pub use batch::{
    encode_captions, make_mismatching, make_relevant, roll, BatchTriple, CaptionBatch, CaptionEncoding,
};
pub use checkpoint::{
    load_checkpoint, load_vse_checkpoint, read_checkpoint, save_checkpoint, LoadedCheckpoint, CONFIG_FILE,
    PARAMS_FILE, VOCAB_FILE,
};
pub use loss::{
    bce, discriminator_loss, discriminator_loss_from_probs, generator_loss, generator_loss_from_probs, scalar,
    DiscriminatorLoss,
};
pub use trainer::{read_loss_csv, train, write_loss_csv, LossCsvWriter, TrainOutcome, Trainer, TrainingSet};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub kl_weight: f64,
    /// Save `ckpt_<step>/` every this many steps (0 disables periodic saves).
    pub checkpoint_every: usize,
    /// Pretrained embedding checkpoint to freeze into the model.
    pub vse_checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch: 16,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            kl_weight: 2.0,
            checkpoint_every: 250,
            vse_checkpoint: None,
        }
    }
}

/// Losses recorded after one training step (steps numbered from 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub g_loss: f64,
    pub d_match: f64,
    pub d_mismatch: f64,
    pub d_relevant: f64,
}

impl LossRecord {
    pub fn d_total(&self) -> f64 {
        self.d_match + self.d_mismatch + self.d_relevant
    }
}
