//! Evaluation: inception score over classifier posteriors and
//! caption-to-image retrieval recall.

mod classifier;
mod inception;
mod retrieval;

pub use classifier::{argmax, ClassifierTraining, DeskClassifier};
pub use inception::{inception_score, validate_posteriors, ROW_SUM_TOLERANCE};
pub use retrieval::retrieval_recall;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    /// Number of generated images scored.
    pub samples: usize,
    pub splits: usize,
    pub classifier_steps: usize,
    /// Retrieval is measured within pools of this many pairs.
    pub retrieval_pool: usize,
    pub retrieval_pools: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            splits: 10,
            classifier_steps: 1500,
            retrieval_pool: 12,
            retrieval_pools: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub inception_mean: f64,
    pub inception_std: f64,
    pub recall_at: BTreeMap<String, f64>,
}
