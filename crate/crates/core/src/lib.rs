//! Text-to-image synthesis by recurrent patch painting.
//!
//! A frozen visual-semantic embedding encodes captions; a recurrent
//! generator attends over the caption words and paints the image onto a
//! canvas one gated patch at a time; a conditional discriminator judges
//! image/caption pairs.

pub mod config;
pub mod data;
pub mod discriminator;
mod error;
pub mod generator;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod seed;
pub mod training;
pub mod vse;

pub use config::{DataConfig, DataSource, RunConfig};
pub use data::{Image, Sample, SynthConfig};
pub use discriminator::{Discriminator, DiscriminatorConfig, DiscriminatorOutput};
pub use error::{Error, Result};
pub use generator::{Generator, GeneratorConfig, PaintOutput, TraceRecord};
pub use metrics::{inception_score, retrieval_recall, EvalReport, MetricsConfig};
pub use model::{CanvasModel, VseBundle};
pub use params::ParamStore;
pub use seed::{derive_indexed, derive_seed, rng_for, SeededRng};
pub use training::{BatchTriple, LossRecord, TrainConfig};
pub use vse::{SentenceEncoder, SentenceEncoding, TokenSequence, VseConfig, VseModel, Vocabulary};
