//! Visual-semantic embedding: tokenization, the self-attended sentence
//! encoder, the image encoder into the same latent space, and the ranking
//! objective that aligns them.

mod image_encoder;
mod ranking;
mod text;
mod vocab;

pub use image_encoder::ImageEncoder;
pub use ranking::{cosine_similarity_matrix, ranking_loss};
pub use text::{
    apply_word_vectors, read_word_vectors, EncodedBatch, SentenceEncoder, SentenceEncoding,
    WORD_INIT,
};
pub use vocab::{normalize, tokenize, TokenSequence, Vocabulary, PAD, PAD_TOKEN, UNK, UNK_TOKEN};

use std::path::PathBuf;

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::data::{Image, Sample, SynthConfig};
use crate::error::{Error, Result};
use crate::metrics::retrieval_recall;
use crate::params::ParamStore;
use crate::seed::SeededRng;

pub const TEXT_PREFIX: &str = "vse.text";
pub const IMAGE_PREFIX: &str = "vse.image";
pub const VSE_PREFIX: &str = "vse.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VseConfig {
    pub word_dim: usize,
    pub hidden: usize,
    pub image_channels: usize,
    pub margin: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    /// Optional pretrained word vectors, `token v1 ... v_dw` per line.
    pub embeddings: Option<PathBuf>,
}

impl Default for VseConfig {
    fn default() -> Self {
        Self {
            word_dim: 32,
            hidden: 64,
            image_channels: 16,
            margin: 0.2,
            lr: 1e-3,
            steps: 300,
            batch: 32,
            embeddings: None,
        }
    }
}

pub struct VseModel {
    pub vocab: Vocabulary,
    pub text: SentenceEncoder,
    pub image: ImageEncoder,
}

impl VseModel {
    pub fn new(
        store: &mut ParamStore,
        vocab: Vocabulary,
        cfg: &VseConfig,
        image_size: usize,
    ) -> Result<Self> {
        let text = SentenceEncoder::new(store, TEXT_PREFIX, vocab.len(), cfg.word_dim, cfg.hidden)?;
        let image = ImageEncoder::new(store, IMAGE_PREFIX, image_size, cfg.image_channels, cfg.hidden)?;
        if let Some(path) = &cfg.embeddings {
            let vectors = read_word_vectors(path, &vocab, cfg.word_dim)?;
            let n = apply_word_vectors(store, &format!("{TEXT_PREFIX}.words"), &vectors)?;
            log::info!("loaded {n} pretrained word vectors from {}", path.display());
        }
        Ok(Self { vocab, text, image })
    }

    pub fn tokenize(&self, caption: &str) -> Result<TokenSequence> {
        tokenize(caption, &self.vocab)
    }

    pub fn encode_captions(&self, captions: &[&str]) -> Result<EncodedBatch> {
        let seqs = captions
            .iter()
            .map(|c| self.tokenize(c))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&TokenSequence> = seqs.iter().collect();
        self.text.encode_batch(&refs)
    }

    /// `(image_embs, sentence_embs)` for row-aligned samples.
    pub fn embed_pairs(&self, samples: &[&Sample], dtype: DType) -> Result<(Tensor, Tensor)> {
        let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
        let captions: Vec<&str> = samples.iter().map(|s| s.caption.as_str()).collect();
        let img = self.image.forward(&Image::batch_tensor(&images, dtype)?)?;
        let sent = self.encode_captions(&captions)?.sentence;
        Ok((img, sent))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
}

/// Train the sentence and image encoders on the ranking objective.
/// Returns the per-step loss history, steps numbered from 1.
pub fn pretrain_vse(
    store: &ParamStore,
    model: &VseModel,
    train: &[Sample],
    cfg: &VseConfig,
    rng: &mut SeededRng,
) -> Result<Vec<LossPoint>> {
    if train.len() < 2 || cfg.batch < 2 {
        return Err(Error::BatchTooSmall(train.len().min(cfg.batch)));
    }
    let seqs = train
        .iter()
        .map(|s| model.tokenize(&s.caption))
        .collect::<Result<Vec<_>>>()?;
    let params = ParamsAdamW {
        lr: cfg.lr,
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut opt = AdamW::new(store.vars_with_prefix(VSE_PREFIX), params)?;
    let batch = cfg.batch.min(train.len());

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if cursor + batch > order.len() {
            order.shuffle(rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;

        let images: Vec<&Image> = idx.iter().map(|&i| &train[i].image).collect();
        let batch_seqs: Vec<&TokenSequence> = idx.iter().map(|&i| &seqs[i]).collect();
        let img = model.image.forward(&Image::batch_tensor(&images, store.dtype())?)?;
        let sent = model.text.encode_batch(&batch_seqs)?.sentence;
        let loss = ranking_loss(&img, &sent, cfg.margin)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("ranking loss = {value}"),
            });
        }
        opt.backward_step(&loss)?;
        history.push(LossPoint { step: step + 1, loss: value });
        if step % 50 == 0 {
            log::info!("vse step {step}: ranking loss {value:.4}");
        }
    }
    Ok(history)
}

/// Caption-to-image recall@1 over groups holding one sample of each color,
/// so chance is `1 / colors`. Returns the mean over `groups` groups.
pub fn color_group_recall(
    model: &VseModel,
    samples: &[Sample],
    synth: &SynthConfig,
    groups: usize,
    dtype: DType,
    rng: &mut SeededRng,
) -> Result<f64> {
    let n_colors = synth.colors.len();
    let mut by_color: Vec<Vec<&Sample>> = vec![Vec::new(); n_colors];
    for s in samples {
        if let Some(id) = s.class_id {
            by_color[synth.class_color(id)].push(s);
        }
    }
    if by_color.iter().any(Vec::is_empty) {
        return Err(Error::Config("every color needs at least one held-out sample".into()));
    }
    let mut total = 0.0;
    for _ in 0..groups {
        let group: Vec<&Sample> = by_color
            .iter()
            .map(|v| *v.choose(rng).expect("non-empty"))
            .collect();
        let (img, sent) = model.embed_pairs(&group, dtype)?;
        total += retrieval_recall(&to_rows(&img)?, &to_rows(&sent)?, 1)?;
    }
    Ok(total / groups as f64)
}

pub(crate) fn to_rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    Ok(t.to_dtype(DType::F64)?.to_vec2()?)
}
