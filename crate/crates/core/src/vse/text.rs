//! Self-attended sentence encoder.
//!
//! Word vectors run through a bidirectional GRU; the two directions are
//! summed per token, each summed state is scored by an affine map, the
//! scores are softmax-normalized, and the sentence vector is the
//! attention-weighted sum of the per-token states.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::Linear;

use super::vocab::{TokenSequence, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::nn::{masked_softmax, weighted_sum, GruCell};
use crate::params::ParamStore;

/// Initial word vectors are drawn from `U(-WORD_INIT, WORD_INIT)`.
pub const WORD_INIT: f64 = 0.1;

/// Encoding of a single caption.
#[derive(Clone, Debug)]
pub struct SentenceEncoding {
    /// `(n, d_h)` summed bidirectional states.
    pub per_token: Tensor,
    /// `(n,)` normalized attention weights.
    pub attention: Tensor,
    /// `(d_h,)` pooled sentence vector.
    pub sentence: Tensor,
}

/// Encoding of a padded batch of captions.
#[derive(Clone, Debug)]
pub struct EncodedBatch {
    /// `(B, n_max, d_h)`; rows past a caption's length are unused.
    pub per_token: Tensor,
    /// `(B, n_max)` with 1 on real tokens and 0 on padding.
    pub mask: Tensor,
    /// `(B, n_max)`, zero on padding.
    pub attention: Tensor,
    /// `(B, d_h)`
    pub sentence: Tensor,
}

impl EncodedBatch {
    pub fn detach(&self) -> Self {
        Self {
            per_token: self.per_token.detach(),
            mask: self.mask.detach(),
            attention: self.attention.detach(),
            sentence: self.sentence.detach(),
        }
    }
}

pub struct SentenceEncoder {
    table: Tensor,
    forward_cell: GruCell,
    backward_cell: GruCell,
    score: Linear,
    word_dim: usize,
    hidden: usize,
}

impl SentenceEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        word_dim: usize,
        hidden: usize,
    ) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::Config(format!("vocabulary size {vocab_size} below 2")));
        }
        let table_name = format!("{name}.words");
        let table = store.uniform(&table_name, (vocab_size, word_dim), WORD_INIT)?;
        let zero_row = Tensor::zeros((1, word_dim), store.dtype(), store.device())?;
        let rest = table.narrow(0, 1, vocab_size - 1)?;
        store.assign(&table_name, &Tensor::cat(&[&zero_row, &rest], 0)?)?;
        Ok(Self {
            table,
            forward_cell: GruCell::new(store, &format!("{name}.gru_fwd"), word_dim, hidden)?,
            backward_cell: GruCell::new(store, &format!("{name}.gru_bwd"), word_dim, hidden)?,
            score: store.linear(&format!("{name}.score"), hidden, 1)?,
            word_dim,
            hidden,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn word_dim(&self) -> usize {
        self.word_dim
    }

    pub fn vocab_size(&self) -> usize {
        self.table.dim(0).unwrap_or(0)
    }

    /// The word-embedding table, `(K, d_w)`.
    pub fn table(&self) -> &Tensor {
        &self.table
    }

    fn check_indices(&self, indices: &[usize]) -> Result<()> {
        let size = self.vocab_size();
        match indices.iter().find(|&&i| i >= size) {
            Some(&index) => Err(Error::IndexOutOfRange { index, size }),
            None => Ok(()),
        }
    }

    /// Gather the table row of every token: `(n, d_w)`.
    pub fn embed_tokens(&self, seq: &TokenSequence) -> Result<Tensor> {
        self.check_indices(&seq.indices)?;
        let ids: Vec<u32> = seq.indices.iter().map(|&i| i as u32).collect();
        let ids = Tensor::from_vec(ids, seq.len(), &Device::Cpu)?;
        Ok(self.table.index_select(&ids, 0)?)
    }

    /// Right-padded word vectors `(B, n_max, d_w)` and mask `(B, n_max)`.
    pub fn embed_batch(&self, seqs: &[&TokenSequence]) -> Result<(Tensor, Tensor)> {
        let n_max = seqs.iter().map(|s| s.len()).max().ok_or(Error::EmptySequence)?;
        if n_max == 0 {
            return Err(Error::EmptySequence);
        }
        let mut ids = Vec::with_capacity(seqs.len() * n_max);
        let mut mask = Vec::with_capacity(seqs.len() * n_max);
        for s in seqs {
            if s.is_empty() {
                return Err(Error::EmptySequence);
            }
            self.check_indices(&s.indices)?;
            for j in 0..n_max {
                ids.push(s.indices.get(j).copied().unwrap_or(PAD) as u32);
                mask.push(if j < s.len() { 1.0f64 } else { 0.0 });
            }
        }
        let b = seqs.len();
        let ids = Tensor::from_vec(ids, b * n_max, &Device::Cpu)?;
        let mask = Tensor::from_vec(mask, (b, n_max), &Device::Cpu)?.to_dtype(self.table.dtype())?;
        let g = self
            .table
            .index_select(&ids, 0)?
            .reshape((b, n_max, self.word_dim))?
            .broadcast_mul(&mask.unsqueeze(2)?)?;
        Ok((g, mask))
    }

    /// Run the masked bidirectional GRU, score, normalize and pool.
    pub fn encode_embedded(&self, g: &Tensor, mask: &Tensor) -> Result<EncodedBatch> {
        let (b, n, d_w) = g.dims3()?;
        if d_w != self.word_dim {
            return Err(Error::shape(self.word_dim, d_w));
        }
        if n == 0 {
            return Err(Error::EmptySequence);
        }
        let zero = Tensor::zeros((b, self.hidden), g.dtype(), g.device())?;
        let step = |cell: &GruCell, h: &Tensor, t: usize| -> Result<Tensor> {
            let x = g.narrow(1, t, 1)?.squeeze(1)?;
            let m = mask.narrow(1, t, 1)?;
            let h_new = cell.forward(&x, h)?;
            // Padding positions keep the previous state.
            Ok((h + m.broadcast_mul(&(h_new - h)?)?)?)
        };

        let mut fwd = Vec::with_capacity(n);
        let mut h = zero.clone();
        for t in 0..n {
            h = step(&self.forward_cell, &h, t)?;
            fwd.push(h.clone());
        }
        let mut bwd = vec![zero.clone(); n];
        let mut h = zero;
        for t in (0..n).rev() {
            h = step(&self.backward_cell, &h, t)?;
            bwd[t] = h.clone();
        }
        let per_token = (Tensor::stack(&fwd, 1)? + Tensor::stack(&bwd, 1)?)?;
        let scores = self.score.forward(&per_token)?.squeeze(D::Minus1)?;
        let attention = masked_softmax(&scores, mask)?;
        let sentence = weighted_sum(&attention, &per_token)?;
        Ok(EncodedBatch {
            per_token,
            mask: mask.clone(),
            attention,
            sentence,
        })
    }

    /// Encode a single sequence of word vectors `(n, d_w)`.
    pub fn encode_sequence(&self, g: &Tensor) -> Result<SentenceEncoding> {
        let (n, _) = g.dims2()?;
        if n == 0 {
            return Err(Error::EmptySequence);
        }
        let mask = Tensor::ones((1, n), g.dtype(), g.device())?;
        let out = self.encode_embedded(&g.unsqueeze(0)?, &mask)?;
        Ok(SentenceEncoding {
            per_token: out.per_token.squeeze(0)?,
            attention: out.attention.squeeze(0)?,
            sentence: out.sentence.squeeze(0)?,
        })
    }

    pub fn encode_batch(&self, seqs: &[&TokenSequence]) -> Result<EncodedBatch> {
        let (g, mask) = self.embed_batch(seqs)?;
        self.encode_embedded(&g, &mask)
    }
}

/// Read a whitespace-separated word-vector file (`token v1 ... v_dw` per
/// line), keeping only tokens present in `vocab`.
pub fn read_word_vectors(
    path: &Path,
    vocab: &Vocabulary,
    word_dim: usize,
) -> Result<HashMap<usize, Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::MalformedLine {
                line: i + 1,
                detail: format!("bad number: {e}"),
            })?;
        if values.len() != word_dim {
            return Err(Error::MalformedLine {
                line: i + 1,
                detail: format!("expected {word_dim} values, found {}", values.len()),
            });
        }
        if let Some(idx) = vocab.get(token) {
            if idx != PAD {
                out.insert(idx, values);
            }
        }
    }
    Ok(out)
}

/// Overwrite table rows with pretrained vectors.
pub fn apply_word_vectors(
    store: &ParamStore,
    table_name: &str,
    vectors: &HashMap<usize, Vec<f64>>,
) -> Result<usize> {
    let var = store
        .var(table_name)
        .ok_or_else(|| Error::Config(format!("unknown parameter `{table_name}`")))?;
    let (k, d) = var.as_tensor().dims2()?;
    let mut host: Vec<f64> = var.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    for (&row, values) in vectors {
        if row < k {
            host[row * d..(row + 1) * d].copy_from_slice(values);
        }
    }
    store.assign(table_name, &Tensor::from_vec(host, (k, d), &Device::Cpu)?)?;
    Ok(vectors.len())
}
