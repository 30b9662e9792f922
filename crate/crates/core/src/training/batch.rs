use candle_core::{DType, Device, Tensor};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::vse::{EncodedBatch, VseModel};

/// Circular shift: `out[i] = items[(i - shift) mod B]`.
pub fn roll<T: Clone>(items: &[T], shift: usize) -> Vec<T> {
    let b = items.len();
    (0..b).map(|i| items[(i + b - shift % b) % b].clone()).collect()
}

/// Roll by one, pairing every image with another row's caption.
pub fn make_mismatching<T: Clone>(captions: &[T]) -> Result<Vec<T>> {
    if captions.len() < 2 {
        return Err(Error::BatchTooSmall(captions.len()));
    }
    Ok(roll(captions, 1))
}

/// Roll by half the batch.
pub fn make_relevant<T: Clone>(captions: &[T]) -> Result<Vec<T>> {
    if captions.len() < 2 {
        return Err(Error::BatchTooSmall(captions.len()));
    }
    Ok(roll(captions, captions.len() / 2))
}

/// Frozen encoder output for one caption, kept on the host.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionEncoding {
    pub tokens: Vec<String>,
    /// Row-major `(n, d)`.
    pub per_token: Vec<f32>,
    pub sentence: Vec<f32>,
}

impl CaptionEncoding {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.sentence.len()
    }
}

/// Rescale to unit root-mean-square, i.e. norm `sqrt(len)`.
fn unit(v: &mut [f32]) {
    let rms = (v.iter().map(|x| x * x).sum::<f32>() / v.len() as f32).sqrt();
    if rms > 0.0 {
        v.iter_mut().for_each(|x| *x /= rms);
    }
}

/// Run the (frozen) text encoder over `captions`. The ranking objective
/// only constrains directions, so the sentence vector and every token
/// state are rescaled to unit root-mean-square.
pub fn encode_captions(vse: &VseModel, captions: &[&str]) -> Result<Vec<CaptionEncoding>> {
    let mut out = Vec::with_capacity(captions.len());
    for chunk in captions.chunks(256) {
        let seqs = chunk
            .iter()
            .map(|c| vse.tokenize(c))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = seqs.iter().collect();
        let enc: EncodedBatch = vse.text.encode_batch(&refs)?.detach();
        let per_token: Vec<Vec<Vec<f32>>> = enc.per_token.to_dtype(DType::F32)?.to_vec3()?;
        let sentence: Vec<Vec<f32>> = enc.sentence.to_dtype(DType::F32)?.to_vec2()?;
        for ((seq, rows), mut s) in seqs.into_iter().zip(per_token).zip(sentence) {
            let n = seq.len();
            unit(&mut s);
            let rows: Vec<Vec<f32>> = rows
                .into_iter()
                .take(n)
                .map(|mut r| {
                    unit(&mut r);
                    r
                })
                .collect();
            out.push(CaptionEncoding {
                per_token: rows.into_iter().flatten().collect(),
                tokens: seq.raw_tokens,
                sentence: s,
            });
        }
    }
    Ok(out)
}

/// Padded caption tensors for one role in a batch.
#[derive(Clone, Debug)]
pub struct CaptionBatch {
    /// `(B, n_max, d)`
    pub per_token: Tensor,
    /// `(B, n_max)`
    pub mask: Tensor,
    /// `(B, d)`
    pub sentence: Tensor,
}

impl CaptionBatch {
    pub fn from_encodings(encs: &[&CaptionEncoding], dtype: DType) -> Result<Self> {
        let b = encs.len();
        let d = encs.first().ok_or(Error::BatchTooSmall(0))?.dim();
        let n_max = encs.iter().map(|e| e.len()).max().unwrap_or(0);
        if n_max == 0 {
            return Err(Error::EmptySequence);
        }
        let mut states = vec![0f32; b * n_max * d];
        let mut mask = vec![0f32; b * n_max];
        let mut sentence = Vec::with_capacity(b * d);
        for (i, e) in encs.iter().enumerate() {
            if e.dim() != d {
                return Err(Error::shape(d, e.dim()));
            }
            let start = i * n_max * d;
            states[start..start + e.per_token.len()].copy_from_slice(&e.per_token);
            mask[i * n_max..i * n_max + e.len()].fill(1.0);
            sentence.extend_from_slice(&e.sentence);
        }
        let dev = Device::Cpu;
        Ok(Self {
            per_token: Tensor::from_vec(states, (b, n_max, d), &dev)?.to_dtype(dtype)?,
            mask: Tensor::from_vec(mask, (b, n_max), &dev)?.to_dtype(dtype)?,
            sentence: Tensor::from_vec(sentence, (b, d), &dev)?.to_dtype(dtype)?,
        })
    }
}

/// Real images with their matching captions, the roll-by-one mismatching
/// captions, and the half-roll relevant captions.
#[derive(Clone, Debug)]
pub struct BatchTriple {
    pub images: Tensor,
    pub matching: CaptionBatch,
    pub mismatching: CaptionBatch,
    pub relevant: CaptionBatch,
}

impl BatchTriple {
    pub fn assemble(images: &[&Image], captions: &[&CaptionEncoding], dtype: DType) -> Result<Self> {
        if images.len() != captions.len() {
            return Err(Error::shape(images.len(), captions.len()));
        }
        let mismatching = make_mismatching(captions)?;
        let relevant = make_relevant(captions)?;
        Ok(Self {
            images: Image::batch_tensor(images, dtype)?,
            matching: CaptionBatch::from_encodings(captions, dtype)?,
            mismatching: CaptionBatch::from_encodings(&mismatching, dtype)?,
            relevant: CaptionBatch::from_encodings(&relevant, dtype)?,
        })
    }
}
