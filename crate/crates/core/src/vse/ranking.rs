use candle_core::{Tensor, D};

use crate::error::{Error, Result};

/// Row-normalize so every row has unit length (zero rows stay zero).
fn unit_rows(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(D::Minus1)? + 1e-12)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

/// `S[i, j] = cos(a_i, b_j)` for `(B, d)` inputs.
pub fn cosine_similarity_matrix(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(unit_rows(a)?.matmul(&unit_rows(b)?.t()?)?)
}

/// Bidirectional max-margin ranking loss over cosine similarities.
///
/// Row `i` of both matrices is a matching pair. With `S[i, j] =
/// cos(image_i, sentence_j)`:
///
/// - caption direction: `max(0, margin - S[j, j] + S[i, j])` for every
///   caption `j` and contrastive image `i != j`;
/// - image direction: `max(0, margin - S[i, i] + S[i, j])` for every image
///   `i` and contrastive caption `j != i`.
///
/// Each direction is averaged over its `B(B-1)` terms and the result is the
/// mean of the two directions, so `0 <= loss <= margin + 2`.
pub fn ranking_loss(image_embs: &Tensor, sent_embs: &Tensor, margin: f64) -> Result<Tensor> {
    let (b, d) = image_embs.dims2()?;
    if sent_embs.dims2()? != (b, d) {
        return Err(Error::shape((b, d), sent_embs.dims()));
    }
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    let sim = cosine_similarity_matrix(image_embs, sent_embs)?;
    let eye = Tensor::eye(b, sim.dtype(), sim.device())?;
    let diag = (&sim * &eye)?.sum_keepdim(1)?; // (B, 1): S[i, i]
    let off = (1.0 - eye)?;

    // Column j holds caption j; its own score is S[j, j] = diag^T.
    let caption_cost = ((sim.broadcast_sub(&diag.t()?)? + margin)?.relu()? * &off)?;
    let image_cost = ((sim.broadcast_sub(&diag)? + margin)?.relu()? * &off)?;
    let pairs = (b * (b - 1)) as f64;
    let total = ((caption_cost.sum_all()? + image_cost.sum_all()?)? / (2.0 * pairs))?;
    Ok(total)
}
