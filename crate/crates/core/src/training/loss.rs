use candle_core::{DType, Tensor};

use crate::discriminator::{Discriminator, PROB_EPS};
use crate::error::{Error, Result};
use crate::training::batch::BatchTriple;

/// Batch-mean binary cross-entropy of probabilities `p` against a constant
/// `target`, with `p` clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub fn bce(p: &Tensor, target: f64) -> Result<Tensor> {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS)?;
    let pos = (p.log()? * target)?;
    let neg = ((1.0 - &p)?.log()? * (1.0 - target))?;
    Ok((pos + neg)?.neg()?.mean_all()?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[derive(Clone, Debug)]
pub struct DiscriminatorLoss {
    pub total: Tensor,
    /// Real image, matching caption, label 1.
    pub matching: Tensor,
    /// Real image, mismatching caption, label 0.
    pub mismatching: Tensor,
    /// Generated image from the relevant caption, label 0.
    pub relevant: Tensor,
}

/// Combine the three discriminator probabilities into the summed BCE loss.
pub fn discriminator_loss_from_probs(
    p_match: &Tensor,
    p_mismatch: &Tensor,
    p_relevant: &Tensor,
) -> Result<DiscriminatorLoss> {
    let matching = bce(p_match, 1.0)?;
    let mismatching = bce(p_mismatch, 0.0)?;
    let relevant = bce(p_relevant, 0.0)?;
    let total = ((&matching + &mismatching)? + &relevant)?;
    Ok(DiscriminatorLoss {
        total,
        matching,
        mismatching,
        relevant,
    })
}

/// Run the discriminator on the three roles of `triple`. `generated_rel`
/// must already be detached from the generator.
pub fn discriminator_loss(
    d: &Discriminator,
    triple: &BatchTriple,
    generated_rel: &Tensor,
) -> Result<DiscriminatorLoss> {
    let p_match = d.forward(&triple.images, &triple.matching.sentence)?.probability;
    let p_mismatch = d.forward(&triple.images, &triple.mismatching.sentence)?.probability;
    let p_relevant = d.forward(generated_rel, &triple.relevant.sentence)?.probability;
    discriminator_loss_from_probs(&p_match, &p_mismatch, &p_relevant)
}

/// Non-saturating generator objective plus the weighted mean KL penalty.
pub fn generator_loss_from_probs(p_fake: &Tensor, kl: &Tensor, kl_weight: f64) -> Result<Tensor> {
    Ok((bce(p_fake, 1.0)? + (kl.mean_all()? * kl_weight)?)?)
}

pub fn generator_loss(
    d: &Discriminator,
    generated_match: &Tensor,
    matching_sentence: &Tensor,
    kl: &Tensor,
    kl_weight: f64,
) -> Result<Tensor> {
    let p = d.forward(generated_match, matching_sentence)?.probability;
    generator_loss_from_probs(&p, kl, kl_weight)
}

pub(crate) fn ensure_finite(step: usize, name: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss {
            step,
            detail: format!("{name} = {value}"),
        })
    }
}
