//! Text-conditioned discriminator: strided downsampling to 4x4, a residual
//! feature branch, fusion with the spatially replicated sentence vector, and
//! a sigmoid relevance probability.

use candle_core::{Module, Tensor};
use candle_nn::Conv2d;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{leaky_relu, sigmoid, Activation, ResBlock};
use crate::params::ParamStore;

pub const DISCRIMINATOR_PREFIX: &str = "discriminator.";

/// Spatial side of the feature map the text is fused into.
pub const FUSE_SIZE: usize = 4;

/// Stored probabilities are kept inside `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Channels after the first downsampling block; doubled per block.
    pub channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { channels: 16 }
    }
}

#[derive(Clone, Debug)]
pub struct DiscriminatorOutput {
    /// `(B,)`
    pub logit: Tensor,
    /// `(B,)` sigmoid of the logit, clamped away from 0 and 1.
    pub probability: Tensor,
    /// `(B, C, 4, 4)` fused image/text features.
    pub features: Tensor,
}

/// Copy `h_f (B, d)` to every location of an `(h, w)` grid: `(B, d, h, w)`.
pub fn replicate_text(h_f: &Tensor, spatial: (usize, usize)) -> Result<Tensor> {
    let (b, d) = h_f.dims2()?;
    Ok(h_f
        .reshape((b, d, 1, 1))?
        .broadcast_as((b, d, spatial.0, spatial.1))?
        .contiguous()?)
}

pub struct Discriminator {
    downs: Vec<Conv2d>,
    res: ResBlock,
    fuse: Conv2d,
    out: Conv2d,
    size: usize,
    text_dim: usize,
}

impl Discriminator {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &DiscriminatorConfig,
        size: usize,
        text_dim: usize,
    ) -> Result<Self> {
        if size < FUSE_SIZE || size % FUSE_SIZE != 0 || !(size / FUSE_SIZE).is_power_of_two() {
            return Err(Error::Config(format!(
                "discriminator input size {size} must be {FUSE_SIZE} times a power of two"
            )));
        }
        let stages = (size / FUSE_SIZE).trailing_zeros() as usize;
        let mut width = 3;
        let mut downs = Vec::with_capacity(stages);
        for i in 0..stages {
            let next = cfg.channels << i;
            downs.push(store.conv2d(&format!("{name}.down{i}"), width, next, 4, 2, 1)?);
            width = next;
        }
        let res = ResBlock::new(store, &format!("{name}.res"), width, Activation::Leaky)?;
        let fuse = store.conv2d(&format!("{name}.fuse"), width + text_dim, width, 1, 1, 0)?;
        let out = store.conv2d(&format!("{name}.out"), width, 1, 3, 1, 1)?;
        Ok(Self {
            downs,
            res,
            fuse,
            out,
            size,
            text_dim,
        })
    }

    pub fn forward(&self, images: &Tensor, h_f: &Tensor) -> Result<DiscriminatorOutput> {
        let (b, c, h, w) = images.dims4()?;
        if c != 3 || h != self.size || w != self.size {
            return Err(Error::shape((3, self.size, self.size), (c, h, w)));
        }
        if h_f.dims2()? != (b, self.text_dim) {
            return Err(Error::shape((b, self.text_dim), h_f.dims()));
        }
        let mut x = images.clone();
        for conv in &self.downs {
            x = leaky_relu(&conv.forward(&x)?)?;
        }
        let x = self.res.forward(&x)?;
        let (_, _, fh, fw) = x.dims4()?;
        let text = replicate_text(h_f, (fh, fw))?;
        let features = leaky_relu(&self.fuse.forward(&Tensor::cat(&[&x, &text], 1)?)?)?;
        let logit = self.out.forward(&features)?.mean((1, 2, 3))?;
        let probability = sigmoid(&logit)?.clamp(PROB_EPS, 1.0 - PROB_EPS)?;
        Ok(DiscriminatorOutput {
            logit,
            probability,
            features,
        })
    }
}
