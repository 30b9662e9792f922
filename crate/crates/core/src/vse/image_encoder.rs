use candle_core::{Module, Tensor};
use candle_nn::{Conv2d, Linear};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::nn::leaky_relu;
use crate::params::ParamStore;

/// Three stride-2 convolution blocks, global average pooling, and one
/// affine map into the shared latent space.
pub struct ImageEncoder {
    convs: Vec<Conv2d>,
    proj: Linear,
    size: usize,
}

impl ImageEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        size: usize,
        channels: usize,
        latent: usize,
    ) -> Result<Self> {
        let widths = [3, channels, channels * 2, channels * 4];
        let convs = (0..3)
            .map(|i| store.conv2d(&format!("{name}.conv{i}"), widths[i], widths[i + 1], 4, 2, 1))
            .collect::<Result<Vec<_>>>()?;
        let proj = store.linear(&format!("{name}.proj"), widths[3], latent)?;
        Ok(Self { convs, proj, size })
    }

    /// `(B, 3, H, W)` images to `(B, latent)` embeddings.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = images.dims4()?;
        if c != 3 || h != self.size || w != self.size {
            return Err(Error::shape((3, self.size, self.size), (c, h, w)));
        }
        let mut x = images.clone();
        for conv in &self.convs {
            x = leaky_relu(&conv.forward(&x)?)?;
        }
        let pooled = x.mean((2, 3))?;
        Ok(self.proj.forward(&pooled)?)
    }

    /// Embedding of a single image, `(latent,)`.
    pub fn encode_image(&self, image: &Image, dtype: candle_core::DType) -> Result<Tensor> {
        let t = Image::batch_tensor(&[image], dtype)?;
        Ok(self.forward(&t)?.squeeze(0)?)
    }
}
