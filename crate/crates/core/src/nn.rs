//! Layers shared by the text encoder, generator and discriminator.

use candle_core::{DType, Device, Module, Shape, Tensor, D};
use candle_nn::{Conv2d, Linear};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Additive penalty applied to masked-out attention scores.
const MASK_PENALTY: f64 = 1e9;

pub fn leaky_relu(xs: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(xs, LEAKY_SLOPE)?)
}

pub fn sigmoid(xs: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(xs)?)
}

/// Draw a standard-normal tensor from a host rng.
pub fn normal_tensor<S: Into<Shape>, R: Rng + ?Sized>(
    rng: &mut R,
    shape: S,
    dtype: DType,
) -> Result<Tensor> {
    let shape = shape.into();
    let values: Vec<f64> = (0..shape.elem_count())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Ok(Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

/// Softmax over the last axis restricted to positions where `mask` is 1.
pub fn masked_softmax(scores: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let penalty = ((mask - 1.0)? * MASK_PENALTY)?;
    Ok(candle_nn::ops::softmax(&(scores + penalty)?, D::Minus1)?)
}

/// `weights (B, n)` against `states (B, n, d)` gives `(B, d)`.
pub fn weighted_sum(weights: &Tensor, states: &Tensor) -> Result<Tensor> {
    Ok(weights.unsqueeze(1)?.matmul(states)?.squeeze(1)?)
}

/// Gate activations of one GRU update, exposed for inspection.
pub struct GruGates {
    pub reset: Tensor,
    pub update: Tensor,
    pub candidate: Tensor,
    pub next: Tensor,
}

/// Gated recurrent unit cell.
///
/// `next = (1 - u) * h + u * n`, so an update gate of 0 carries the previous
/// state through unchanged and a gate of 1 replaces it with the candidate.
pub struct GruCell {
    input_map: Linear,
    hidden_map: Linear,
    hidden: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            input_map: store.linear(&format!("{name}.input"), input, 3 * hidden)?,
            hidden_map: store.linear(&format!("{name}.hidden"), hidden, 3 * hidden)?,
            hidden,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn gates(&self, x: &Tensor, h: &Tensor) -> Result<GruGates> {
        if h.dim(D::Minus1)? != self.hidden {
            return Err(Error::shape(self.hidden, h.dims()));
        }
        let hs = self.hidden;
        let gi = self.input_map.forward(x)?;
        let gh = self.hidden_map.forward(h)?;
        let reset = sigmoid(&(gi.narrow(D::Minus1, 0, hs)? + gh.narrow(D::Minus1, 0, hs)?)?)?;
        let update = sigmoid(&(gi.narrow(D::Minus1, hs, hs)? + gh.narrow(D::Minus1, hs, hs)?)?)?;
        let candidate = (gi.narrow(D::Minus1, 2 * hs, hs)?
            + (&reset * gh.narrow(D::Minus1, 2 * hs, hs)?)?)?
            .tanh()?;
        let next = (h + (&update * (&candidate - h)?)?)?;
        Ok(GruGates {
            reset,
            update,
            candidate,
            next,
        })
    }

    pub fn forward(&self, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        Ok(self.gates(x, h)?.next)
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Activation {
    Relu,
    Leaky,
}

impl Activation {
    pub fn apply(self, xs: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Relu => Ok(xs.relu()?),
            Activation::Leaky => leaky_relu(xs),
        }
    }
}

/// Two 3x3 convolutions with an identity skip.
pub struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    act: Activation,
}

impl ResBlock {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, act: Activation) -> Result<Self> {
        Ok(Self {
            conv1: store.conv2d(&format!("{name}.conv1"), channels, channels, 3, 1, 1)?,
            conv2: store.conv2d(&format!("{name}.conv2"), channels, channels, 3, 1, 1)?,
            act,
        })
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let branch = self.act.apply(&self.conv1.forward(xs)?)?;
        let branch = self.conv2.forward(&branch)?;
        self.act.apply(&(xs + branch)?)
    }
}
