//! Recurrent canvas painter.
//!
//! The caption's sentence vector is turned into a sampled condition `c`;
//! together with noise `z` it sets the initial recurrent state. Each of the
//! `t` timesteps attends over the caption's word states, advances a GRU,
//! emits an RGB patch through the upscaling network, and adds it to the
//! canvas scaled by a scalar gate:
//!
//! ```text
//! canvas_0 = 0
//! canvas_i = canvas_{i-1} + gamma_i * delta_i
//! ```
//!
//! The returned image is `canvas_t` clamped to `[-1, 1]`.

use candle_core::{DType, Module, Tensor, D};
use candle_nn::{Conv2d, ConvTranspose2d, Linear};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{masked_softmax, normal_tensor, sigmoid, weighted_sum, Activation, GruCell, ResBlock};
use crate::params::ParamStore;
use crate::seed::SeededRng;

pub const GENERATOR_PREFIX: &str = "generator.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub timesteps: usize,
    pub noise_dim: usize,
    pub cond_dim: usize,
    pub hidden: usize,
    /// Side of the square planes the channel heads emit.
    pub patch: usize,
    /// Feature channels inside the upscaler.
    pub channels: usize,
    /// Output side length; must be `patch * 2^k`.
    pub size: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            timesteps: 4,
            noise_dim: 100,
            cond_dim: 128,
            hidden: 256,
            patch: 16,
            channels: 16,
            size: 32,
        }
    }
}

impl GeneratorConfig {
    /// Number of stride-2 upscaling stages from patch to output size.
    pub fn upscale_stages(&self) -> Result<usize> {
        if self.patch == 0 || self.size % self.patch != 0 || !(self.size / self.patch).is_power_of_two() {
            return Err(Error::Config(format!(
                "output size {} must be patch size {} times a power of two",
                self.size, self.patch
            )));
        }
        Ok((self.size / self.patch).trailing_zeros() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 {
            return Err(Error::Config("generator needs at least one timestep".into()));
        }
        if [self.noise_dim, self.cond_dim, self.hidden, self.channels].contains(&0) {
            return Err(Error::Config("generator dimensions must be positive".into()));
        }
        self.upscale_stages().map(|_| ())
    }
}

/// Sampled condition vector and its KL penalty against `N(0, I)`.
#[derive(Clone, Debug)]
pub struct AugmentedCondition {
    pub mu: Tensor,
    pub log_sigma: Tensor,
    pub sample: Tensor,
    /// `(B,)`: `0.5 * sum(mu^2 + exp(2 log_sigma) - 2 log_sigma - 1)`.
    pub kl: Tensor,
}

/// One timestep of the painting process, batched.
#[derive(Clone, Debug)]
pub struct TraceStep {
    /// `(B, n)` attention over caption tokens.
    pub beta: Tensor,
    /// `(B, 1)` canvas gate.
    pub gamma: Tensor,
    /// `(B, 3, H, W)` patch.
    pub delta: Tensor,
    /// `(B, hidden)` recurrent state after the step.
    pub hidden: Tensor,
}

#[derive(Clone, Debug)]
pub struct PaintOutput {
    /// Final canvas clamped to `[-1, 1]`.
    pub image: Tensor,
    /// Final canvas before the clamp.
    pub canvas: Tensor,
    pub condition: AugmentedCondition,
    pub trace: Vec<TraceStep>,
}

/// Per-step attention record for one image, as exported to JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub timestep: usize,
    pub beta: Vec<f64>,
    pub gamma: f64,
    pub token_strings: Vec<String>,
}

impl PaintOutput {
    /// Trace of batch row `row`, attention restricted to its `tokens`.
    pub fn records(&self, row: usize, tokens: &[String]) -> Result<Vec<TraceRecord>> {
        self.trace
            .iter()
            .enumerate()
            .map(|(i, step)| {
                let beta: Vec<f64> = step.beta.get(row)?.to_dtype(DType::F64)?.to_vec1()?;
                let gamma: Vec<f64> = step.gamma.get(row)?.to_dtype(DType::F64)?.to_vec1()?;
                Ok(TraceRecord {
                    timestep: i + 1,
                    beta: beta[..tokens.len().min(beta.len())].to_vec(),
                    gamma: gamma[0],
                    token_strings: tokens.to_vec(),
                })
            })
            .collect()
    }
}

/// Softmax the raw scores over real tokens and pool the word states:
/// `beta = softmax(scores)`, `e_bar = sum_j beta_j e_j`.
pub fn softmax_pool(scores: &Tensor, states: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
    if scores.dim(D::Minus1)? == 0 {
        return Err(Error::EmptySequence);
    }
    let beta = masked_softmax(scores, mask)?;
    let e_bar = weighted_sum(&beta, states)?;
    Ok((beta, e_bar))
}

/// Stem conv and residual block at patch resolution, then stride-2
/// transposed convs with a residual block at every intermediate
/// resolution. The last transposed conv emits RGB directly and is added to
/// the nearest-upsampled channel planes, so each head steers its color
/// channel without passing through the whole stack.
struct Upscaler {
    stem: Conv2d,
    stem_res: ResBlock,
    ups: Vec<ConvTranspose2d>,
    mids: Vec<ResBlock>,
    /// Only used when patch and image sizes coincide.
    out: Option<Conv2d>,
}

impl Upscaler {
    fn new(store: &mut ParamStore, name: &str, channels: usize, stages: usize) -> Result<Self> {
        let stem = store.conv2d(&format!("{name}.stem"), 3, channels, 3, 1, 1)?;
        let stem_res = ResBlock::new(store, &format!("{name}.stem_res"), channels, Activation::Relu)?;
        let ups = (0..stages)
            .map(|i| {
                let out_ch = if i + 1 == stages { 3 } else { channels };
                store.conv_transpose2d(&format!("{name}.up{i}"), channels, out_ch, 4, 2, 1)
            })
            .collect::<Result<Vec<_>>>()?;
        let mids = (0..stages.saturating_sub(1))
            .map(|i| ResBlock::new(store, &format!("{name}.res{i}"), channels, Activation::Relu))
            .collect::<Result<Vec<_>>>()?;
        let out = match stages {
            0 => Some(store.conv2d(&format!("{name}.out"), channels, 3, 3, 1, 1)?),
            _ => None,
        };
        Ok(Self {
            stem,
            stem_res,
            ups,
            mids,
            out,
        })
    }

    fn forward(&self, planes: &Tensor) -> Result<Tensor> {
        let mut x = self.stem_res.forward(&self.stem.forward(planes)?.relu()?)?;
        if let Some(out) = &self.out {
            return Ok(out.forward(&x)?.tanh()?);
        }
        for (i, up) in self.ups.iter().enumerate() {
            x = up.forward(&x)?;
            if let Some(res) = self.mids.get(i) {
                x = res.forward(&x.relu()?)?;
            }
        }
        let (h, w) = x.dims4().map(|(_, _, h, w)| (h, w))?;
        Ok((x + planes.upsample_nearest2d(h, w)?)?.tanh()?)
    }
}

pub struct Generator {
    cfg: GeneratorConfig,
    text_dim: usize,
    ca_mu: Linear,
    ca_log_sigma: Linear,
    init: GruCell,
    attn_query: Linear,
    cell: GruCell,
    head_r: Linear,
    head_g: Linear,
    head_b: Linear,
    head_gamma: Linear,
    upscaler: Upscaler,
}

impl Generator {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &GeneratorConfig, text_dim: usize) -> Result<Self> {
        cfg.validate()?;
        let cz = cfg.cond_dim + cfg.noise_dim;
        let plane = cfg.patch * cfg.patch;
        let g = Self {
            ca_mu: store.linear(&format!("{name}.ca_mu"), text_dim, cfg.cond_dim)?,
            ca_log_sigma: store.linear(&format!("{name}.ca_log_sigma"), text_dim, cfg.cond_dim)?,
            init: GruCell::new(store, &format!("{name}.init"), cz, cfg.hidden)?,
            attn_query: store.linear(&format!("{name}.attn"), cz + cfg.hidden, text_dim)?,
            cell: GruCell::new(store, &format!("{name}.cell"), text_dim, cfg.hidden)?,
            head_r: store.linear(&format!("{name}.head_r"), cfg.hidden, plane)?,
            head_g: store.linear(&format!("{name}.head_g"), cfg.hidden, plane)?,
            head_b: store.linear(&format!("{name}.head_b"), cfg.hidden, plane)?,
            head_gamma: store.linear(&format!("{name}.head_gamma"), cfg.hidden, 1)?,
            upscaler: Upscaler::new(store, &format!("{name}.up"), cfg.channels, cfg.upscale_stages()?)?,
            cfg: cfg.clone(),
            text_dim,
        };
        // The condition starts at the prior, with zero KL.
        store.fill_zero(&format!("{name}.ca_"))?;
        Ok(g)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn text_dim(&self) -> usize {
        self.text_dim
    }

    /// `s (B, text_dim)` and `eps (B, cond_dim)` to a sampled condition.
    pub fn condition_augment(&self, s: &Tensor, eps: &Tensor) -> Result<AugmentedCondition> {
        let mu = self.ca_mu.forward(s)?;
        let log_sigma = self.ca_log_sigma.forward(s)?;
        if eps.dims() != mu.dims() {
            return Err(Error::shape(mu.dims(), eps.dims()));
        }
        let sample = (&mu + (log_sigma.exp()? * eps)?)?;
        let kl = kl_to_standard_normal(&mu, &log_sigma)?;
        Ok(AugmentedCondition {
            mu,
            log_sigma,
            sample,
            kl,
        })
    }

    /// `h_0` from a GRU step over `[c; z]` starting at the zero state.
    pub fn init_hidden(&self, c: &Tensor, z: &Tensor) -> Result<Tensor> {
        let (b, dc) = c.dims2()?;
        let (bz, dz) = z.dims2()?;
        if b != bz || dc != self.cfg.cond_dim || dz != self.cfg.noise_dim {
            return Err(Error::shape((b, self.cfg.cond_dim, self.cfg.noise_dim), (bz, dc, dz)));
        }
        let zero = Tensor::zeros((b, self.cfg.hidden), c.dtype(), c.device())?;
        self.init.forward(&Tensor::cat(&[c, z], 1)?, &zero)
    }

    /// Raw attention scores: an affine map of `[c; z; h_prev]` into the word
    /// space, dotted with every word state.
    pub fn attention_scores(&self, c: &Tensor, z: &Tensor, h_prev: &Tensor, e: &Tensor) -> Result<Tensor> {
        let query = self.attn_query.forward(&Tensor::cat(&[c, z, h_prev], 1)?)?;
        Ok(e.matmul(&query.unsqueeze(2)?)?.squeeze(2)?)
    }

    /// `(beta (B, n), e_bar (B, text_dim))`.
    pub fn attend(&self, c: &Tensor, z: &Tensor, h_prev: &Tensor, e: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
        if e.dim(1)? == 0 {
            return Err(Error::EmptySequence);
        }
        let scores = self.attention_scores(c, z, h_prev, e)?;
        softmax_pool(&scores, e, mask)
    }

    pub fn step(&self, h_prev: &Tensor, e_bar: &Tensor) -> Result<Tensor> {
        if e_bar.dim(D::Minus1)? != self.text_dim {
            return Err(Error::shape(self.text_dim, e_bar.dims()));
        }
        self.cell.forward(e_bar, h_prev)
    }

    /// Channel planes `(B, 3, patch, patch)` before upscaling.
    pub fn channel_planes(&self, h: &Tensor) -> Result<Tensor> {
        let b = h.dim(0)?;
        let p = self.cfg.patch;
        let plane = |head: &Linear| -> Result<Tensor> { Ok(head.forward(h)?.relu()?.reshape((b, 1, p, p))?) };
        Ok(Tensor::cat(&[plane(&self.head_r)?, plane(&self.head_g)?, plane(&self.head_b)?], 1)?)
    }

    pub fn gamma(&self, h: &Tensor) -> Result<Tensor> {
        sigmoid(&self.head_gamma.forward(h)?)
    }

    /// `(delta (B, 3, H, W) in [-1, 1], gamma (B, 1) in (0, 1))`.
    pub fn emit_patch(&self, h: &Tensor) -> Result<(Tensor, Tensor)> {
        let delta = self.upscaler.forward(&self.channel_planes(h)?)?;
        Ok((delta, self.gamma(h)?))
    }

    /// Full unroll with explicit condition noise `eps`.
    pub fn paint_with_eps(&self, e: &Tensor, mask: &Tensor, s: &Tensor, z: &Tensor, eps: &Tensor) -> Result<PaintOutput> {
        let condition = self.condition_augment(s, eps)?;
        let c = &condition.sample;
        let mut h = self.init_hidden(c, z)?;
        let b = h.dim(0)?;
        let mut canvas = Tensor::zeros((b, 3, self.cfg.size, self.cfg.size), h.dtype(), h.device())?;
        let mut trace = Vec::with_capacity(self.cfg.timesteps);
        for _ in 0..self.cfg.timesteps {
            let (beta, e_bar) = self.attend(c, z, &h, e, mask)?;
            h = self.step(&h, &e_bar)?;
            let (delta, gamma) = self.emit_patch(&h)?;
            canvas = (canvas + delta.broadcast_mul(&gamma.reshape((b, 1, 1, 1))?)?)?;
            trace.push(TraceStep {
                beta,
                gamma,
                delta,
                hidden: h.clone(),
            });
        }
        Ok(PaintOutput {
            image: canvas.clamp(-1.0, 1.0)?,
            canvas,
            condition,
            trace,
        })
    }

    /// Full unroll; condition noise is drawn from `rng`.
    pub fn paint(&self, e: &Tensor, mask: &Tensor, s: &Tensor, z: &Tensor, rng: &mut SeededRng) -> Result<PaintOutput> {
        let eps = normal_tensor(rng, (s.dim(0)?, self.cfg.cond_dim), s.dtype())?;
        self.paint_with_eps(e, mask, s, z, &eps)
    }

    /// Noise `(B, noise_dim)` from the standard normal.
    pub fn sample_noise(&self, batch: usize, dtype: DType, rng: &mut SeededRng) -> Result<Tensor> {
        normal_tensor(rng, (batch, self.cfg.noise_dim), dtype)
    }
}

/// `0.5 * sum_k(mu^2 + exp(2 log_sigma) - 2 log_sigma - 1)` per row.
pub fn kl_to_standard_normal(mu: &Tensor, log_sigma: &Tensor) -> Result<Tensor> {
    let two_ls = (log_sigma * 2.0)?;
    let terms = ((mu.sqr()? + two_ls.exp()?)? - two_ls)? - 1.0;
    Ok((terms?.sum(D::Minus1)? * 0.5)?)
}
