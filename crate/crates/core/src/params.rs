//! Named, ordered parameter storage shared by every model.
//!
//! Initial values are drawn from a seeded ChaCha stream in `f64` and then
//! cast to the store's dtype, so an `f32` and an `f64` store built from the
//! same seed hold the same parameters up to rounding.

use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Device, Shape, Tensor, Var};
use candle_nn::{Conv2d, Conv2dConfig, ConvTranspose2d, ConvTranspose2dConfig, Linear};
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::seed::SeededRng;

pub struct ParamStore {
    dtype: DType,
    device: Device,
    vars: BTreeMap<String, Var>,
    rng: SeededRng,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            vars: BTreeMap::new(),
            rng: SeededRng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: &str, values: Vec<f64>, shape: Shape) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let tensor = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(tensor)
    }

    pub fn uniform<S: Into<Shape>>(&mut self, name: &str, shape: S, bound: f64) -> Result<Tensor> {
        let shape = shape.into();
        let values = (0..shape.elem_count())
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, values, shape)
    }

    pub fn zeros<S: Into<Shape>>(&mut self, name: &str, shape: S) -> Result<Tensor> {
        let shape = shape.into();
        self.insert(name, vec![0.0; shape.elem_count()], shape)
    }

    /// Affine map `in_dim -> out_dim` with weight `(out, in)` and bias `(out,)`.
    pub fn linear(&mut self, name: &str, in_dim: usize, out_dim: usize) -> Result<Linear> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = self.uniform(&format!("{name}.weight"), (out_dim, in_dim), bound)?;
        let b = self.zeros(&format!("{name}.bias"), out_dim)?;
        Ok(Linear::new(w, Some(b)))
    }

    /// Convolutions use He-uniform weights and zero biases.
    pub fn conv2d(
        &mut self,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Conv2d> {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let w = self.uniform(&format!("{name}.weight"), (out_ch, in_ch, kernel, kernel), (6.0 / fan_in).sqrt())?;
        let b = self.zeros(&format!("{name}.bias"), out_ch)?;
        let cfg = Conv2dConfig {
            padding,
            stride,
            ..Default::default()
        };
        Ok(Conv2d::new(w, Some(b), cfg))
    }

    pub fn conv_transpose2d(
        &mut self,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<ConvTranspose2d> {
        // Each output pixel sees in_ch * (kernel / stride)^2 taps.
        let fan_in = (in_ch * kernel * kernel) as f64 / (stride * stride) as f64;
        let w = self.uniform(&format!("{name}.weight"), (in_ch, out_ch, kernel, kernel), (6.0 / fan_in).sqrt())?;
        let b = self.zeros(&format!("{name}.bias"), out_ch)?;
        let cfg = ConvTranspose2dConfig {
            padding,
            stride,
            ..Default::default()
        };
        Ok(ConvTranspose2d::new(w, Some(b), cfg))
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect()
    }

    /// Host copy of every parameter under `prefix`, for before/after comparisons.
    pub fn snapshot(&self, prefix: &str) -> Result<BTreeMap<String, Vec<f64>>> {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| {
                let host = v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
                Ok((k.clone(), host))
            })
            .collect()
    }

    pub fn assign(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        if var.shape() != value.shape() {
            return Err(Error::shape(var.shape(), value.shape()));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Overwrite every parameter from `tensors`; all names must be present
    /// with matching shapes.
    pub fn load_tensors(&self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        for name in self.vars.keys() {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
            self.assign(name, t)?;
        }
        Ok(())
    }

    pub fn fill_zero(&self, prefix: &str) -> Result<()> {
        for (name, var) in &self.vars {
            if name.starts_with(prefix) {
                var.set(&var.as_tensor().zeros_like()?)?;
            }
        }
        Ok(())
    }
}
