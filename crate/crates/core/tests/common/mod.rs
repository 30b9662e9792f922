#![allow(dead_code)]

use candle_core::{DType, Device, Tensor};
use patchcanvas_core::generator::Generator;
use patchcanvas_core::nn::normal_tensor;
use patchcanvas_core::{rng_for, GeneratorConfig, ParamStore};

pub fn host(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap()
}

pub fn t64(v: &[f64], shape: &[usize]) -> Tensor {
    Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
}

pub fn randn(seed: u64, label: &str, shape: &[usize]) -> Tensor {
    normal_tensor(&mut rng_for(seed, label), shape, DType::F64).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn small_generator_config() -> GeneratorConfig {
    GeneratorConfig {
        timesteps: 2,
        noise_dim: 3,
        cond_dim: 3,
        hidden: 4,
        patch: 4,
        channels: 2,
        size: 8,
    }
}

/// Generator in its own float64 store.
pub fn generator(seed: u64, cfg: &GeneratorConfig, text_dim: usize) -> (ParamStore, Generator) {
    let mut store = ParamStore::new(DType::F64, seed);
    let g = Generator::new(&mut store, "generator", cfg, text_dim).unwrap();
    (store, g)
}

/// Overwrite a parameter with random normal values.
pub fn randomize(store: &ParamStore, name: &str, scale: f64, seed: u64) {
    let shape = store.var(name).unwrap().shape().clone();
    let v = (randn(seed, name, shape.dims()) * scale).unwrap();
    store.assign(name, &v).unwrap();
}

pub fn set_param(store: &ParamStore, name: &str, values: Vec<f64>) {
    let shape = store.var(name).unwrap().shape().clone();
    store.assign(name, &Tensor::from_vec(values, shape, &Device::Cpu).unwrap()).unwrap();
}

/// Central finite difference of `loss` with respect to element `idx` of
/// parameter `name`, which is restored afterwards.
pub fn numeric_grad(store: &ParamStore, name: &str, idx: usize, eps: f64, loss: &dyn Fn() -> f64) -> f64 {
    let orig = host(store.var(name).unwrap().as_tensor());
    let mut v = orig.clone();
    v[idx] = orig[idx] + eps;
    set_param(store, name, v.clone());
    let plus = loss();
    v[idx] = orig[idx] - eps;
    set_param(store, name, v);
    let minus = loss();
    set_param(store, name, orig);
    (plus - minus) / (2.0 * eps)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
