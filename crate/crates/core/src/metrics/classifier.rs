//! Small convolutional classifier over synthetic class ids; supplies the
//! class posteriors the inception score is computed from.

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::{AdamW, Conv2d, Linear, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;

use crate::data::{Image, Sample};
use crate::error::{Error, Result};
use crate::nn::leaky_relu;
use crate::params::ParamStore;
use crate::seed::SeededRng;

pub struct DeskClassifier {
    store: ParamStore,
    convs: Vec<Conv2d>,
    head: Linear,
    classes: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierTraining {
    pub max_steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Training stops once accuracy on the training set reaches this.
    pub target_accuracy: f64,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        Self {
            max_steps: 1500,
            batch: 64,
            lr: 2e-3,
            target_accuracy: 0.95,
        }
    }
}

impl DeskClassifier {
    pub fn new(classes: usize, channels: usize, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(DType::F32, seed);
        let widths = [3, channels, channels * 2, channels * 4];
        let convs = (0..3)
            .map(|i| store.conv2d(&format!("classifier.conv{i}"), widths[i], widths[i + 1], 4, 2, 1))
            .collect::<Result<Vec<_>>>()?;
        let head = store.linear("classifier.head", widths[3], classes)?;
        Ok(Self {
            store,
            convs,
            head,
            classes,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn logits(&self, images: &Tensor) -> Result<Tensor> {
        let mut x = images.clone();
        for conv in &self.convs {
            x = leaky_relu(&conv.forward(&x)?)?;
        }
        Ok(self.head.forward(&x.mean((2, 3))?)?)
    }

    /// Row-stochastic class posteriors for a `(B, 3, H, W)` batch.
    pub fn posteriors(&self, images: &Tensor) -> Result<Vec<Vec<f64>>> {
        let logits = self.logits(&images.to_dtype(DType::F32)?)?.detach();
        let p = candle_nn::ops::softmax(&logits.to_dtype(DType::F64)?, 1)?;
        Ok(p.to_vec2()?)
    }

    pub fn accuracy(&self, samples: &[Sample]) -> Result<f64> {
        let mut correct = 0usize;
        for chunk in samples.chunks(256) {
            let imgs: Vec<&Image> = chunk.iter().map(|s| &s.image).collect();
            let post = self.posteriors(&Image::batch_tensor(&imgs, DType::F32)?)?;
            for (s, p) in chunk.iter().zip(post) {
                let pred = argmax(&p);
                if Some(pred) == s.class_id {
                    correct += 1;
                }
            }
        }
        Ok(correct as f64 / samples.len().max(1) as f64)
    }

    /// Train on labelled samples; returns the final training accuracy.
    pub fn train(&mut self, samples: &[Sample], cfg: ClassifierTraining, rng: &mut SeededRng) -> Result<f64> {
        let labelled: Vec<(&Image, u32)> = samples
            .iter()
            .filter_map(|s| s.class_id.map(|c| (&s.image, c as u32)))
            .collect();
        if labelled.len() < 2 {
            return Err(Error::Config("classifier needs labelled (synthetic) samples".into()));
        }
        if let Some(bad) = labelled.iter().find(|(_, c)| *c as usize >= self.classes) {
            return Err(Error::Config(format!("class id {} out of range", bad.1)));
        }
        let params = ParamsAdamW {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(self.store.vars(), params)?;
        let batch = cfg.batch.min(labelled.len());
        let mut order: Vec<usize> = (0..labelled.len()).collect();
        let mut cursor = order.len();
        let mut acc = 0.0;
        for step in 0..cfg.max_steps {
            if cursor + batch > order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            let idx = &order[cursor..cursor + batch];
            cursor += batch;
            let imgs: Vec<&Image> = idx.iter().map(|&i| labelled[i].0).collect();
            let labels: Vec<u32> = idx.iter().map(|&i| labelled[i].1).collect();
            let x = Image::batch_tensor(&imgs, DType::F32)?;
            let y = Tensor::from_vec(labels, batch, &Device::Cpu)?;
            let loss = candle_nn::loss::cross_entropy(&self.logits(&x)?, &y)?;
            opt.backward_step(&loss)?;
            if (step + 1) % 100 == 0 {
                acc = self.accuracy(samples)?;
                log::info!("classifier step {}: train accuracy {acc:.3}", step + 1);
                if acc >= cfg.target_accuracy {
                    return Ok(acc);
                }
            }
        }
        if cfg.max_steps % 100 != 0 {
            acc = self.accuracy(samples)?;
        }
        Ok(acc)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
