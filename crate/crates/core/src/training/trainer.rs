use std::fs::File;
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;

use crate::config::RunConfig;
use crate::data::{Image, Sample};
use crate::discriminator::DISCRIMINATOR_PREFIX;
use crate::error::{Error, Result};
use crate::generator::GENERATOR_PREFIX;
use crate::model::CanvasModel;
use crate::seed::SeededRng;
use crate::training::batch::{encode_captions, BatchTriple, CaptionBatch, CaptionEncoding};
use crate::training::checkpoint::save_checkpoint;
use crate::training::loss::{discriminator_loss, ensure_finite, generator_loss, scalar};
use crate::training::{LossRecord, TrainConfig};

/// Images paired with their frozen caption encodings.
pub struct TrainingSet {
    pub images: Vec<Image>,
    pub captions: Vec<CaptionEncoding>,
}

impl TrainingSet {
    pub fn new(model: &CanvasModel, samples: &[Sample]) -> Result<Self> {
        let captions: Vec<&str> = samples.iter().map(|s| s.caption.as_str()).collect();
        Ok(Self {
            images: samples.iter().map(|s| s.image.clone()).collect(),
            captions: encode_captions(&model.vse, &captions)?,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn adam(vars: Vec<candle_core::Var>, cfg: &TrainConfig) -> Result<AdamW> {
    let params = ParamsAdamW {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: 1e-8,
        weight_decay: 0.0,
    };
    Ok(AdamW::new(vars, params)?)
}

/// The alternating optimisation loop, one step at a time.
pub struct Trainer<'a> {
    model: &'a CanvasModel,
    set: &'a TrainingSet,
    cfg: TrainConfig,
    d_opt: AdamW,
    g_opt: AdamW,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
    rng: SeededRng,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a CanvasModel, set: &'a TrainingSet, cfg: &TrainConfig, rng: SeededRng) -> Result<Self> {
        if cfg.batch < 2 || set.len() < 2 {
            return Err(Error::BatchTooSmall(cfg.batch.min(set.len())));
        }
        let order: Vec<usize> = (0..set.len()).collect();
        Ok(Self {
            model,
            set,
            d_opt: adam(model.store.vars_with_prefix(DISCRIMINATOR_PREFIX), cfg)?,
            g_opt: adam(model.store.vars_with_prefix(GENERATOR_PREFIX), cfg)?,
            cursor: order.len(),
            order,
            cfg: cfg.clone(),
            step: 0,
            rng,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn next_batch(&mut self) -> Result<BatchTriple> {
        let batch = self.cfg.batch.min(self.set.len());
        if self.cursor + batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let idx = &self.order[self.cursor..self.cursor + batch];
        self.cursor += batch;
        let images: Vec<&Image> = idx.iter().map(|&i| &self.set.images[i]).collect();
        let captions: Vec<&CaptionEncoding> = idx.iter().map(|&i| &self.set.captions[i]).collect();
        BatchTriple::assemble(&images, &captions, self.model.store.dtype())
    }

    fn paint(&mut self, caps: &CaptionBatch) -> Result<crate::generator::PaintOutput> {
        let g = &self.model.generator;
        let b = caps.sentence.dim(0)?;
        let z = g.sample_noise(b, caps.sentence.dtype(), &mut self.rng)?;
        g.paint(&caps.per_token, &caps.mask, &caps.sentence, &z, &mut self.rng)
    }

    /// One discriminator update; the generated images are detached so no
    /// gradient reaches the generator. Returns (match, mismatch, relevant).
    pub fn discriminator_step(&mut self, triple: &BatchTriple) -> Result<(f64, f64, f64)> {
        let step = self.step + 1;
        let generated: Tensor = self.paint(&triple.relevant)?.image.detach();
        let loss = discriminator_loss(&self.model.discriminator, triple, &generated)?;
        let parts = (
            ensure_finite(step, "d_match", scalar(&loss.matching)?)?,
            ensure_finite(step, "d_mismatch", scalar(&loss.mismatching)?)?,
            ensure_finite(step, "d_relevant", scalar(&loss.relevant)?)?,
        );
        self.d_opt.backward_step(&loss.total)?;
        Ok(parts)
    }

    /// One generator update against the current discriminator.
    pub fn generator_step(&mut self, triple: &BatchTriple) -> Result<f64> {
        let step = self.step + 1;
        let out = self.paint(&triple.matching)?;
        let loss = generator_loss(
            &self.model.discriminator,
            &out.image,
            &triple.matching.sentence,
            &out.condition.kl,
            self.cfg.kl_weight,
        )?;
        let value = ensure_finite(step, "g_loss", scalar(&loss)?)?;
        self.g_opt.backward_step(&loss)?;
        Ok(value)
    }

    /// Discriminator update, then generator update, on a fresh batch.
    pub fn step(&mut self) -> Result<LossRecord> {
        let triple = self.next_batch()?;
        let (d_match, d_mismatch, d_relevant) = self.discriminator_step(&triple)?;
        let g_loss = self.generator_step(&triple)?;
        self.step += 1;
        Ok(LossRecord {
            step: self.step,
            g_loss,
            d_match,
            d_mismatch,
            d_relevant,
        })
    }
}

const CSV_HEADER: [&str; 5] = ["step", "g_loss", "d_match", "d_mismatch", "d_relevant"];

/// Appends loss records to a CSV file, flushing after each row.
pub struct LossCsvWriter {
    inner: csv::Writer<File>,
}

impl LossCsvWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
        inner.write_record(CSV_HEADER).map_err(csv_err)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn append(&mut self, r: &LossRecord) -> Result<()> {
        self.inner.serialize(r).map_err(csv_err)?;
        self.inner.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut w = LossCsvWriter::create(path)?;
    for r in records {
        w.append(r)?;
    }
    Ok(())
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<LossRecord>().enumerate() {
        out.push(row.map_err(|e| Error::MalformedLine {
            line: i + 2,
            detail: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub records: Vec<LossRecord>,
    pub checkpoints: Vec<PathBuf>,
}

/// Run `config.train.steps` alternating steps. With `out_dir` set, losses
/// stream to `losses.csv` and checkpoints land in `ckpt_<step>/`; a
/// non-finite loss aborts the run and leaves earlier checkpoints in place.
pub fn train(
    model: &CanvasModel,
    set: &TrainingSet,
    config: &RunConfig,
    out_dir: Option<&Path>,
    rng: SeededRng,
) -> Result<TrainOutcome> {
    let cfg = &config.train;
    let mut trainer = Trainer::new(model, set, cfg, rng)?;
    let mut csv = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(LossCsvWriter::create(&dir.join("losses.csv"))?)
        }
        None => None,
    };
    let mut outcome = TrainOutcome {
        records: Vec::with_capacity(cfg.steps),
        checkpoints: Vec::new(),
    };
    for _ in 0..cfg.steps {
        let record = trainer.step()?;
        if let Some(w) = csv.as_mut() {
            w.append(&record)?;
        }
        if record.step % 25 == 0 || record.step == 1 {
            log::info!(
                "step {}: g {:.4} d_match {:.4} d_mismatch {:.4} d_relevant {:.4}",
                record.step,
                record.g_loss,
                record.d_match,
                record.d_mismatch,
                record.d_relevant
            );
        }
        outcome.records.push(record);
        let periodic = cfg.checkpoint_every > 0 && record.step % cfg.checkpoint_every == 0;
        if let (Some(dir), true) = (out_dir, periodic || record.step == cfg.steps) {
            let path = dir.join(format!("ckpt_{}", record.step));
            save_checkpoint(&path, &model.store, config, &model.vse.vocab)?;
            outcome.checkpoints.push(path);
        }
    }
    if let Some(w) = csv.as_mut() {
        w.inner.flush()?;
    }
    Ok(outcome)
}
