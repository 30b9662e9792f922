//! End-to-end steps driven by the command line: embedding pretraining,
//! adversarial training, sampling, attention maps and evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use image::{Rgb, RgbImage};
use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, RunConfig};
use crate::data::{generate_synthetic, load_manifest, split_holdout, Image, Sample};
use crate::error::{Error, Result};
use crate::generator::TraceRecord;
use crate::metrics::{inception_score, retrieval_recall, ClassifierTraining, DeskClassifier, EvalReport};
use crate::model::{CanvasModel, VseBundle};
use crate::seed::{derive_seed, rng_for, SeededRng};
use crate::training::{
    encode_captions, load_vse_checkpoint, save_checkpoint, train, CaptionBatch, CaptionEncoding, LoadedCheckpoint,
    TrainOutcome, TrainingSet,
};
use crate::vse::{pretrain_vse, LossPoint, Vocabulary};

/// Working dtype for every trained model.
pub const DTYPE: DType = DType::F32;

pub const VSE_DIR: &str = "vse";
pub const VSE_LOSSES: &str = "vse_losses.csv";
pub const LOSSES: &str = "losses.csv";
pub const EVAL_REPORT: &str = "eval_report.json";

/// Load the configured dataset in full.
pub fn load_dataset(cfg: &RunConfig) -> Result<Vec<Sample>> {
    match cfg.data.source {
        DataSource::Synthetic => generate_synthetic(&cfg.synth_config()),
        DataSource::Manifest => {
            let path = cfg
                .data
                .manifest
                .as_ref()
                .ok_or_else(|| Error::Config("`data.manifest` is required for a manifest source".into()))?;
            load_manifest(path, cfg.data.size)
        }
    }
}

/// The dataset split into (train, held-out), deterministic in the seed.
pub fn load_split(cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let samples = load_dataset(cfg)?;
    let mut rng = rng_for(cfg.seed, "split");
    Ok(split_holdout(samples, cfg.data.holdout, &mut rng))
}

pub struct VseRun {
    pub bundle: VseBundle,
    pub history: Vec<LossPoint>,
    pub held_out: Vec<Sample>,
    pub checkpoint: PathBuf,
}

/// Pretrain the embedding, then write `<out>/vse/` and `<out>/vse_losses.csv`.
pub fn run_vse_pretrain(cfg: &RunConfig, out: &Path) -> Result<VseRun> {
    cfg.validate()?;
    let (train_set, held_out) = load_split(cfg)?;
    let vocab = Vocabulary::from_captions(train_set.iter().map(|s| s.caption.as_str()));
    let bundle = VseBundle::new(cfg, vocab, DTYPE)?;
    let mut rng = rng_for(cfg.seed, "vse-train");
    let history = pretrain_vse(&bundle.store, &bundle.vse, &train_set, &cfg.vse, &mut rng)?;

    fs::create_dir_all(out)?;
    let mut csv = String::from("step,loss\n");
    for p in &history {
        writeln!(csv, "{},{}", p.step, p.loss).expect("string write");
    }
    fs::write(out.join(VSE_LOSSES), csv)?;
    let checkpoint = out.join(VSE_DIR);
    save_checkpoint(&checkpoint, &bundle.store, cfg, &bundle.vse.vocab)?;
    Ok(VseRun {
        bundle,
        history,
        held_out,
        checkpoint,
    })
}

pub struct TrainRun {
    pub model: CanvasModel,
    pub outcome: TrainOutcome,
    pub held_out: Vec<Sample>,
}

/// Build the full model around a pretrained embedding checkpoint.
pub fn model_with_vse(cfg: &RunConfig, vse_ckpt: &LoadedCheckpoint) -> Result<CanvasModel> {
    let model = CanvasModel::new(cfg, vse_ckpt.vocab.clone(), DTYPE)?;
    model.load_vse(vse_ckpt)?;
    Ok(model)
}

/// Adversarial training on top of the frozen embedding found at
/// `train.vse_checkpoint` (default `<out>/vse`).
pub fn run_train(cfg: &RunConfig, out: &Path) -> Result<TrainRun> {
    cfg.validate()?;
    let vse_dir = cfg.train.vse_checkpoint.clone().unwrap_or_else(|| out.join(VSE_DIR));
    let vse_ckpt = load_vse_checkpoint(&vse_dir, cfg)?;
    let (train_set, held_out) = load_split(cfg)?;
    let model = model_with_vse(cfg, &vse_ckpt)?;
    let set = TrainingSet::new(&model, &train_set)?;
    let outcome = train(&model, &set, cfg, Some(out), rng_for(cfg.seed, "train"))?;
    Ok(TrainRun {
        model,
        outcome,
        held_out,
    })
}

/// Paint one image per caption, drawing all noise from `rng`.
pub fn paint_captions(
    model: &CanvasModel,
    captions: &[&str],
    rng: &mut SeededRng,
) -> Result<(Vec<Image>, Vec<Vec<TraceRecord>>)> {
    let encs = encode_captions(&model.vse, captions)?;
    let mut images = Vec::with_capacity(captions.len());
    let mut traces = Vec::with_capacity(captions.len());
    for chunk in encs.chunks(64) {
        let refs: Vec<&CaptionEncoding> = chunk.iter().collect();
        let caps = CaptionBatch::from_encodings(&refs, DTYPE)?;
        let z = model.generator.sample_noise(refs.len(), DTYPE, rng)?;
        let out = model.generator.paint(&caps.per_token, &caps.mask, &caps.sentence, &z, rng)?;
        images.extend(Image::from_batch_tensor(&out.image)?);
        for (row, enc) in chunk.iter().enumerate() {
            traces.push(out.records(row, &enc.tokens)?);
        }
    }
    Ok((images, traces))
}

/// The JSON written beside each sampled image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    pub caption: String,
    pub tokens: Vec<String>,
    pub steps: Vec<TraceRecord>,
}

impl SampleTrace {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let trace: SampleTrace =
            serde_json::from_str(&text).map_err(|e| Error::MalformedTrace(format!("{}: {e}", path.display())))?;
        trace.validate()?;
        Ok(trace)
    }

    /// Every step must weight exactly the listed tokens with a distribution.
    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() || self.tokens.is_empty() {
            return Err(Error::MalformedTrace("trace has no steps or no tokens".into()));
        }
        for s in &self.steps {
            if s.beta.len() != self.tokens.len() {
                return Err(Error::MalformedTrace(format!(
                    "timestep {} has {} weights for {} tokens",
                    s.timestep,
                    s.beta.len(),
                    self.tokens.len()
                )));
            }
            let sum: f64 = s.beta.iter().sum();
            if s.beta.iter().any(|b| !b.is_finite() || *b < 0.0) || (sum - 1.0).abs() > 1e-4 {
                return Err(Error::MalformedTrace(format!(
                    "timestep {} weights do not form a distribution (sum {sum})",
                    s.timestep
                )));
            }
        }
        Ok(())
    }
}

/// Write `count` images for `caption` as `sample_XXX.png` with a matching
/// `sample_XXX.json` trace. Returns the PNG paths.
pub fn run_sample(ckpt: &LoadedCheckpoint, caption: &str, count: usize, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let model = CanvasModel::from_checkpoint(ckpt, DTYPE)?;
    let tokens = model.vse.tokenize(caption)?.raw_tokens;
    let captions = vec![caption; count];
    let mut rng = rng_for(seed, "sample");
    let (images, traces) = paint_captions(&model, &captions, &mut rng)?;
    fs::create_dir_all(out)?;
    let mut paths = Vec::with_capacity(count);
    for (i, (img, steps)) in images.iter().zip(traces).enumerate() {
        let png = out.join(format!("sample_{i:03}.png"));
        img.save_png(&png)?;
        let trace = SampleTrace {
            caption: caption.to_string(),
            tokens: tokens.clone(),
            steps,
        };
        fs::write(png.with_extension("json"), serde_json::to_string_pretty(&trace)? + "\n")?;
        paths.push(png);
    }
    Ok(paths)
}

/// Side of one heat-map cell in the PNG, in pixels.
pub const CELL: u32 = 16;

/// Monotone black-red-yellow-white ramp over `[0, 1]`.
pub fn heat_color(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0) * 3.0;
    let ch = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(v), ch(v - 1.0), ch(v - 2.0)]
}

/// Timesteps-by-tokens heat map of a trace, colors scaled by the largest
/// weight in the trace.
pub fn attention_png(trace: &SampleTrace) -> Result<RgbImage> {
    trace.validate()?;
    let max = trace
        .steps
        .iter()
        .flat_map(|s| s.beta.iter().copied())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let (rows, cols) = (trace.steps.len() as u32, trace.tokens.len() as u32);
    Ok(RgbImage::from_fn(cols * CELL, rows * CELL, |x, y| {
        let beta = trace.steps[(y / CELL) as usize].beta[(x / CELL) as usize];
        Rgb(heat_color(beta / max))
    }))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// The same heat map as SVG, with token labels along the top and
/// timesteps down the side.
pub fn attention_svg(trace: &SampleTrace) -> Result<String> {
    trace.validate()?;
    let max = trace
        .steps
        .iter()
        .flat_map(|s| s.beta.iter().copied())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let (cell, left, top) = (40, 40, 80);
    let width = left + cell * trace.tokens.len();
    let height = top + cell * trace.steps.len();
    let mut svg = String::new();
    let w = &mut svg;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#).unwrap();
    for (j, tok) in trace.tokens.iter().enumerate() {
        let x = left + cell * j + cell / 2;
        writeln!(w, r#"<text x="{x}" y="{}" transform="rotate(-45 {x} {})">{}</text>"#, top - 6, top - 6, xml_escape(tok)).unwrap();
    }
    for (i, step) in trace.steps.iter().enumerate() {
        let y = top + cell * i;
        writeln!(w, r#"<text x="4" y="{}">t={}</text>"#, y + cell / 2 + 4, step.timestep).unwrap();
        for (j, beta) in step.beta.iter().enumerate() {
            let [r, g, b] = heat_color(beta / max);
            writeln!(
                w,
                r#"<rect x="{}" y="{y}" width="{cell}" height="{cell}" fill="rgb({r},{g},{b})"><title>{:.4}</title></rect>"#,
                left + cell * j,
                beta
            )
            .unwrap();
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Render `attention.png` and `attention.svg` into `out`.
pub fn run_attention_map(trace_path: &Path, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let trace = SampleTrace::load(trace_path)?;
    let png = attention_png(&trace)?;
    let svg = attention_svg(&trace)?;
    fs::create_dir_all(out)?;
    let (png_path, svg_path) = (out.join("attention.png"), out.join("attention.svg"));
    png.save(&png_path)?;
    fs::write(&svg_path, svg)?;
    Ok((png_path, svg_path))
}

/// Score a trained checkpoint: inception score of generated images under a
/// desk classifier, and embedding recall@{1,5} within pools of held-out pairs.
pub fn evaluate(ckpt: &LoadedCheckpoint, cfg: &RunConfig) -> Result<EvalReport> {
    let m = &cfg.metrics;
    if m.samples < m.splits || m.splits == 0 {
        return Err(Error::Config(format!(
            "metrics.samples ({}) must be at least metrics.splits ({}) and splits positive",
            m.samples, m.splits
        )));
    }
    let model = CanvasModel::from_checkpoint(ckpt, DTYPE)?;
    let (train_set, held_out) = load_split(cfg)?;
    if train_set.iter().any(|s| s.class_id.is_none()) {
        return Err(Error::Config("inception score needs class labels (synthetic data)".into()));
    }
    if held_out.len() < m.retrieval_pool.max(2) {
        return Err(Error::Config(format!(
            "need at least {} held-out samples, have {}",
            m.retrieval_pool.max(2),
            held_out.len()
        )));
    }

    let classes = cfg.synth_config().num_classes();
    let mut classifier = DeskClassifier::new(classes, 16, derive_seed(cfg.seed, "classifier"))?;
    let training = ClassifierTraining {
        max_steps: m.classifier_steps,
        ..Default::default()
    };
    let acc = classifier.train(&train_set, training, &mut rng_for(cfg.seed, "classifier-train"))?;
    log::info!("desk classifier train accuracy {acc:.3}");

    let captions: Vec<&str> = (0..m.samples).map(|i| held_out[i % held_out.len()].caption.as_str()).collect();
    let (images, _) = paint_captions(&model, &captions, &mut rng_for(cfg.seed, "eval-sample"))?;
    let refs: Vec<&Image> = images.iter().collect();
    let mut posteriors = Vec::with_capacity(images.len());
    for chunk in refs.chunks(64) {
        posteriors.extend(classifier.posteriors(&Image::batch_tensor(chunk, DType::F32)?)?);
    }
    let (inception_mean, inception_std) = inception_score(&posteriors, m.splits)?;

    let mut rng = rng_for(cfg.seed, "eval-retrieval");
    let mut recall_at = BTreeMap::new();
    let mut sums = [0.0f64; 2];
    let pool = m.retrieval_pool.max(2);
    for _ in 0..m.retrieval_pools.max(1) {
        let chosen: Vec<&Sample> = held_out.choose_multiple(&mut rng, pool).collect();
        let (img, sent) = model.vse.embed_pairs(&chosen, DTYPE)?;
        let (img, sent) = (rows(&img)?, rows(&sent)?);
        for (slot, k) in [1usize, 5].into_iter().enumerate() {
            sums[slot] += retrieval_recall(&img, &sent, k.min(pool))?;
        }
    }
    let pools = m.retrieval_pools.max(1) as f64;
    recall_at.insert("1".to_string(), sums[0] / pools);
    recall_at.insert("5".to_string(), sums[1] / pools);
    Ok(EvalReport {
        inception_mean,
        inception_std,
        recall_at,
    })
}

fn rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    Ok(t.to_dtype(DType::F64)?.to_vec2()?)
}

/// Evaluate and write `<out>/eval_report.json`.
pub fn run_eval(ckpt: &LoadedCheckpoint, cfg: &RunConfig, out: &Path) -> Result<EvalReport> {
    let report = evaluate(ckpt, cfg)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(EVAL_REPORT), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}
