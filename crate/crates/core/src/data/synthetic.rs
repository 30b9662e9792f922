//! Procedural colored-shape images with templated captions.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Image, Sample};
use crate::error::{Error, Result};
use crate::seed::{derive_indexed, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedColor {
    pub name: String,
    /// Channel intensities in `[0, 1]`.
    pub rgb: [f32; 3],
}

impl NamedColor {
    pub fn new(name: &str, rgb: [f32; 3]) -> Self {
        Self {
            name: name.to_string(),
            rgb,
        }
    }

    /// Channels this color is named for (intensity at least one half).
    pub fn strong_channels(&self) -> Vec<usize> {
        (0..3).filter(|&c| self.rgb[c] >= 0.5).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    /// Whether the point `(px, py)` lies inside the shape centred at
    /// `(cx, cy)` with half-extent `r`.
    pub fn contains(self, px: f32, py: f32, cx: f32, cy: f32, r: f32) -> bool {
        let (dx, dy) = (px - cx, py - cy);
        match self {
            ShapeKind::Circle => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => dx.abs() <= r * 0.85 && dy.abs() <= r * 0.85,
            ShapeKind::Triangle => {
                // Apex up: vertical extent [-r, r], half-width grows linearly to r at the base.
                if !(-r..=r).contains(&dy) {
                    return false;
                }
                let half = r * (dy + r) / (2.0 * r);
                dx.abs() <= half
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub name: String,
    pub kind: ShapeKind,
    /// Caption words used for this shape; the first is canonical.
    pub words: Vec<String>,
}

impl ShapeSpec {
    pub fn new(kind: ShapeKind, words: &[&str]) -> Self {
        Self {
            name: words[0].to_string(),
            kind,
            words: words.iter().map(|w| w.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub colors: Vec<NamedColor>,
    pub shapes: Vec<ShapeSpec>,
    pub backgrounds: Vec<NamedColor>,
    pub size: usize,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            colors: vec![
                NamedColor::new("red", [0.9, 0.1, 0.1]),
                NamedColor::new("green", [0.1, 0.8, 0.15]),
                NamedColor::new("blue", [0.1, 0.2, 0.95]),
                NamedColor::new("yellow", [0.95, 0.9, 0.1]),
            ],
            shapes: vec![
                ShapeSpec::new(ShapeKind::Circle, &["circle", "disc", "dot"]),
                ShapeSpec::new(ShapeKind::Square, &["square", "box", "block"]),
                ShapeSpec::new(ShapeKind::Triangle, &["triangle", "wedge"]),
            ],
            backgrounds: vec![
                NamedColor::new("gray", [0.5, 0.5, 0.5]),
                NamedColor::new("white", [0.92, 0.92, 0.92]),
            ],
            size: 32,
            samples_per_class: 200,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn num_classes(&self) -> usize {
        self.colors.len() * self.shapes.len()
    }

    pub fn class_id(&self, color: usize, shape: usize) -> usize {
        color * self.shapes.len() + shape
    }

    pub fn class_color(&self, class_id: usize) -> usize {
        class_id / self.shapes.len()
    }

    pub fn class_shape(&self, class_id: usize) -> usize {
        class_id % self.shapes.len()
    }

    /// Index of the first configured color named in `caption`.
    pub fn caption_color(&self, caption: &str) -> Option<usize> {
        let lower = caption.to_lowercase();
        let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).collect();
        self.colors
            .iter()
            .position(|col| words.iter().any(|w| *w == col.name))
    }

    pub fn validate(&self) -> Result<()> {
        if self.colors.len() < 2 || self.shapes.len() < 2 {
            return Err(Error::Config("synthetic set needs at least 2 colors and 2 shapes".into()));
        }
        if self.backgrounds.is_empty() {
            return Err(Error::Config("synthetic set needs a background".into()));
        }
        if self.size < 8 {
            return Err(Error::Config(format!("synthetic image size {} below 8", self.size)));
        }
        if self.shapes.iter().any(|s| s.words.is_empty()) {
            return Err(Error::Config("shape without caption words".into()));
        }
        Ok(())
    }
}

/// Whether the channel means of an image agree with `color`: every channel
/// the color is named for must exceed every other channel.
pub fn dominant_color_matches(means: [f64; 3], color: &NamedColor) -> bool {
    let strong = color.strong_channels();
    if strong.is_empty() || strong.len() == 3 {
        return false;
    }
    let min_strong = strong.iter().map(|&c| means[c]).fold(f64::INFINITY, f64::min);
    let max_weak = (0..3)
        .filter(|c| !strong.contains(c))
        .map(|c| means[c])
        .fold(f64::NEG_INFINITY, f64::max);
    min_strong > max_weak
}

fn render_sample(cfg: &SynthConfig, class_id: usize, rng: &mut SeededRng) -> Sample {
    let color = &cfg.colors[cfg.class_color(class_id)];
    let shape = &cfg.shapes[cfg.class_shape(class_id)];
    let bg = cfg.backgrounds.choose(rng).expect("validated non-empty");
    let n = cfg.size as f32;

    let r = n * rng.random_range(0.22..0.34);
    let cx = n / 2.0 + n * rng.random_range(-0.12..0.12);
    let cy = n / 2.0 + n * rng.random_range(-0.12..0.12);

    let to_signed = |v: f32| v * 2.0 - 1.0;
    let mut img = Image::filled(cfg.size, cfg.size, bg.rgb.map(to_signed));
    for y in 0..cfg.size {
        for x in 0..cfg.size {
            // 2x2 supersampling for softer edges.
            let mut cover = 0.0f32;
            for (ox, oy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                if shape.kind.contains(x as f32 + ox, y as f32 + oy, cx, cy, r) {
                    cover += 0.25;
                }
            }
            if cover > 0.0 {
                for c in 0..3 {
                    let v = cover * color.rgb[c] + (1.0 - cover) * bg.rgb[c];
                    img.set(c, y, x, to_signed(v));
                }
            }
        }
    }

    let shape_word = shape.words.choose(rng).expect("validated non-empty");
    let caption = format!("a {} {} on a {} background", color.name, shape_word, bg.name);
    Sample {
        image: img,
        caption,
        class_id: Some(class_id),
    }
}

/// Generate `samples_per_class` samples for every (color, shape) class,
/// class-major. Each sample uses its own seed derived from its position, so
/// the output does not depend on the worker count.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let total = cfg.num_classes() * cfg.samples_per_class;
    let samples = (0..total)
        .into_par_iter()
        .map(|i| {
            let class_id = i / cfg.samples_per_class;
            let mut rng = SeededRng::seed_from_u64(derive_indexed(cfg.seed, i as u64));
            render_sample(cfg, class_id, &mut rng)
        })
        .collect();
    Ok(samples)
}
