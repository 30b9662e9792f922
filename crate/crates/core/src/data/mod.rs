//! Dataset provision: the synthetic shapes set and external manifests.

mod image;
mod manifest;
mod synthetic;

pub use self::image::Image;
pub use manifest::{load_manifest, write_manifest};
pub use synthetic::{
    dominant_color_matches, generate_synthetic, NamedColor, ShapeKind, ShapeSpec, SynthConfig,
};

use rand::seq::SliceRandom;

use crate::seed::SeededRng;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub caption: String,
    /// Known only for synthetic data.
    pub class_id: Option<usize>,
}

/// Deterministically split `samples` into (train, held-out) with
/// `holdout_fraction` of the data held out.
pub fn split_holdout(
    samples: Vec<Sample>,
    holdout_fraction: f64,
    rng: &mut SeededRng,
) -> (Vec<Sample>, Vec<Sample>) {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let n_hold = ((samples.len() as f64) * holdout_fraction).round() as usize;
    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let held: Vec<Sample> = order[..n_hold].iter().map(|&i| slots[i].take().unwrap()).collect();
    let train: Vec<Sample> = slots.into_iter().flatten().collect();
    (train, held)
}
