//! Synthetic images with a class-specific planted patch, a distractor shared
//! by every class, and additive Gaussian noise.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample};
use crate::error::{GadError, Result};
use crate::tensor::Tensor;
use crate::zoo::INPUT_SIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchShape {
    Square,
    Cross,
    Stripe,
    Blob,
}

/// A shape drawn inside the `size`×`size` box whose top-left pixel is `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub shape: PatchShape,
    pub row: usize,
    pub col: usize,
    pub size: usize,
}

impl Patch {
    /// Whether box-local coordinate `(r, c)` belongs to the shape.
    fn covers_local(&self, r: usize, c: usize) -> bool {
        let s = self.size;
        match self.shape {
            PatchShape::Square => true,
            PatchShape::Cross => {
                // Twice the signed distance from the box centre, in pixels.
                let arm = (s / 4).max(1);
                let band = |v: usize| (2 * v as isize + 1 - s as isize).unsigned_abs() <= arm;
                band(r) || band(c)
            }
            PatchShape::Stripe => r.is_multiple_of(2),
            PatchShape::Blob => {
                let centre = (s as f32 - 1.0) / 2.0;
                let radius = s as f32 / 2.0;
                let (dr, dc) = (r as f32 - centre, c as f32 - centre);
                dr * dr + dc * dc <= radius * radius
            }
        }
    }

    /// Binary mask over the full frame.
    pub fn mask(&self, side: usize) -> Vec<u8> {
        let mut m = vec![0u8; side * side];
        for r in 0..self.size {
            for c in 0..self.size {
                let (y, x) = (self.row + r, self.col + c);
                if y < side && x < side && self.covers_local(r, c) {
                    m[y * side + x] = 1;
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub channels: usize,
    pub images_per_class: usize,
    /// One planted patch per class.
    pub patches: Vec<Patch>,
    pub distractor: Patch,
    pub background: f32,
    pub patch_intensity: f32,
    pub distractor_intensity: f32,
    pub noise_std: f32,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Two classes, 80 images each: a square top-left and a cross
    /// bottom-right, with a small shared block on the left edge of every image.
    pub fn two_class(seed: u64) -> Self {
        SyntheticSpec {
            classes: 2,
            channels: 1,
            images_per_class: 80,
            patches: vec![
                Patch {
                    shape: PatchShape::Square,
                    row: 3,
                    col: 3,
                    size: 8,
                },
                Patch {
                    shape: PatchShape::Cross,
                    row: 20,
                    col: 20,
                    size: 9,
                },
            ],
            distractor: Self::bar(),
            background: 0.2,
            patch_intensity: 0.9,
            distractor_intensity: 0.7,
            noise_std: 0.01,
            seed,
        }
    }

    /// Four classes with one shape per quadrant.
    pub fn four_class(seed: u64) -> Self {
        let at = |shape, row, col| Patch {
            shape,
            row,
            col,
            size: 9,
        };
        SyntheticSpec {
            classes: 4,
            patches: vec![
                at(PatchShape::Square, 2, 2),
                at(PatchShape::Cross, 2, 21),
                at(PatchShape::Stripe, 21, 2),
                at(PatchShape::Blob, 21, 21),
            ],
            ..Self::two_class(seed)
        }
    }

    fn bar() -> Patch {
        Patch {
            shape: PatchShape::Square,
            row: 14,
            col: 4,
            size: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(GadError::invalid("synthetic data needs at least 2 classes"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(GadError::invalid("channels must be 1 or 3"));
        }
        if self.patches.len() != self.classes {
            return Err(GadError::invalid(format!(
                "{} patches for {} classes",
                self.patches.len(),
                self.classes
            )));
        }
        if self.images_per_class < 5 {
            return Err(GadError::invalid(
                "need at least 5 images per class for the split",
            ));
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(GadError::invalid("noise_std must be non-negative"));
        }
        let contrast = (self.patch_intensity - self.background).abs();
        if self.noise_std > 0.0 && contrast < 3.0 * self.noise_std {
            return Err(GadError::invalid(format!(
                "patch contrast {contrast} below 3x noise sigma {}",
                self.noise_std
            )));
        }
        let distractor = self.distractor.mask(INPUT_SIDE);
        for (k, p) in self.patches.iter().chain([&self.distractor]).enumerate() {
            if p.size == 0 || p.row + p.size > INPUT_SIDE || p.col + p.size > INPUT_SIDE {
                return Err(GadError::invalid(format!("patch {k} leaves the frame")));
            }
        }
        for (k, p) in self.patches.iter().enumerate() {
            let m = p.mask(INPUT_SIDE);
            if m.iter().zip(&distractor).any(|(a, b)| a & b == 1) {
                return Err(GadError::invalid(format!(
                    "class {k} patch overlaps the distractor"
                )));
            }
        }
        Ok(())
    }
}

/// Per-class binary mask of the planted patch, row-major `side`×`side`.
pub fn ground_truth_masks(spec: &SyntheticSpec) -> Vec<Vec<u8>> {
    spec.patches.iter().map(|p| p.mask(INPUT_SIDE)).collect()
}

fn render(spec: &SyntheticSpec, class: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let side = INPUT_SIDE;
    let patch = spec.patches[class].mask(side);
    let distractor = spec.distractor.mask(side);
    let noise =
        Normal::new(0.0f32, spec.noise_std).map_err(|e| GadError::invalid(e.to_string()))?;
    let mut data = Vec::with_capacity(spec.channels * side * side);
    for _ in 0..spec.channels {
        for i in 0..side * side {
            let base = if patch[i] == 1 {
                spec.patch_intensity
            } else if distractor[i] == 1 {
                spec.distractor_intensity
            } else {
                spec.background
            };
            let n = if spec.noise_std > 0.0 {
                noise.sample(rng)
            } else {
                0.0
            };
            data.push((base + n).clamp(0.0, 1.0));
        }
    }
    Tensor::new(vec![spec.channels, side, side], data)
}

/// Renders every image, then splits each class 80/20 by a seeded shuffle.
/// Returns the dataset and the per-class ground-truth masks.
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, Vec<Vec<u8>>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut per_class = Vec::with_capacity(spec.classes);
    for class in 0..spec.classes {
        let mut samples = Vec::with_capacity(spec.images_per_class);
        for i in 0..spec.images_per_class {
            samples.push(Sample {
                image: render(spec, class, &mut rng)?,
                label: class,
                id: format!("c{class}_{i:04}"),
            });
        }
        per_class.push(samples);
    }
    let class_names = (0..spec.classes).map(|c| format!("class{c}")).collect();
    let dataset = Dataset::split_per_class(class_names, per_class, &mut rng);
    Ok((dataset, ground_truth_masks(spec)))
}

pub(crate) fn shuffle_split(
    samples: Vec<Sample>,
    rng: &mut ChaCha8Rng,
) -> (Vec<Sample>, Vec<Sample>) {
    let n = samples.len();
    let n_train = n - n / 5;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut is_train = vec![false; n];
    for &i in &idx[..n_train] {
        is_train[i] = true;
    }
    let (train, eval): (Vec<_>, Vec<_>) = samples.into_iter().zip(is_train).partition(|(_, t)| *t);
    (
        train.into_iter().map(|(s, _)| s).collect(),
        eval.into_iter().map(|(s, _)| s).collect(),
    )
}
