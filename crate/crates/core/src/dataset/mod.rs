//! Labeled image sets: synthetic generation, PGM/PPM directory ingestion,
//! per-channel normalization, and the on-disk manifest.

pub mod netpbm;
pub mod synthetic;

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GadError, Result};
use crate::par;
use crate::tensor::Tensor;
use crate::zoo::INPUT_SIDE;

pub use netpbm::Raster;
pub use synthetic::{generate, Patch, PatchShape, SyntheticSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[C, H, W]`.
    pub image: Tensor,
    pub label: usize,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
}

impl Dataset {
    /// Splits each class 80/20 (train/eval) with a seeded shuffle, keeping
    /// class-major, id-stable order inside each split.
    pub fn split_per_class(
        class_names: Vec<String>,
        per_class: Vec<Vec<Sample>>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut train = Vec::new();
        let mut eval = Vec::new();
        for samples in per_class {
            let (t, e) = synthetic::shuffle_split(samples, rng);
            train.extend(t);
            eval.extend(e);
        }
        Dataset {
            class_names,
            train,
            eval,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn all(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(&self.eval)
    }

    pub fn find(&self, id: &str) -> Option<&Sample> {
        self.all().find(|s| s.id == id)
    }

    pub fn channels(&self) -> usize {
        self.all().next().map_or(0, |s| s.image.shape()[0])
    }
}

/// Per-channel statistics computed on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormStats {
    pub fn fit(samples: &[Sample]) -> Result<Self> {
        let first = samples.first().ok_or(GadError::EmptyDataset)?;
        let channels = first.image.shape()[0];
        let plane = first.image.len() / channels;
        let mut sum = vec![0.0f64; channels];
        for s in samples {
            s.image.same_shape(&first.image, "normalization")?;
            for (c, chunk) in s.image.data().chunks_exact(plane).enumerate() {
                sum[c] += chunk.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        let n = (samples.len() * plane) as f64;
        let mu: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut sq = vec![0.0f64; channels];
        for s in samples {
            for (c, chunk) in s.image.data().chunks_exact(plane).enumerate() {
                sq[c] += chunk
                    .iter()
                    .map(|&v| (v as f64 - mu[c]).powi(2))
                    .sum::<f64>();
            }
        }
        let mut mean = Vec::with_capacity(channels);
        let mut std = Vec::with_capacity(channels);
        for c in 0..channels {
            let sd = (sq[c] / n).sqrt();
            if sd < 1e-12 {
                return Err(GadError::invalid(format!("channel {c} has zero variance")));
            }
            mean.push(mu[c] as f32);
            std.push(sd as f32);
        }
        Ok(NormStats { mean, std })
    }

    pub fn apply(&self, image: &Tensor) -> Tensor {
        self.per_channel(image, |v, mu, sd| (v - mu) / sd)
    }

    pub fn invert(&self, image: &Tensor) -> Tensor {
        self.per_channel(image, |v, mu, sd| v * sd + mu)
    }

    fn per_channel(&self, image: &Tensor, f: impl Fn(f32, f32, f32) -> f32) -> Tensor {
        let plane = image.len() / self.mean.len();
        let mut out = image.clone();
        for (c, chunk) in out.data_mut().chunks_exact_mut(plane).enumerate() {
            for v in chunk {
                *v = f(*v, self.mean[c], self.std[c]);
            }
        }
        out
    }
}

/// Normalizes both splits with statistics of the training split.
pub fn normalize(dataset: &Dataset) -> Result<(Dataset, NormStats)> {
    let stats = NormStats::fit(&dataset.train)?;
    let map = |v: &Vec<Sample>| {
        v.iter()
            .map(|s| Sample {
                image: stats.apply(&s.image),
                ..s.clone()
            })
            .collect()
    };
    let out = Dataset {
        class_names: dataset.class_names.clone(),
        train: map(&dataset.train),
        eval: map(&dataset.eval),
    };
    Ok((out, stats))
}

/// Quantizes a `[C,H,W]` image in `[0,1]` to an 8-bit raster.
pub fn to_raster(image: &Tensor) -> Result<Raster> {
    let [c, h, w] = *image.shape() else {
        return Err(GadError::shape("expected [C,H,W] image"));
    };
    if c != 1 && c != 3 {
        return Err(GadError::shape(format!("cannot encode {c} channels")));
    }
    let mut r = Raster::new(w, h, c);
    let d = image.data();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = d[(ch * h + y) * w + x].clamp(0.0, 1.0);
                r.pixels[(y * w + x) * c + ch] = (v * 255.0).round() as u8;
            }
        }
    }
    Ok(r)
}

/// Center-crops to a square, resizes by nearest neighbour to 32×32, and
/// scales samples to `[0,1]`.
pub fn from_raster(r: &Raster) -> Tensor {
    let side = INPUT_SIDE;
    let crop = r.width.min(r.height);
    let (x0, y0) = ((r.width - crop) / 2, (r.height - crop) / 2);
    let c = r.channels;
    let mut data = vec![0.0f32; c * side * side];
    for y in 0..side {
        let sy = y0 + (y * crop) / side;
        for x in 0..side {
            let sx = x0 + (x * crop) / side;
            for ch in 0..c {
                data[(ch * side + y) * side + x] =
                    r.pixels[(sy * r.width + sx) * c + ch] as f32 / 255.0;
            }
        }
    }
    Tensor::new(vec![c, side, side], data).expect("sized above")
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| GadError::io(dir, e))? {
        out.push(entry.map_err(|e| GadError::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn is_netpbm(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()),
        Some("pgm" | "ppm" | "pnm")
    )
}

/// Reads `<root>/<class-name>/<image>` where images are P5 or P6 files.
/// Classes are labelled in lexicographic order of their directory names.
/// Returns class names and samples grouped by class, ids `<class>/<file stem>`.
pub fn load_class_dirs(root: &Path) -> Result<(Vec<String>, Vec<Vec<Sample>>)> {
    let dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if dirs.is_empty() {
        return Err(GadError::invalid(format!(
            "no class directories under {}",
            root.display()
        )));
    }
    let mut names = Vec::new();
    let mut per_class = Vec::new();
    let mut channels = None;
    for (label, dir) in dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| GadError::invalid(format!("bad class dir {}", dir.display())))?
            .to_string();
        let files: Vec<PathBuf> = sorted_entries(dir)?
            .into_iter()
            .filter(|p| p.is_file() && is_netpbm(p))
            .collect();
        if files.is_empty() {
            return Err(GadError::invalid(format!(
                "class directory {} holds no images",
                dir.display()
            )));
        }
        let loaded: Vec<Result<Sample>> = par::map(&files, |path| {
            let raster = netpbm::read(path)?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            Ok(Sample {
                image: from_raster(&raster),
                label,
                id: format!("{name}/{stem}"),
            })
        });
        let mut samples = Vec::with_capacity(files.len());
        for (s, path) in loaded.into_iter().zip(&files) {
            let s = s?;
            let c = s.image.shape()[0];
            if *channels.get_or_insert(c) != c {
                return Err(GadError::ImageFormat {
                    path: path.clone(),
                    reason: "channel count differs from the rest of the dataset".into(),
                });
            }
            samples.push(s);
        }
        names.push(name);
        per_class.push(samples);
    }
    Ok((names, per_class))
}

/// Loads a class-directory tree and splits it 80/20 per class under `seed`.
pub fn load_directory(root: &Path, seed: u64) -> Result<Dataset> {
    let (names, per_class) = load_class_dirs(root)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Dataset::split_per_class(names, per_class, &mut rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: usize,
    pub split: Split,
    /// Path relative to the dataset root.
    pub file: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub channels: usize,
    pub entries: Vec<ManifestEntry>,
    /// Per-class ground-truth masks (`0`/`1`, row-major 32×32) when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<Vec<u8>>>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn file_name_for(sample: &Sample, split: Split, class_name: &str, channels: usize) -> String {
    let ext = if channels == 3 { "ppm" } else { "pgm" };
    let stem = sample.id.rsplit('/').next().unwrap_or(&sample.id);
    let split = match split {
        Split::Train => "train",
        Split::Eval => "eval",
    };
    format!("{split}/{class_name}/{stem}.{ext}")
}

/// Writes every image as PGM/PPM plus a JSON manifest under `root`.
pub fn write_dataset(
    root: &Path,
    dataset: &Dataset,
    ground_truth: Option<&[Vec<u8>]>,
) -> Result<DatasetManifest> {
    let channels = dataset.channels();
    let mut entries = Vec::new();
    for (split, samples) in [(Split::Train, &dataset.train), (Split::Eval, &dataset.eval)] {
        for s in samples {
            let rel = file_name_for(s, split, &dataset.class_names[s.label], channels);
            let path = root.join(&rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| GadError::io(parent, e))?;
            }
            netpbm::write(&path, &to_raster(&s.image)?)?;
            entries.push(ManifestEntry {
                id: s.id.clone(),
                label: s.label,
                split,
                file: rel,
            });
        }
    }
    let manifest = DatasetManifest {
        class_names: dataset.class_names.clone(),
        channels,
        entries,
        ground_truth: ground_truth.map(|g| g.to_vec()),
    };
    let path = root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| GadError::io(&path, e))?;
    Ok(manifest)
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(root: &Path) -> Result<(Dataset, DatasetManifest)> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| GadError::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let loaded: Vec<Result<Sample>> = par::map(&manifest.entries, |e| {
        let raster = netpbm::read(&root.join(&e.file))?;
        if raster.channels != manifest.channels {
            return Err(GadError::ImageFormat {
                path: root.join(&e.file),
                reason: format!("expected {} channels", manifest.channels),
            });
        }
        Ok(Sample {
            image: from_raster(&raster),
            label: e.label,
            id: e.id.clone(),
        })
    });
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (s, e) in loaded.into_iter().zip(&manifest.entries) {
        let s = s?;
        if s.label >= manifest.class_names.len() {
            return Err(GadError::ClassOutOfRange {
                index: s.label,
                classes: manifest.class_names.len(),
            });
        }
        match e.split {
            Split::Train => train.push(s),
            Split::Eval => eval.push(s),
        }
    }
    let ds = Dataset {
        class_names: manifest.class_names.clone(),
        train,
        eval,
    };
    Ok((ds, manifest))
}
