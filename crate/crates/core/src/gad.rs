//! Artificial class distancing.
//!
//! Target rows are the original model's logits with a constant subtracted
//! from the opposing classes' columns. One support regressor is trained per
//! entry of an increasing α schedule, and the final attribution keeps only
//! pixels that stay strictly positive through the original map and every
//! support model's map.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::{explain, AttributionMap, IgConfig, Method};
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingKind};
use crate::dataset::Sample;
use crate::error::{GadError, Result};
use crate::network::Model;
use crate::par;
use crate::tensor::Tensor;
use crate::zoo::{batch_logits, train_regressor, TrainConfig, TrainReport};

/// Which classes are pushed apart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassPairing {
    TwoClass {
        k: usize,
        l: usize,
    },
    OneVsAll {
        k: usize,
    },
    HalfSplit {
        cluster_a: Vec<usize>,
        cluster_b: Vec<usize>,
    },
}

/// Which side of the pairing a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    A,
    B,
}

impl ClassPairing {
    pub fn validate(&self, classes: usize) -> Result<()> {
        let in_range = |c: usize| {
            if c < classes {
                Ok(())
            } else {
                Err(GadError::ClassOutOfRange { index: c, classes })
            }
        };
        match self {
            ClassPairing::TwoClass { k, l } => {
                in_range(*k)?;
                in_range(*l)?;
                if k == l {
                    return Err(GadError::invalid("two-class pairing needs k != l"));
                }
            }
            ClassPairing::OneVsAll { k } => in_range(*k)?,
            ClassPairing::HalfSplit {
                cluster_a,
                cluster_b,
            } => {
                if cluster_a.is_empty() || cluster_b.is_empty() {
                    return Err(GadError::invalid("half split needs two non-empty clusters"));
                }
                let mut seen = vec![false; classes];
                for &c in cluster_a.iter().chain(cluster_b) {
                    in_range(c)?;
                    if std::mem::replace(&mut seen[c], true) {
                        return Err(GadError::invalid(format!("class {c} appears twice")));
                    }
                }
                if let Some(c) = seen.iter().position(|s| !s) {
                    return Err(GadError::invalid(format!(
                        "class {c} is in neither cluster"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Columns to shift for a row labelled `label`, and the α side to use.
    /// `None` when the row is outside the pairing (two-class restriction).
    fn rule(&self, label: usize, classes: usize) -> Result<Option<(Vec<usize>, Side)>> {
        Ok(match self {
            ClassPairing::TwoClass { k, l } => {
                if label == *k {
                    Some((vec![*l], Side::A))
                } else if label == *l {
                    Some((vec![*k], Side::B))
                } else {
                    None
                }
            }
            ClassPairing::OneVsAll { k } => {
                if label == *k {
                    Some(((0..classes).filter(|c| c != k).collect(), Side::A))
                } else {
                    Some((vec![*k], Side::B))
                }
            }
            ClassPairing::HalfSplit {
                cluster_a,
                cluster_b,
            } => {
                if cluster_a.contains(&label) {
                    Some((cluster_b.clone(), Side::A))
                } else if cluster_b.contains(&label) {
                    Some((cluster_a.clone(), Side::B))
                } else {
                    return Err(GadError::invalid(format!(
                        "class {label} is in neither cluster"
                    )));
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaPair {
    pub k: f32,
    pub l: f32,
}

impl AlphaPair {
    pub fn new(k: f32, l: f32) -> Self {
        AlphaPair { k, l }
    }

    pub fn symmetric(a: f32) -> Self {
        AlphaPair { k: a, l: a }
    }
}

/// Ordered α pairs, non-decreasing in both coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlphaSchedule(Vec<AlphaPair>);

impl Default for AlphaSchedule {
    fn default() -> Self {
        AlphaSchedule([0.0, 2.0, 4.0, 6.0, 8.0].map(AlphaPair::symmetric).to_vec())
    }
}

impl AlphaSchedule {
    pub fn new(pairs: Vec<AlphaPair>) -> Result<Self> {
        for p in &pairs {
            if !(p.k >= 0.0 && p.l >= 0.0) || !p.k.is_finite() || !p.l.is_finite() {
                return Err(GadError::invalid(format!(
                    "α must be finite and ≥ 0, got {p:?}"
                )));
            }
        }
        if pairs.windows(2).any(|w| w[1].k < w[0].k || w[1].l < w[0].l) {
            return Err(GadError::invalid("α schedule must be non-decreasing"));
        }
        Ok(AlphaSchedule(pairs))
    }

    pub fn pairs(&self) -> &[AlphaPair] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Regression targets: one row per selected sample, one column per class.
#[derive(Debug, Clone, PartialEq)]
pub struct DistancingTargets {
    /// Index into the sample slice the targets were built from, per row.
    pub indices: Vec<usize>,
    pub rows: Vec<Vec<f32>>,
    pub pairing: ClassPairing,
    pub alpha: AlphaPair,
}

/// Applies a pairing to precomputed logits. Two-class pairings keep only rows
/// of classes `k` then `l` (each in input order); the other pairings keep
/// every row in input order.
pub fn distance_logits(
    logits: &[Vec<f32>],
    labels: &[usize],
    pairing: &ClassPairing,
    alpha: AlphaPair,
) -> Result<DistancingTargets> {
    if logits.len() != labels.len() {
        return Err(GadError::shape(format!(
            "{} logit rows for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let classes = logits.first().map_or(0, Vec::len);
    if logits.iter().any(|r| r.len() != classes) {
        return Err(GadError::shape("ragged logit rows"));
    }
    pairing.validate(classes)?;
    if !(alpha.k >= 0.0 && alpha.l >= 0.0) {
        return Err(GadError::invalid(format!("α must be ≥ 0, got {alpha:?}")));
    }
    let order: Vec<usize> = match pairing {
        ClassPairing::TwoClass { k, l } => {
            let of = |c: usize| (0..labels.len()).filter(move |&i| labels[i] == c);
            of(*k).chain(of(*l)).collect()
        }
        _ => (0..labels.len()).collect(),
    };
    let mut rows = Vec::with_capacity(order.len());
    for &i in &order {
        let mut row = logits[i].clone();
        if let Some((cols, side)) = pairing.rule(labels[i], classes)? {
            let a = match side {
                Side::A => alpha.k,
                Side::B => alpha.l,
            };
            for c in cols {
                row[c] -= a;
            }
        }
        rows.push(row);
    }
    Ok(DistancingTargets {
        indices: order,
        rows,
        pairing: pairing.clone(),
        alpha,
    })
}

fn logits_and_labels(model: &Model, samples: &[Sample]) -> Result<(Vec<Vec<f32>>, Vec<usize>)> {
    let logits = batch_logits(model, samples)?
        .into_iter()
        .map(Tensor::into_data)
        .collect();
    Ok((logits, samples.iter().map(|s| s.label).collect()))
}

pub fn make_targets(
    model: &Model,
    samples: &[Sample],
    pairing: &ClassPairing,
    alpha: AlphaPair,
) -> Result<DistancingTargets> {
    let (logits, labels) = logits_and_labels(model, samples)?;
    distance_logits(&logits, &labels, pairing, alpha)
}

/// Rows of classes `k` then `l`; class-`k` rows lose `alpha_k` in column `l`
/// and class-`l` rows lose `alpha_l` in column `k`.
pub fn make_targets_two_class(
    model: &Model,
    samples: &[Sample],
    k: usize,
    l: usize,
    alpha_k: f32,
    alpha_l: f32,
) -> Result<DistancingTargets> {
    make_targets(
        model,
        samples,
        &ClassPairing::TwoClass { k, l },
        AlphaPair::new(alpha_k, alpha_l),
    )
}

/// Class `k` against every other image treated as one class.
pub fn make_targets_ova(
    model: &Model,
    samples: &[Sample],
    k: usize,
    alpha: AlphaPair,
) -> Result<DistancingTargets> {
    make_targets(model, samples, &ClassPairing::OneVsAll { k }, alpha)
}

pub fn make_targets_half(
    model: &Model,
    samples: &[Sample],
    clusters: (Vec<usize>, Vec<usize>),
    alpha: AlphaPair,
) -> Result<DistancingTargets> {
    let pairing = ClassPairing::HalfSplit {
        cluster_a: clusters.0,
        cluster_b: clusters.1,
    };
    make_targets(model, samples, &pairing, alpha)
}

fn dist2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum()
}

fn centroid(points: &[Vec<f32>], members: &[usize]) -> Vec<f32> {
    let dim = points[0].len();
    let mut c = vec![0.0f64; dim];
    for &i in members {
        for (acc, v) in c.iter_mut().zip(&points[i]) {
            *acc += *v as f64;
        }
    }
    c.into_iter()
        .map(|v| (v / members.len() as f64) as f32)
        .collect()
}

/// Splits classes into two groups by their mean logit vectors: the farthest
/// pair seeds two centres, every class joins the nearer centre, and one
/// 2-means sweep refines the split. Ties go to the group seeded by the lower
/// class index. The group containing class 0 is returned first.
pub fn split_by_means(means: &[Vec<f32>]) -> Result<(Vec<usize>, Vec<usize>)> {
    let m = means.len();
    if m < 2 {
        return Err(GadError::invalid(format!(
            "need at least 2 classes, got {m}"
        )));
    }
    let (mut si, mut sj, mut best) = (0, 1, -1.0f64);
    for i in 0..m {
        for j in i + 1..m {
            let d = dist2(&means[i], &means[j]);
            if d > best {
                (si, sj, best) = (i, j, d);
            }
        }
    }
    let assign = |ca: &[f32], cb: &[f32]| -> Vec<bool> {
        means.iter().map(|p| dist2(p, ca) <= dist2(p, cb)).collect()
    };
    let mut in_a = assign(&means[si], &means[sj]);
    in_a[si] = true;
    in_a[sj] = false;
    let members =
        |in_a: &[bool], want: bool| -> Vec<usize> { (0..m).filter(|&c| in_a[c] == want).collect() };
    let refined = assign(
        &centroid(means, &members(&in_a, true)),
        &centroid(means, &members(&in_a, false)),
    );
    if refined.iter().any(|&a| a) && refined.iter().any(|&a| !a) {
        in_a = refined;
    }
    let (a, b) = (members(&in_a, true), members(&in_a, false));
    Ok(if a.contains(&0) { (a, b) } else { (b, a) })
}

/// Mean logit vector per class over `samples`, then [`split_by_means`].
pub fn half_split_clusters(model: &Model, samples: &[Sample]) -> Result<(Vec<usize>, Vec<usize>)> {
    let classes = model.num_classes();
    if classes < 2 {
        return Err(GadError::invalid("need at least 2 classes"));
    }
    let (logits, labels) = logits_and_labels(model, samples)?;
    let mut means = Vec::with_capacity(classes);
    for c in 0..classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            return Err(GadError::invalid(format!("class {c} has no samples")));
        }
        means.push(centroid(&logits, &members));
    }
    split_by_means(&means)
}

/// Support regressors, one per schedule entry, in schedule order.
#[derive(Debug, Clone)]
pub struct SupportModelSet {
    pub models: Vec<Model>,
    pub reports: Vec<TrainReport>,
    pub pairing: ClassPairing,
    pub schedule: AlphaSchedule,
}

/// Trains one regressor per α entry, each initialized from `original`.
/// Entries are independent and may train concurrently.
pub fn train_support_models(
    original: &Model,
    samples: &[Sample],
    pairing: &ClassPairing,
    schedule: &AlphaSchedule,
    config: &TrainConfig,
) -> Result<SupportModelSet> {
    pairing.validate(original.num_classes())?;
    let (logits, labels) = logits_and_labels(original, samples)?;
    let trained: Vec<Result<(Model, TrainReport)>> = par::map(schedule.pairs(), |&alpha| {
        let targets = distance_logits(&logits, &labels, pairing, alpha)?;
        let subset: Vec<Sample> = targets
            .indices
            .iter()
            .map(|&i| samples[i].clone())
            .collect();
        train_regressor(original.clone(), &subset, &targets.rows, config)
    });
    let mut models = Vec::with_capacity(trained.len());
    let mut reports = Vec::with_capacity(trained.len());
    for t in trained {
        let (m, r) = t?;
        models.push(m);
        reports.push(r);
    }
    Ok(SupportModelSet {
        models,
        reports,
        pairing: pairing.clone(),
        schedule: schedule.clone(),
    })
}

/// Intersection of positive supports, returning every intermediate map.
/// Entry `j` is the map after `j + 1` support maps; an empty input yields an
/// empty list.
pub fn intersect_steps(
    original: &AttributionMap,
    support_maps: &[AttributionMap],
) -> Result<Vec<AttributionMap>> {
    let mut mask: Vec<bool> = original.values.iter().map(|&v| v > 0.0).collect();
    let mut out = Vec::with_capacity(support_maps.len());
    for sm in support_maps {
        if sm.values.len() != mask.len() {
            return Err(GadError::shape("support map size differs from original"));
        }
        let values: Vec<f32> = sm
            .values
            .iter()
            .zip(&mask)
            .map(|(&v, &keep)| if keep { v } else { 0.0 })
            .collect();
        mask = values.iter().map(|&v| v > 0.0).collect();
        out.push(AttributionMap {
            values,
            ..original.clone()
        });
    }
    Ok(out)
}

/// Final filtered map: values of the last support map, kept only where every
/// earlier map (original included) was strictly positive. With no support
/// maps the original map is returned.
pub fn intersect(
    original: &AttributionMap,
    support_maps: &[AttributionMap],
) -> Result<AttributionMap> {
    Ok(intersect_steps(original, support_maps)?
        .pop()
        .unwrap_or_else(|| original.clone()))
}

pub fn gad_attribution(
    original: &Model,
    supports: &[Model],
    method: Method,
    image: &Tensor,
    class: usize,
    ig: &IgConfig,
) -> Result<AttributionMap> {
    Ok(gad_explain(original, supports, method, image, class, ig)?.1)
}

/// Original map and filtered map together.
pub fn gad_explain(
    original: &Model,
    supports: &[Model],
    method: Method,
    image: &Tensor,
    class: usize,
    ig: &IgConfig,
) -> Result<(AttributionMap, AttributionMap)> {
    let orig = explain(original, image, class, method, ig)?;
    let maps = supports
        .iter()
        .map(|m| explain(m, image, class, method, ig))
        .collect::<Result<Vec<_>>>()?;
    let filtered = intersect(&orig, &maps)?;
    Ok((orig, filtered))
}

pub const SUPPORT_MANIFEST: &str = "support_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEntry {
    pub file: String,
    pub alpha: AlphaPair,
    pub seed: u64,
    pub initial_mse: f32,
    pub final_mse: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportManifest {
    pub pairing: ClassPairing,
    pub schedule: AlphaSchedule,
    pub train: TrainConfig,
    pub models: Vec<SupportEntry>,
}

pub fn save_support_set(
    dir: &Path,
    set: &SupportModelSet,
    class_names: &[String],
    config: &TrainConfig,
) -> Result<SupportManifest> {
    fs::create_dir_all(dir).map_err(|e| GadError::io(dir, e))?;
    let mut entries = Vec::new();
    for (s, ((model, report), alpha)) in set
        .models
        .iter()
        .zip(&set.reports)
        .zip(set.schedule.pairs())
        .enumerate()
    {
        let file = format!("support_{s:02}.ckpt");
        save_checkpoint(
            &dir.join(&file),
            &Checkpoint {
                model: model.clone(),
                class_names: class_names.to_vec(),
                kind: TrainingKind::Regressor,
            },
        )?;
        entries.push(SupportEntry {
            file,
            alpha: *alpha,
            seed: config.seed,
            initial_mse: report.initial_loss,
            final_mse: report.final_loss,
        });
    }
    let manifest = SupportManifest {
        pairing: set.pairing.clone(),
        schedule: set.schedule.clone(),
        train: *config,
        models: entries,
    };
    let path = dir.join(SUPPORT_MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .map_err(|e| GadError::io(&path, e))?;
    Ok(manifest)
}

pub fn load_support_set(dir: &Path) -> Result<(Vec<Model>, SupportManifest)> {
    let path = dir.join(SUPPORT_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| GadError::io(&path, e))?;
    let manifest: SupportManifest = serde_json::from_str(&text)?;
    let models = manifest
        .models
        .iter()
        .map(|e| load_checkpoint(&dir.join(&e.file)).map(|c| c.model))
        .collect::<Result<Vec<_>>>()?;
    Ok((models, manifest))
}
