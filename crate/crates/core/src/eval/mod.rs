//! Region-based evaluation of attribution maps: top-pixel selection, convex
//! hull masks, the complexity ratio (hull area of the filtered map over hull
//! area of the original) and occlusion sensitivity (logit change per
//! occluded pixel).

pub mod hull;
pub mod report;

use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionMap, Method};
use crate::error::{GadError, Result};
use crate::loss::softmax;
use crate::network::Model;
use crate::tensor::Tensor;

pub use hull::{convex_hull, hull_area, rasterize_hull, HullMask, HullPolygon, Point};
pub use report::{aggregate_report, EvalReport, ImageResult, MethodAggregate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SelectionMode {
    /// The `ceil(fraction · H · W)` highest-valued pixels.
    TopFraction { fraction: f32 },
    /// Pixels strictly above `ratio · max(map)`.
    ThresholdOfMax { ratio: f32 },
    /// The `ceil(fraction · P)` highest-valued pixels among the `P` strictly
    /// positive ones. Sparse maps would otherwise be padded with zero-valued
    /// pixels chosen only by the row-major tie-break.
    TopFractionPositive { fraction: f32 },
}

/// Half of the positive pixels. With the plain `TopFraction` rule a sparse
/// filtered map is topped up with zero-valued pixels in row-major order, and
/// those arbitrary pixels then dominate the hull.
impl Default for SelectionMode {
    fn default() -> Self {
        SelectionMode::TopFractionPositive { fraction: 0.5 }
    }
}

impl SelectionMode {
    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            SelectionMode::TopFraction { fraction }
            | SelectionMode::TopFractionPositive { fraction } => fraction,
            SelectionMode::ThresholdOfMax { ratio } => ratio,
        };
        if v > 0.0 && v <= 1.0 {
            Ok(())
        } else {
            Err(GadError::invalid(format!(
                "selection parameter must lie in (0, 1], got {v}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelSelection {
    pub mode: SelectionMode,
    /// `(row, col)` pairs in selection order.
    pub pixels: Vec<(usize, usize)>,
}

impl PixelSelection {
    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn points(&self) -> Vec<Point> {
        self.pixels
            .iter()
            .map(|&(r, c)| Point::new(c as i64, r as i64))
            .collect()
    }
}

/// Deterministic selection: ties in value go to the earlier pixel in
/// row-major order. An empty result is possible only for the threshold and
/// positive modes on a map with no positive value.
pub fn select_top_pixels(map: &AttributionMap, mode: SelectionMode) -> Result<PixelSelection> {
    mode.validate()?;
    let n = map.values.len();
    if n == 0 {
        return Err(GadError::invalid("empty attribution map"));
    }
    let w = map.width;
    let top = |mut idx: Vec<usize>, fraction: f32| {
        // The slack keeps f32 fractions such as 0.2 from rounding up a whole pixel.
        let count = (fraction as f64 * idx.len() as f64 - 1e-6).ceil().max(0.0) as usize;
        idx.sort_by(|&a, &b| map.values[b].total_cmp(&map.values[a]).then(a.cmp(&b)));
        idx.truncate(count);
        idx
    };
    let chosen: Vec<usize> = match mode {
        SelectionMode::TopFraction { fraction } => top((0..n).collect(), fraction),
        SelectionMode::TopFractionPositive { fraction } => {
            top((0..n).filter(|&i| map.values[i] > 0.0).collect(), fraction)
        }
        SelectionMode::ThresholdOfMax { ratio } => {
            let max = map.values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let cut = ratio * max;
            (0..n)
                .filter(|&i| map.values[i] > cut && max > 0.0)
                .collect()
        }
    };
    Ok(PixelSelection {
        mode,
        pixels: chosen.into_iter().map(|i| (i / w, i % w)).collect(),
    })
}

/// Hull mask of a selection; an empty selection gives an empty mask.
pub fn selection_mask(sel: &PixelSelection, height: usize, width: usize, class: usize) -> HullMask {
    match convex_hull(&sel.points()) {
        Ok(poly) => rasterize_hull(&poly, height, width, class),
        Err(_) => HullMask::empty(height, width, class),
    }
}

pub fn hull_mask(map: &AttributionMap, mode: SelectionMode) -> Result<HullMask> {
    let sel = select_top_pixels(map, mode)?;
    Ok(selection_mask(&sel, map.height, map.width, map.class))
}

/// Filtered-hull area over original-hull area; below 1 favours the filtered map.
pub fn compute_rc(area_gad: usize, area_orig: usize) -> Result<f32> {
    if area_orig == 0 {
        return Err(GadError::UndefinedRatio("original hull has zero area"));
    }
    Ok(area_gad as f32 / area_orig as f32)
}

/// Multiplies every channel by `1 - mask`.
pub fn occlude(image: &Tensor, mask: &HullMask) -> Result<Tensor> {
    let [c, h, w] = *image.shape() else {
        return Err(GadError::shape("occlude expects a [C,H,W] image"));
    };
    if (h, w) != (mask.height, mask.width) {
        return Err(GadError::shape(format!(
            "image {h}x{w} vs mask {}x{}",
            mask.height, mask.width
        )));
    }
    let mut out = image.clone();
    for ch in 0..c {
        for (v, &m) in out.data_mut()[ch * h * w..(ch + 1) * h * w]
            .iter_mut()
            .zip(&mask.values)
        {
            if m == 1 {
                *v = 0.0;
            }
        }
    }
    Ok(out)
}

/// Model output read by the sensitivity ratio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityOutput {
    #[default]
    Logit,
    Probability,
}

fn output_at(model: &Model, image: &Tensor, class: usize, kind: SensitivityOutput) -> Result<f32> {
    let logits = model.forward(image)?;
    Ok(match kind {
        SensitivityOutput::Logit => logits.data()[class],
        SensitivityOutput::Probability => softmax(&logits).data()[class],
    })
}

/// `|N_a(I) - N_a(I ⊙ (1 - M))| / ΣM`.
pub fn compute_rs(
    model: &Model,
    image: &Tensor,
    mask: &HullMask,
    class: usize,
    kind: SensitivityOutput,
) -> Result<f32> {
    if class >= model.num_classes() {
        return Err(GadError::ClassOutOfRange {
            index: class,
            classes: model.num_classes(),
        });
    }
    let area = mask.area();
    if area == 0 {
        return Err(GadError::UndefinedRatio("occlusion mask is empty"));
    }
    let before = output_at(model, image, class, kind)?;
    let after = output_at(model, &occlude(image, mask)?, class, kind)?;
    Ok((before - after).abs() / area as f32)
}

/// Pixels in the original hull but not in the filtered hull.
pub fn supplementary_mask(m_orig: &HullMask, m_gad: &HullMask) -> Result<HullMask> {
    if (m_orig.height, m_orig.width) != (m_gad.height, m_gad.width) {
        return Err(GadError::shape(
            "supplementary mask of differently sized masks",
        ));
    }
    Ok(HullMask {
        values: m_orig
            .values
            .iter()
            .zip(&m_gad.values)
            .map(|(&o, &g)| o.saturating_sub(g))
            .collect(),
        ..m_orig.clone()
    })
}

/// Intersection over union of a mask with a same-sized `0/1` reference.
pub fn iou(mask: &HullMask, reference: &[u8]) -> Result<f32> {
    if reference.len() != mask.values.len() {
        return Err(GadError::shape("IoU of differently sized masks"));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in mask.values.iter().zip(reference) {
        inter += (a == 1 && b == 1) as usize;
        union += (a == 1 || b == 1) as usize;
    }
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f32 / union as f32)
}

/// Everything measured for one (image, method, class) triple.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub mask_orig: HullMask,
    pub mask_gad: HullMask,
    pub result: ImageResult,
}

/// Builds both hull masks, the complexity ratio, and the two sensitivity
/// ratios against `model` (the original classifier). Undefined ratios are
/// recorded as `None`.
pub fn compare_maps(
    id: &str,
    model: &Model,
    image: &Tensor,
    original: &AttributionMap,
    filtered: &AttributionMap,
    mode: SelectionMode,
    kind: SensitivityOutput,
) -> Result<Comparison> {
    let mask_orig = hull_mask(original, mode)?;
    let mask_gad = hull_mask(filtered, mode)?;
    let sup = supplementary_mask(&mask_orig, &mask_gad)?;
    let class = original.class;
    let defined = |r: Result<f32>| match r {
        Ok(v) => Ok(Some(v)),
        Err(GadError::UndefinedRatio(_)) => Ok(None),
        Err(e) => Err(e),
    };
    let result = ImageResult {
        id: id.to_string(),
        class,
        method: original.method,
        area_orig: mask_orig.area(),
        area_gad: mask_gad.area(),
        rc: defined(compute_rc(mask_gad.area(), mask_orig.area()))?,
        rs_gad: defined(compute_rs(model, image, &mask_gad, class, kind))?,
        rs_sup: defined(compute_rs(model, image, &sup, class, kind))?,
    };
    Ok(Comparison {
        mask_orig,
        mask_gad,
        result,
    })
}

/// Convenience for callers that only need the method tag of a map set.
pub fn methods_of(results: &[ImageResult]) -> Vec<Method> {
    let mut m: Vec<Method> = results.iter().map(|r| r.method).collect();
    m.sort();
    m.dedup();
    m
}
