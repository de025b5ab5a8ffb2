//! Batch stages shared by the command-line front end and the end-to-end
//! tests: explaining and evaluating whole sample sets, picking the least
//! activated images, and rendering maps and hull overlays.

use std::fmt::Write;

use crate::attribution::{AttributionMap, IgConfig, Method};
use crate::dataset::netpbm::Raster;
use crate::dataset::Sample;
use crate::error::{GadError, Result};
use crate::eval::{compare_maps, Comparison, HullMask, SelectionMode, SensitivityOutput};
use crate::gad::gad_explain;
use crate::network::Model;
use crate::par;
use crate::tensor::Tensor;

/// Original and filtered maps for one (image, method, class).
#[derive(Debug, Clone)]
pub struct ExplainedMap {
    pub id: String,
    pub original: AttributionMap,
    pub filtered: AttributionMap,
}

/// Maps for every sample × method × class, ordered by sample, then method
/// (as given), then class.
pub fn explain_samples(
    original: &Model,
    supports: &[Model],
    samples: &[Sample],
    methods: &[Method],
    classes: &[usize],
    ig: &IgConfig,
) -> Result<Vec<ExplainedMap>> {
    let per_sample = par::map(samples, |s| {
        let mut out = Vec::with_capacity(methods.len() * classes.len());
        for &method in methods {
            for &class in classes {
                let (o, f) = gad_explain(original, supports, method, &s.image, class, ig)?;
                out.push(ExplainedMap {
                    id: s.id.clone(),
                    original: o,
                    filtered: f,
                });
            }
        }
        Ok::<_, GadError>(out)
    });
    let mut all = Vec::new();
    for r in per_sample {
        all.extend(r?);
    }
    Ok(all)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalSettings {
    pub selection: SelectionMode,
    pub output: SensitivityOutput,
}

/// Compares original and filtered hulls for every sample × method, using the
/// sample's labelled class. Ordered by sample, then method.
pub fn evaluate_samples(
    original: &Model,
    supports: &[Model],
    samples: &[Sample],
    methods: &[Method],
    ig: &IgConfig,
    settings: EvalSettings,
) -> Result<Vec<Comparison>> {
    let per_sample = par::map(samples, |s| {
        methods
            .iter()
            .map(|&method| {
                let (o, f) = gad_explain(original, supports, method, &s.image, s.label, ig)?;
                compare_maps(
                    &s.id,
                    original,
                    &s.image,
                    &o,
                    &f,
                    settings.selection,
                    settings.output,
                )
            })
            .collect::<Result<Vec<_>>>()
    });
    let mut all = Vec::new();
    for r in per_sample {
        all.extend(r?);
    }
    Ok(all)
}

/// Indices of the `n` samples of `class` with the lowest logit for that
/// class; ties keep input order.
pub fn least_activated(
    model: &Model,
    samples: &[Sample],
    class: usize,
    n: usize,
) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].label == class)
        .collect();
    let logits = par::map(&idx, |&i| {
        model.forward(&samples[i].image).map(|l| l.data()[class])
    });
    let mut scored = Vec::with_capacity(idx.len());
    for (&i, l) in idx.iter().zip(logits) {
        scored.push((l?, i));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(n).map(|(_, i)| i).collect())
}

/// Grayscale rendering: zero is white and the largest magnitude is black.
pub fn render_map(map: &AttributionMap) -> Raster {
    let peak = map.values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let mut r = Raster::new(map.width, map.height, 1);
    for (p, v) in r.pixels.iter_mut().zip(&map.values) {
        let darkness = if peak > 0.0 { v.abs() / peak } else { 0.0 };
        *p = (255.0 - (255.0 * darkness).round()).clamp(0.0, 255.0) as u8;
    }
    r
}

/// One line per row, comma separated, using the shortest round-trip float
/// formatting.
pub fn map_to_csv(map: &AttributionMap) -> String {
    let mut s = String::new();
    for row in map.values.chunks(map.width) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", line.join(","));
    }
    s
}

pub fn map_values_from_csv(text: &str) -> Result<(usize, usize, Vec<f32>)> {
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    for line in text.lines().filter(|l| !l.is_empty()) {
        let row = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f32>()
                    .map_err(|e| GadError::invalid(format!("bad map value {t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(GadError::shape("ragged map CSV"));
        }
        values.extend(row);
        height += 1;
    }
    match width {
        Some(w) => Ok((height, w, values)),
        None => Err(GadError::invalid("empty map CSV")),
    }
}

/// Mask pixels with at least one 4-neighbour outside the mask or the frame.
pub fn hull_outline(mask: &HullMask) -> Vec<bool> {
    let (h, w) = (mask.height, mask.width);
    let on = |r: isize, c: isize| {
        r >= 0
            && c >= 0
            && (r as usize) < h
            && (c as usize) < w
            && mask.values[r as usize * w + c as usize] == 1
    };
    let mut out = vec![false; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            if on(r, c) && !(on(r - 1, c) && on(r + 1, c) && on(r, c - 1) && on(r, c + 1)) {
                out[r as usize * w + c as usize] = true;
            }
        }
    }
    out
}

pub const ORIGINAL_OUTLINE: [u8; 3] = [255, 0, 0];
pub const FILTERED_OUTLINE: [u8; 3] = [0, 255, 0];

/// Channel-averaged `[0,1]` image as grayscale with the original hull
/// outlined in red and the filtered hull in green (green wins on overlap).
pub fn render_overlay(image: &Tensor, original: &HullMask, filtered: &HullMask) -> Result<Raster> {
    let [c, h, w] = *image.shape() else {
        return Err(GadError::shape("overlay expects a [C,H,W] image"));
    };
    if (h, w) != (original.height, original.width) || (h, w) != (filtered.height, filtered.width) {
        return Err(GadError::shape("overlay masks do not match the image"));
    }
    let mut r = Raster::new(w, h, 3);
    let d = image.data();
    for i in 0..h * w {
        let mean = (0..c).map(|ch| d[ch * h * w + i]).sum::<f32>() / c as f32;
        let g = (mean.clamp(0.0, 1.0) * 255.0).round() as u8;
        r.set_rgb(i / w, i % w, [g, g, g]);
    }
    for (mask, colour) in [(original, ORIGINAL_OUTLINE), (filtered, FILTERED_OUTLINE)] {
        for (i, edge) in hull_outline(mask).into_iter().enumerate() {
            if edge {
                r.set_rgb(i / w, i % w, colour);
            }
        }
    }
    Ok(r)
}
