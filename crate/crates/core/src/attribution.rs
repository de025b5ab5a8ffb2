//! Gradient-based attribution maps: Saliency, Deconvolution,
//! Gradient×Input, Guided Backpropagation and Integrated Gradients.
//!
//! Every method returns an H×W map in input-pixel coordinates. Saliency
//! reduces channels by absolute maximum; the others sum signed values so
//! positivity survives the reduction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GadError, Result};
use crate::network::Model;
use crate::ops::ReluBackwardMode;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "saliency")]
    Saliency,
    #[serde(rename = "deconvolution")]
    Deconvolution,
    #[serde(rename = "gradient_x_input")]
    GradientXInput,
    #[serde(rename = "guided_backprop")]
    GuidedBackprop,
    #[serde(rename = "integrated_gradients")]
    IntegratedGradients,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Saliency,
        Method::Deconvolution,
        Method::GradientXInput,
        Method::GuidedBackprop,
        Method::IntegratedGradients,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Saliency => "saliency",
            Method::Deconvolution => "deconvolution",
            Method::GradientXInput => "gradient_x_input",
            Method::GuidedBackprop => "guided_backprop",
            Method::IntegratedGradients => "integrated_gradients",
        }
    }

    /// Short column label used in report tables.
    pub fn short(self) -> &'static str {
        match self {
            Method::Saliency => "S",
            Method::Deconvolution => "D",
            Method::GradientXInput => "GxI",
            Method::GuidedBackprop => "GB",
            Method::IntegratedGradients => "IG",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = GadError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s || m.short().eq_ignore_ascii_case(s))
            .ok_or_else(|| GadError::invalid(format!("unknown attribution method {s:?}")))
    }
}

/// Signed per-pixel importance for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub class: usize,
    pub method: Method,
    pub height: usize,
    pub width: usize,
    /// Row-major, `height * width` values.
    pub values: Vec<f32>,
}

impl AttributionMap {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    /// Row-major indices of strictly positive pixels.
    pub fn positive_support(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn positive_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IgConfig {
    /// `None` means the all-zero image.
    pub baseline: Option<Tensor>,
    pub steps: usize,
}

impl Default for IgConfig {
    fn default() -> Self {
        IgConfig {
            baseline: None,
            steps: 32,
        }
    }
}

impl IgConfig {
    pub fn with_steps(steps: usize) -> Self {
        IgConfig {
            steps,
            ..Self::default()
        }
    }
}

fn check_class(model: &Model, class: usize) -> Result<()> {
    let classes = model.num_classes();
    if class >= classes {
        return Err(GadError::ClassOutOfRange {
            index: class,
            classes,
        });
    }
    Ok(())
}

/// `∂ logits[class] / ∂ image` with the given ReLU backward rule.
pub fn input_gradient(
    model: &Model,
    image: &Tensor,
    class: usize,
    mode: ReluBackwardMode,
) -> Result<Tensor> {
    check_class(model, class)?;
    let trace = model.forward_trace(image)?;
    let mut seed = Tensor::zeros(trace.output.shape());
    seed.data_mut()[class] = 1.0;
    let (g, _) = model.backward(&trace, &seed, mode, false)?;
    Ok(g)
}

fn spatial(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(GadError::shape(format!(
            "expected [C,H,W] image, got {s:?}"
        ))),
    }
}

fn reduce_sum(t: &Tensor, class: usize, method: Method) -> Result<AttributionMap> {
    let (c, h, w) = spatial(t)?;
    let mut values = vec![0.0f32; h * w];
    for ch in 0..c {
        for (v, x) in values
            .iter_mut()
            .zip(&t.data()[ch * h * w..(ch + 1) * h * w])
        {
            *v += x;
        }
    }
    Ok(AttributionMap {
        class,
        method,
        height: h,
        width: w,
        values,
    })
}

pub fn saliency(model: &Model, image: &Tensor, class: usize) -> Result<AttributionMap> {
    let g = input_gradient(model, image, class, ReluBackwardMode::Standard)?;
    let (c, h, w) = spatial(&g)?;
    let mut values = vec![0.0f32; h * w];
    for ch in 0..c {
        for (v, x) in values
            .iter_mut()
            .zip(&g.data()[ch * h * w..(ch + 1) * h * w])
        {
            *v = v.max(x.abs());
        }
    }
    Ok(AttributionMap {
        class,
        method: Method::Saliency,
        height: h,
        width: w,
        values,
    })
}

pub fn deconvolution(model: &Model, image: &Tensor, class: usize) -> Result<AttributionMap> {
    let g = input_gradient(model, image, class, ReluBackwardMode::Deconv)?;
    reduce_sum(&g, class, Method::Deconvolution)
}

pub fn guided_backprop(model: &Model, image: &Tensor, class: usize) -> Result<AttributionMap> {
    let g = input_gradient(model, image, class, ReluBackwardMode::Guided)?;
    reduce_sum(&g, class, Method::GuidedBackprop)
}

pub fn gradient_x_input(model: &Model, image: &Tensor, class: usize) -> Result<AttributionMap> {
    let g = input_gradient(model, image, class, ReluBackwardMode::Standard)?;
    reduce_sum(
        &g.zip_map(image, |a, b| a * b)?,
        class,
        Method::GradientXInput,
    )
}

/// Midpoint-rule path integral from the baseline to `image`, times
/// `(image - baseline)`, channel-summed.
pub fn integrated_gradients(
    model: &Model,
    image: &Tensor,
    class: usize,
    cfg: &IgConfig,
) -> Result<AttributionMap> {
    if cfg.steps == 0 {
        return Err(GadError::invalid(
            "integrated gradients needs at least one step",
        ));
    }
    let zero;
    let baseline = match &cfg.baseline {
        Some(b) => {
            b.same_shape(image, "IG baseline")?;
            b
        }
        None => {
            zero = Tensor::zeros(image.shape());
            &zero
        }
    };
    let delta = image.zip_map(baseline, |x, b| x - b)?;
    // Accumulated in f64 so long step counts do not drift.
    let mut total = vec![0.0f64; image.len()];
    let mut point = baseline.clone();
    for t in 0..cfg.steps {
        let frac = (t as f32 + 0.5) / cfg.steps as f32;
        for ((p, &b), &d) in point
            .data_mut()
            .iter_mut()
            .zip(baseline.data())
            .zip(delta.data())
        {
            *p = b + frac * d;
        }
        let g = input_gradient(model, &point, class, ReluBackwardMode::Standard)?;
        for (acc, &v) in total.iter_mut().zip(g.data()) {
            *acc += v as f64;
        }
    }
    let steps = cfg.steps as f64;
    let attr = Tensor::new(
        image.shape().to_vec(),
        total
            .iter()
            .zip(delta.data())
            .map(|(&g, &d)| (g / steps * d as f64) as f32)
            .collect(),
    )?;
    reduce_sum(&attr, class, Method::IntegratedGradients)
}

/// Dispatches to the chosen method.
pub fn explain(
    model: &Model,
    image: &Tensor,
    class: usize,
    method: Method,
    ig: &IgConfig,
) -> Result<AttributionMap> {
    let map = match method {
        Method::Saliency => saliency(model, image, class),
        Method::Deconvolution => deconvolution(model, image, class),
        Method::GradientXInput => gradient_x_input(model, image, class),
        Method::GuidedBackprop => guided_backprop(model, image, class),
        Method::IntegratedGradients => integrated_gradients(model, image, class, ig),
    }?;
    if map.values.iter().any(|v| !v.is_finite()) {
        return Err(GadError::NonFinite("attribution"));
    }
    Ok(map)
}
