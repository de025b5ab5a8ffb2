//! Layer stacks: architecture description, parameters, and the
//! forward/backward passes that thread per-layer caches.

use serde::{Deserialize, Serialize};

use crate::error::{GadError, Result};
use crate::ops::{self, PoolCache, ReluBackwardMode};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    MaxPool,
    /// Fully connected layer; flattens whatever it receives.
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

impl LayerSpec {
    fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
            } => vec![
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            ],
            LayerSpec::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            LayerSpec::Relu | LayerSpec::MaxPool => Vec::new(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool => "pool",
            LayerSpec::Dense { .. } => "dense",
        }
    }
}

/// Input shape `[C, H, W]` plus an ordered layer list ending in a linear head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Checks that shapes chain through every layer and returns the output length.
    pub fn validate(&self) -> Result<usize> {
        let mut shape = self.input_shape.clone();
        if shape.is_empty() || shape.contains(&0) {
            return Err(GadError::invalid(format!("bad input shape {shape:?}")));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match *layer {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    if shape.len() != 3 || shape[0] != in_channels || kernel % 2 == 0 {
                        return Err(GadError::invalid(format!(
                            "layer {i}: conv {in_channels}->{out_channels} k{kernel} on {shape:?}"
                        )));
                    }
                    vec![out_channels, shape[1], shape[2]]
                }
                LayerSpec::Relu => shape,
                LayerSpec::MaxPool => {
                    if shape.len() != 3 || !shape[1].is_multiple_of(2) || !shape[2].is_multiple_of(2) {
                        return Err(GadError::invalid(format!("layer {i}: pool on {shape:?}")));
                    }
                    vec![shape[0], shape[1] / 2, shape[2] / 2]
                }
                LayerSpec::Dense { inputs, outputs } => {
                    let n: usize = shape.iter().product();
                    if n != inputs {
                        return Err(GadError::invalid(format!(
                            "layer {i}: dense expects {inputs} inputs, receives {n}"
                        )));
                    }
                    vec![outputs]
                }
            };
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { outputs, .. }) if *outputs >= 1 => Ok(*outputs),
            _ => Err(GadError::invalid("architecture must end in a dense head")),
        }
    }

    pub fn num_outputs(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Dense { outputs, .. }) => *outputs,
            _ => 0,
        }
    }

    /// `(name, shape)` of every parameter tensor, in declaration order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (shape, suffix) in layer.param_shapes().into_iter().zip(["weight", "bias"]) {
                out.push((format!("{}{i}.{suffix}", layer.name()), shape));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Per-layer forward record consumed by the backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    /// The tensor the layer consumed (conv, dense, pre-activation for ReLU).
    Input(Tensor),
    Pool(PoolCache),
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub caches: Vec<LayerCache>,
    pub output: Tensor,
}

/// An architecture together with its parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub params: Vec<Tensor>,
    pub seed: u64,
}

impl Model {
    pub fn new(arch: Architecture, params: Vec<Tensor>, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = arch.param_layout();
        if layout.len() != params.len() {
            return Err(GadError::shape(format!(
                "architecture declares {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(GadError::shape(format!(
                    "{name}: expected {shape:?}, got {:?}",
                    p.shape()
                )));
            }
            p.check_finite("model parameters")?;
        }
        Ok(Model { arch, params, seed })
    }

    /// All-zero parameters.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        let params = arch
            .param_layout()
            .iter()
            .map(|(_, s)| Tensor::zeros(s))
            .collect();
        Model::new(arch, params, 0)
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_outputs()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.arch
            .param_layout()
            .into_iter()
            .map(|(n, _)| n)
            .collect()
    }

    /// Bit-level equality of architecture and parameters.
    pub fn bit_eq(&self, other: &Model) -> bool {
        self.arch == other.arch
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.bit_eq(b))
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        if image.shape() != self.arch.input_shape.as_slice() {
            return Err(GadError::shape(format!(
                "model expects input {:?}, got {:?}",
                self.arch.input_shape,
                image.shape()
            )));
        }
        Ok(())
    }

    /// Pre-softmax outputs for one image.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        self.check_input(image)?;
        let mut x = image.clone();
        let mut p = 0;
        for layer in &self.arch.layers {
            x = match layer {
                LayerSpec::Conv { .. } => {
                    let y = ops::conv2d_forward(&x, &self.params[p], &self.params[p + 1])?;
                    p += 2;
                    y
                }
                LayerSpec::Relu => ops::relu_forward(&x),
                LayerSpec::MaxPool => ops::maxpool2x2_forward(&x)?.0,
                LayerSpec::Dense { .. } => {
                    let y = ops::dense_forward(&x, &self.params[p], &self.params[p + 1])?;
                    p += 2;
                    y
                }
            };
        }
        Ok(x)
    }

    /// Forward pass that keeps every layer's cache.
    pub fn forward_trace(&self, image: &Tensor) -> Result<Trace> {
        self.check_input(image)?;
        let mut caches = Vec::with_capacity(self.arch.layers.len());
        let mut x = image.clone();
        let mut p = 0;
        for layer in &self.arch.layers {
            let y = match layer {
                LayerSpec::Conv { .. } => {
                    let y = ops::conv2d_forward(&x, &self.params[p], &self.params[p + 1])?;
                    p += 2;
                    y
                }
                LayerSpec::Relu => ops::relu_forward(&x),
                LayerSpec::MaxPool => {
                    let (y, cache) = ops::maxpool2x2_forward(&x)?;
                    caches.push(LayerCache::Pool(cache));
                    x = y;
                    continue;
                }
                LayerSpec::Dense { .. } => {
                    let y = ops::dense_forward(&x, &self.params[p], &self.params[p + 1])?;
                    p += 2;
                    y
                }
            };
            caches.push(LayerCache::Input(std::mem::replace(&mut x, y)));
        }
        Ok(Trace { caches, output: x })
    }

    /// Propagates `grad_out` (gradient w.r.t. the outputs) back to the input.
    /// Parameter gradients are returned when `want_params` is set, in
    /// declaration order.
    pub fn backward(
        &self,
        trace: &Trace,
        grad_out: &Tensor,
        mode: ReluBackwardMode,
        want_params: bool,
    ) -> Result<(Tensor, Option<Vec<Tensor>>)> {
        if trace.caches.len() != self.arch.layers.len() {
            return Err(GadError::invalid(format!(
                "trace holds {} caches for {} layers",
                trace.caches.len(),
                self.arch.layers.len()
            )));
        }
        if grad_out.len() != trace.output.len() {
            return Err(GadError::shape(format!(
                "grad_out has {} values, output has {}",
                grad_out.len(),
                trace.output.len()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.params.len()];
        let mut p = self.params.len();
        let mut g = grad_out.clone();
        for (layer, cache) in self.arch.layers.iter().zip(&trace.caches).rev() {
            g = match (layer, cache) {
                (LayerSpec::Conv { .. }, LayerCache::Input(input)) => {
                    p -= 2;
                    if want_params {
                        let (gx, gw, gb) = ops::conv2d_backward(&g, input, &self.params[p])?;
                        grads[p] = Some(gw);
                        grads[p + 1] = Some(gb);
                        gx
                    } else {
                        ops::conv2d_backward_input(&g, input, &self.params[p])?
                    }
                }
                (LayerSpec::Relu, LayerCache::Input(input)) => ops::relu_backward(&g, input, mode)?,
                (LayerSpec::MaxPool, LayerCache::Pool(pc)) => ops::maxpool2x2_backward(&g, pc)?,
                (LayerSpec::Dense { .. }, LayerCache::Input(input)) => {
                    p -= 2;
                    let (gx, gw, gb) = ops::dense_backward(&g, input, &self.params[p])?;
                    if want_params {
                        grads[p] = Some(gw);
                        grads[p + 1] = Some(gb);
                    }
                    gx
                }
                _ => return Err(GadError::invalid("missing or mismatched layer cache")),
            };
        }
        let params = if want_params {
            Some(
                grads
                    .into_iter()
                    .map(|g| g.expect("every parameter visited"))
                    .collect(),
            )
        } else {
            None
        };
        Ok((g, params))
    }
}
