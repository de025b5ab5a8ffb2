//! The fixed small CNN, its initialization, and the two training loops:
//! softmax classification and regression onto prescribed logit rows.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{GadError, Result};
use crate::loss::{mse_loss, softmax_cross_entropy};
use crate::network::{Architecture, LayerSpec, Model};
use crate::ops::ReluBackwardMode;
use crate::optim::{AdamHyper, AdamState};
use crate::par;
use crate::tensor::Tensor;

pub const INPUT_SIDE: usize = 32;

/// Two conv/ReLU/pool blocks (16 then 32 channels), a 64-unit hidden dense
/// layer, and a linear head with one output per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmallCnnSpec {
    pub channels: usize,
    pub classes: usize,
}

impl SmallCnnSpec {
    pub fn new(channels: usize, classes: usize) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(GadError::invalid(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if classes < 2 {
            return Err(GadError::invalid(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        Ok(SmallCnnSpec { channels, classes })
    }

    pub fn architecture(&self) -> Architecture {
        let pooled = INPUT_SIDE / 4;
        Architecture {
            input_shape: vec![self.channels, INPUT_SIDE, INPUT_SIDE],
            layers: vec![
                LayerSpec::Conv {
                    in_channels: self.channels,
                    out_channels: 16,
                    kernel: 3,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool,
                LayerSpec::Conv {
                    in_channels: 16,
                    out_channels: 32,
                    kernel: 3,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool,
                LayerSpec::Dense {
                    inputs: 32 * pooled * pooled,
                    outputs: 64,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 64,
                    outputs: self.classes,
                },
            ],
        }
    }
}

/// He-normal weights (`σ = √(2/fan_in)`) from a seeded generator; zero biases.
pub fn init_weights(arch: &Architecture, seed: u64) -> Result<Model> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    for (name, shape) in arch.param_layout() {
        let len: usize = shape.iter().product();
        let data = if name.ends_with(".bias") {
            vec![0.0; len]
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt())
                .map_err(|e| GadError::invalid(e.to_string()))?;
            (0..len).map(|_| normal.sample(&mut rng)).collect()
        };
        params.push(Tensor::new(shape, data)?);
    }
    Model::new(arch.clone(), params, seed)
}

/// Pre-softmax outputs for a batch of images, in input order.
pub fn batch_logits(model: &Model, samples: &[Sample]) -> Result<Vec<Tensor>> {
    par::map(samples, |s| model.forward(&s.image))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 4e-5,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(GadError::invalid("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(GadError::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss over the dataset before the first update.
    pub initial_loss: f32,
    /// Mean loss over the dataset after the last update.
    pub final_loss: f32,
    /// Running mean of minibatch losses, one entry per epoch.
    pub epoch_losses: Vec<f32>,
}

type SampleLoss<'a> = dyn Fn(usize, &Tensor) -> Result<(f32, Tensor)> + Sync + 'a;

fn mean_loss(model: &Model, samples: &[Sample], loss: &SampleLoss<'_>) -> Result<f32> {
    let per: Vec<Result<f32>> = par::map_range(samples.len(), |i| {
        let logits = model.forward(&samples[i].image)?;
        Ok(loss(i, &logits)?.0)
    });
    let mut total = 0.0f64;
    for l in per {
        total += l? as f64;
    }
    Ok((total / samples.len() as f64) as f32)
}

/// Minibatch Adam on the mean of `loss` over each batch. Per-sample gradients
/// may be computed concurrently but are summed in sample order, so results
/// are bit-identical with or without the parallel backend.
fn train_loop(
    mut model: Model,
    samples: &[Sample],
    config: &TrainConfig,
    loss: &SampleLoss<'_>,
) -> Result<(Model, TrainReport)> {
    if samples.is_empty() {
        return Err(GadError::EmptyDataset);
    }
    config.validate()?;
    let initial_loss = mean_loss(&model, samples, loss)?;
    let mut adam = AdamState::new(&model.params, AdamHyper::default());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            let per_sample: Vec<Result<(f32, Vec<Tensor>)>> = par::map(batch, |&i| {
                let trace = model.forward_trace(&samples[i].image)?;
                let (l, g) = loss(i, &trace.output)?;
                let (_, grads) = model.backward(&trace, &g, ReluBackwardMode::Standard, true)?;
                Ok((l, grads.expect("requested")))
            });
            let mut sum: Option<Vec<Tensor>> = None;
            for item in per_sample {
                let (l, grads) = item?;
                epoch_total += l as f64;
                match sum.as_mut() {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.add_assign(g)?;
                        }
                    }
                }
            }
            let mut grads = sum.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f32;
            for g in &mut grads {
                g.scale(inv);
            }
            adam.step(&mut model.params, &grads, config.learning_rate)?;
        }
        epoch_losses.push((epoch_total / samples.len() as f64) as f32);
    }
    let final_loss = mean_loss(&model, samples, loss)?;
    Ok((
        model,
        TrainReport {
            initial_loss,
            final_loss,
            epoch_losses,
        },
    ))
}

/// Trains on softmax cross-entropy against the samples' labels.
pub fn train_classifier(
    model: Model,
    samples: &[Sample],
    config: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    let classes = model.num_classes();
    if let Some(s) = samples.iter().find(|s| s.label >= classes) {
        return Err(GadError::ClassOutOfRange {
            index: s.label,
            classes,
        });
    }
    let loss = |i: usize, logits: &Tensor| softmax_cross_entropy(logits, samples[i].label);
    train_loop(model, samples, config, &loss)
}

/// Trains the full logit vector of every sample toward its target row with
/// mean squared error. The report's `final_loss` is the final mean MSE.
pub fn train_regressor(
    init: Model,
    samples: &[Sample],
    targets: &[Vec<f32>],
    config: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    if targets.len() != samples.len() {
        return Err(GadError::shape(format!(
            "{} target rows for {} samples",
            targets.len(),
            samples.len()
        )));
    }
    let m = init.num_classes();
    if let Some(row) = targets.iter().find(|r| r.len() != m) {
        return Err(GadError::shape(format!(
            "target row of length {} for {m} outputs",
            row.len()
        )));
    }
    let rows: Vec<Tensor> = targets
        .iter()
        .map(|r| Tensor::from_vec(r.clone()))
        .collect();
    let loss = |i: usize, logits: &Tensor| mse_loss(logits, &rows[i]);
    train_loop(init, samples, config, &loss)
}

/// Fraction of samples whose argmax logit equals their label.
pub fn accuracy(model: &Model, samples: &[Sample]) -> Result<f32> {
    if samples.is_empty() {
        return Err(GadError::EmptyDataset);
    }
    let logits = batch_logits(model, samples)?;
    let hits = logits
        .iter()
        .zip(samples)
        .filter(|(l, s)| l.argmax() == s.label)
        .count();
    Ok(hits as f32 / samples.len() as f32)
}
