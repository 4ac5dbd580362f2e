//! Desk-scale trainer: momentum SGD with weight decay over all trainable
//! parameters, a reduce-on-plateau schedule, and a synthetic dataset
//! generator for convergence checks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    apply_running_update, batch_gradients, predict, FamDims, FamError, FamParams, HeadKind,
    Phase, TrainSample,
};
use crate::geometry::OrientationLabel;
use crate::real::Real;
use crate::tensor::Tensor;

/// Optimizer and schedule settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig<F> {
    pub learning_rate: F,
    pub momentum: F,
    pub weight_decay: F,
    pub batch_size: usize,
    pub epochs: usize,
    /// Multiplier applied to the rate when the loss plateaus.
    pub plateau_factor: F,
    /// Epochs without improvement tolerated before reducing the rate.
    pub plateau_patience: usize,
}

impl<F: Real> Default for TrainConfig<F> {
    fn default() -> Self {
        TrainConfig {
            learning_rate: F::cast(0.01),
            momentum: F::cast(0.9),
            weight_decay: F::cast(0.0005),
            batch_size: 32,
            epochs: 30,
            plateau_factor: F::cast(0.1),
            plateau_patience: 4,
        }
    }
}

impl<F: Real> TrainConfig<F> {
    fn validate(&self) -> Result<(), FamError> {
        let nonneg = [
            ("learning_rate", self.learning_rate),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ];
        for (name, value) in nonneg {
            if !(value >= F::zero() && value.as_f64().is_finite()) {
                return Err(FamError::BadConfig {
                    detail: format!("{name} must be finite and non-negative"),
                });
            }
        }
        if self.batch_size < 2 {
            return Err(FamError::BadConfig {
                detail: "batch_size must be at least 2 for batch statistics".into(),
            });
        }
        if self.epochs == 0 {
            return Err(FamError::BadConfig { detail: "epochs must be positive".into() });
        }
        if !(self.plateau_factor > F::zero() && self.plateau_factor < F::one()) {
            return Err(FamError::BadConfig {
                detail: "plateau_factor must lie in (0, 1)".into(),
            });
        }
        if self.plateau_patience == 0 {
            return Err(FamError::BadConfig { detail: "plateau_patience must be positive".into() });
        }
        Ok(())
    }
}

/// Reduce-on-plateau learning-rate schedule.
///
/// An epoch improves when its loss is strictly below the best seen; once
/// `patience` consecutive epochs fail to improve, the rate is multiplied by
/// `factor` (so a stagnant run with patience 4 reduces at epoch 5).
#[derive(Debug, Clone)]
pub struct PlateauScheduler<F> {
    factor: F,
    patience: usize,
    best: Option<F>,
    bad_epochs: usize,
}

impl<F: Real> PlateauScheduler<F> {
    pub fn new(factor: F, patience: usize) -> Self {
        PlateauScheduler { factor, patience, best: None, bad_epochs: 0 }
    }

    /// Feeds one epoch's loss; returns the new rate if a reduction fired.
    pub fn observe(&mut self, loss: F, learning_rate: F) -> Option<F> {
        match self.best {
            Some(best) if loss >= best => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.patience {
                    self.bad_epochs = 0;
                    return Some(learning_rate * self.factor);
                }
                None
            }
            _ => {
                self.best = Some(loss);
                self.bad_epochs = 0;
                None
            }
        }
    }
}

/// Momentum SGD with coupled weight decay:
/// `g = grad + wd * p; v = momentum * v + g; p -= lr * v`.
struct Sgd<F> {
    learning_rate: F,
    momentum: F,
    weight_decay: F,
    velocity: Vec<F>,
}

impl<F: Real> Sgd<F> {
    fn new(config: &TrainConfig<F>, len: usize) -> Self {
        Sgd {
            learning_rate: config.learning_rate,
            momentum: config.momentum,
            weight_decay: config.weight_decay,
            velocity: vec![F::zero(); len],
        }
    }

    fn step(&mut self, params: &mut [F], grads: &[F]) {
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let g = g + self.weight_decay * *p;
            *v = self.momentum * *v + g;
            *p -= self.learning_rate * *v;
        }
    }
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport<F> {
    /// Mean train loss per epoch.
    pub epoch_losses: Vec<F>,
    /// Learning rate in effect during each epoch.
    pub learning_rates: Vec<F>,
    /// Eval-mode accuracy over the dataset after training.
    pub final_accuracy: f64,
}

/// Two linearly separable classes of frontal feature pairs: every channel of
/// both maps has mean +1 for label 1 and -1 for label 0, plus Gaussian noise.
pub fn separable_pairs<F: Real>(
    dims: &FamDims,
    samples: usize,
    noise: f64,
    seed: u64,
) -> Vec<TrainSample<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = dims.channels * dims.height * dims.width;
    let feature = |mean: f64, rng: &mut ChaCha8Rng| {
        let data: Vec<F> = (0..len)
            .map(|_| {
                let draw: f64 = StandardNormal.sample(rng);
                F::cast(mean + noise * draw)
            })
            .collect();
        Tensor::new(dims.feature_shape(), data).expect("noise draws are finite")
    };
    (0..samples)
        .map(|i| {
            let label = (i % 2) as u8;
            let mean = if label == 1 { 1.0 } else { -1.0 };
            TrainSample {
                x_body: feature(mean, &mut rng),
                x_face: Some(feature(mean, &mut rng)),
                orientation: OrientationLabel::Frontal,
                label,
            }
        })
        .collect()
}

/// Eval-mode accuracy of thresholding the logit at zero.
pub fn evaluate_accuracy<F: Real>(
    params: &FamParams<F>,
    dataset: &[TrainSample<F>],
) -> Result<f64, FamError> {
    if dataset.is_empty() {
        return Err(FamError::DatasetTooSmall { size: 0, need: 1 });
    }
    let mut correct = 0usize;
    for sample in dataset {
        let logit = predict(
            &sample.x_body,
            sample.x_face.as_ref(),
            sample.orientation,
            params,
            Phase::Eval,
        )?;
        let prediction = u8::from(logit > F::zero());
        correct += usize::from(prediction == sample.label);
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Trains `params` in place on the dataset and reports the loss curve.
///
/// Samples are shuffled once up front and sliced into fixed mini-batches
/// that every epoch revisits in the same order, which keeps runs with equal
/// seeds bitwise identical (and makes a zero learning rate a strict no-op).
/// A trailing batch with fewer than two samples is dropped, since it cannot
/// provide batch statistics.
pub fn toy_train<F: Real>(
    config: &TrainConfig<F>,
    dataset: &[TrainSample<F>],
    params: &mut FamParams<F>,
    seed: u64,
) -> Result<TrainReport<F>, FamError> {
    config.validate()?;
    if dataset.len() < 2 * config.batch_size {
        return Err(FamError::DatasetTooSmall {
            size: dataset.len(),
            need: 2 * config.batch_size,
        });
    }
    let mut classes = [false; 2];
    for sample in dataset {
        if sample.label > 1 {
            return Err(FamError::InvalidLabel { label: sample.label });
        }
        classes[usize::from(sample.label)] = true;
    }
    if !(classes[0] && classes[1]) {
        return Err(FamError::SingleClass);
    }

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let batches: Vec<&[usize]> =
        order.chunks(config.batch_size).filter(|chunk| chunk.len() >= 2).collect();

    let mut optimizer = Sgd::new(config, params.trainable_len());
    let mut scheduler = PlateauScheduler::new(config.plateau_factor, config.plateau_patience);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut learning_rates = Vec::with_capacity(config.epochs);
    let mut batch_buffer: Vec<TrainSample<F>> = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        learning_rates.push(optimizer.learning_rate);
        let mut weighted_loss = F::zero();
        let mut counted = 0usize;
        for batch in &batches {
            batch_buffer.clear();
            batch_buffer.extend(batch.iter().map(|&i| dataset[i].clone()));
            let backward = batch_gradients(&batch_buffer, params)?;

            if let Some(stats) = &backward.fused_stats {
                apply_running_update(params.head_mut(HeadKind::Fused), stats);
            }
            if let Some(stats) = &backward.body_stats {
                apply_running_update(params.head_mut(HeadKind::Body), stats);
            }

            let mut flat = params.flatten_trainable();
            optimizer.step(&mut flat, &backward.params);
            params.set_trainable(&flat)?;

            weighted_loss += backward.mean_loss * F::cast(batch.len() as f64);
            counted += batch.len();
        }
        let epoch_loss = weighted_loss / F::cast(counted as f64);
        if !epoch_loss.as_f64().is_finite() {
            return Err(FamError::Diverged { epoch: epoch + 1, loss: epoch_loss.as_f64() });
        }
        epoch_losses.push(epoch_loss);
        if let Some(reduced) = scheduler.observe(epoch_loss, optimizer.learning_rate) {
            optimizer.learning_rate = reduced;
        }
    }

    let final_accuracy = evaluate_accuracy(params, dataset)?;
    Ok(TrainReport { epoch_losses, learning_rates, final_accuracy })
}
