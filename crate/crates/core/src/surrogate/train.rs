use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{loss, loss_gradient, LossComponents, LossWeights};
use super::model::{Architecture, Normalization, SurrogateWeights, Trace, REGRESSION_OUTPUTS};
use crate::cycles::{Dataset, Sample, Split};
use crate::electrochem::GRID_LEN;
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Tensor};

/// Samples per parallel work unit. Gradients are reduced chunk by chunk in
/// index order, so results do not depend on the worker count.
pub const GRADIENT_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning-rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub voltage_weight: f64,
    pub failure_weight: f64,
    pub seed: u64,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 5,
            learning_rate: 2e-3,
            lr_decay: 0.5,
            voltage_weight: 10.0,
            failure_weight: 1.0,
            seed: 0,
            architecture: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Invalid(format!(
                "lr decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if !(self.voltage_weight > 0.0) || !(self.failure_weight >= 0.0) {
            return Err(Error::Invalid("loss weights must be positive".into()));
        }
        self.architecture.validate()
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            voltage: self.voltage_weight,
            failure: self.failure_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub steps: usize,
    /// Sample-weighted mean loss components over the epoch.
    pub loss: LossComponents,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub steps: usize,
    pub samples: usize,
}

fn zero_grads(weights: &SurrogateWeights) -> Vec<Tensor> {
    weights.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
}

/// Loss summed over `chunk` (scaled by `scale`) and its gradient.
fn chunk_gradient(
    weights: &SurrogateWeights,
    chunk: &[&Sample],
    lw: LossWeights,
    scale: f64,
) -> Result<(LossComponents, Vec<Tensor>)> {
    let encoded = chunk
        .iter()
        .map(|s| weights.encode(&super::SurrogateInput::from_sample(s)))
        .collect::<Result<Vec<_>>>()?;
    let trace = Trace::forward(weights, &encoded);
    let n = chunk.len();
    let mut d_reg = vec![0.0; n * REGRESSION_OUTPUTS];
    let mut d_logit = vec![0.0; n];
    let mut sum = LossComponents::default();
    let span = weights.normalization.span();
    for (s, sample) in chunk.iter().enumerate() {
        let pred = trace.prediction(weights, &encoded[s], s);
        sum.add(&loss(&pred, sample, lw).scaled(scale));
        let row = &mut d_reg[s * REGRESSION_OUTPUTS..(s + 1) * REGRESSION_OUTPUTS];
        let (d_v, d_p) = loss_gradient(&pred, sample, lw, scale, &mut row[1..1 + 2 * GRID_LEN]);
        row[0] = d_v * span;
        d_logit[s] = d_p * pred.p_fail * (1.0 - pred.p_fail);
    }
    let mut grads = zero_grads(weights);
    trace.backward(weights, &d_reg, &d_logit, &mut grads);
    Ok((sum, grads))
}

/// Mean loss over `samples` and its gradient with respect to every weight tensor.
pub fn batch_gradient(
    weights: &SurrogateWeights,
    samples: &[&Sample],
    lw: LossWeights,
) -> Result<(LossComponents, Vec<Tensor>)> {
    weights.validate()?;
    if samples.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let scale = 1.0 / samples.len() as f64;
    let parts = samples
        .par_chunks(GRADIENT_CHUNK)
        .map(|c| chunk_gradient(weights, c, lw, scale))
        .collect::<Vec<_>>();
    let mut total = LossComponents::default();
    let mut grads = zero_grads(weights);
    for part in parts {
        let (l, g) = part?;
        total.add(&l);
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.add_scaled(gi, 1.0);
        }
    }
    Ok((total, grads))
}

/// Mean loss over `samples` without gradients.
pub fn batch_loss(weights: &SurrogateWeights, samples: &[&Sample], lw: LossWeights) -> Result<LossComponents> {
    if samples.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let inputs: Vec<_> = samples.iter().map(|s| super::SurrogateInput::from_sample(s)).collect();
    let preds = weights.predict_batch(&inputs)?;
    let mut total = LossComponents::default();
    for (p, s) in preds.iter().zip(samples) {
        total.add(&loss(p, s, lw));
    }
    Ok(total.scaled(1.0 / samples.len() as f64))
}

/// Trains on the train split of `dataset`.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(SurrogateWeights, TrainHistory)> {
    let samples = dataset.samples_in(Split::Train);
    let norm = Normalization::new(dataset.manifest.v_cut, dataset.manifest.v_full);
    train_samples(&samples, norm, config)
}

pub fn train_samples(
    samples: &[&Sample],
    normalization: Normalization,
    config: &TrainConfig,
) -> Result<(SurrogateWeights, TrainHistory)> {
    train_samples_with(samples, normalization, config, |_| {})
}

/// [`train_samples`] calling `on_epoch` after every epoch.
pub fn train_samples_with(
    samples: &[&Sample],
    normalization: Normalization,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(SurrogateWeights, TrainHistory)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let mut weights = SurrogateWeights::init(config.architecture, normalization, config.seed)?;
    let mut adam = AdamState::new(
        &weights.tensors,
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let lw = config.loss_weights();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = TrainHistory {
        samples: samples.len(),
        ..TrainHistory::default()
    };
    let mut lr = config.learning_rate;
    for epoch in 0..config.epochs {
        adam.config.lr = lr;
        order.shuffle(&mut rng);
        let mut epoch_loss = LossComponents::default();
        let mut steps = 0;
        for (batch_index, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| samples[i]).collect();
            let (l, grads) = batch_gradient(&weights, &batch, lw)?;
            if !l.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_index,
                    lr,
                });
            }
            adam_step(&mut weights.tensors, &grads, &super::TENSOR_NAMES, &mut adam)?;
            epoch_loss.add(&l.scaled(batch.len() as f64));
            steps += 1;
        }
        let mean = epoch_loss.scaled(1.0 / samples.len() as f64);
        let stats = EpochStats {
            epoch,
            learning_rate: lr,
            steps,
            loss: mean,
            total: mean.total(),
        };
        on_epoch(&stats);
        history.epochs.push(stats);
        history.steps += steps;
        lr *= config.lr_decay;
    }
    // the checkpoint format is single precision; keep the in-memory model identical to it
    weights.round_to_f32();
    Ok((weights, history))
}
