use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::CapsNet;
use crate::error::{Error, Result};
use crate::image::{Image, LabeledImage};
use crate::tensor::{Adam, AdamConfig, Scalar, Tape};

/// Mini-batch training settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Drives the per-epoch shuffles.
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 10,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

/// Loss terms of a batch, each averaged over its samples.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub margin: f64,
    pub reconstruction: f64,
}

/// Sample-weighted means of the step losses of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochReport {
    /// One-based epoch number over the model's lifetime.
    pub epoch: usize,
    pub loss: StepLoss,
}

/// Stateful trainer holding the optimizer moments across calls.
pub struct Trainer<T: Scalar = f32> {
    config: TrainConfig,
    optimizer: Adam<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::Domain("batch size must be at least 1".into()));
        }
        Ok(Self {
            config,
            optimizer: Adam::new(config.adam),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One Adam update on a single batch; returns the batch loss before the
    /// update.
    pub fn step(&mut self, model: &mut CapsNet<T>, batch: &[&LabeledImage]) -> Result<StepLoss> {
        if batch.is_empty() {
            return Err(Error::Domain("empty training batch".into()));
        }
        let images: Vec<&Image> = batch.iter().map(|s| &s.image).collect();
        let labels: Vec<usize> = batch.iter().map(|s| usize::from(s.label)).collect();
        let input = model.batch_tensor(&images)?;

        let tape = Tape::new();
        let params = model.bind(&tape, true);
        let graph = model.loss_graph(&params, tape.constant(input), &labels)?;
        let loss = StepLoss {
            total: graph.total.item(),
            margin: graph.margin.item(),
            reconstruction: graph.reconstruction.item(),
        };
        let grads = tape.backward(graph.total)?;
        let mut slots = model.parameters_mut();
        for (slot, var) in slots.iter_mut().zip(&params) {
            if let Some(g) = grads.get(*var) {
                slot.accumulate_grad(g)?;
            }
        }
        self.optimizer.step(&mut slots)?;
        Ok(loss)
    }

    /// One pass over `data` in a freshly shuffled order.
    pub fn epoch(&mut self, model: &mut CapsNet<T>, data: &[LabeledImage]) -> Result<EpochReport> {
        if data.is_empty() {
            return Err(Error::Domain("training set is empty".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = StepLoss::default();
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&LabeledImage> = chunk.iter().map(|&i| &data[i]).collect();
            let loss = self.step(model, &batch)?;
            let w = chunk.len() as f64;
            sum.total += loss.total * w;
            sum.margin += loss.margin * w;
            sum.reconstruction += loss.reconstruction * w;
        }
        if !model.all_finite() {
            return Err(Error::Domain("training diverged to non-finite parameters".into()));
        }
        model.add_epoch();
        let n = data.len() as f64;
        Ok(EpochReport {
            epoch: model.epochs_trained(),
            loss: StepLoss {
                total: sum.total / n,
                margin: sum.margin / n,
                reconstruction: sum.reconstruction / n,
            },
        })
    }
}

/// Trains `model` for `config.epochs` epochs of shuffled mini-batch Adam on
/// the overall loss, calling `on_epoch` after each epoch. Returns the
/// per-epoch mean losses.
pub fn train<T: Scalar>(
    model: &mut CapsNet<T>,
    data: &[LabeledImage],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport, &CapsNet<T>),
) -> Result<Vec<EpochReport>> {
    if data.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    let mut trainer = Trainer::new(*config)?;
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let report = trainer.epoch(model, data)?;
        on_epoch(&report, model);
        history.push(report);
    }
    Ok(history)
}

/// Fraction of samples whose longest capsule matches the label.
pub fn accuracy<T: Scalar>(model: &CapsNet<T>, data: &[LabeledImage]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Domain("cannot score an empty set".into()));
    }
    let images: Vec<&Image> = data.iter().map(|s| &s.image).collect();
    let outputs = model.forward_images(&images)?;
    let hits = outputs
        .iter()
        .zip(data)
        .filter(|(o, s)| o.longest() == usize::from(s.label))
        .count();
    Ok(hits as f64 / data.len() as f64)
}
