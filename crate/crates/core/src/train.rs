//! Minibatch training loop and held-out prediction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentConfig, AugmentStats};
use crate::data::Dataset;
use crate::ensemble::{argmax, PredictionMeta, PredictionSet};
use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelSpec};
use crate::optim::{OptimConfig, Optimizer};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: Loss,
    pub augment: AugmentConfig,
    /// Drives minibatch shuffling and augmentation draws.
    pub seed: u64,
    /// Evaluate held-out accuracy after every epoch.
    pub track_validation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 30,
            epochs: 20,
            loss: Loss::CrossEntropy,
            augment: AugmentConfig::default(),
            seed: 0,
            track_validation: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        self.augment.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub steps: u64,
    /// Per-step minibatch losses.
    pub step_losses: Vec<f64>,
    pub passed_through: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub optimizer: Optimizer,
    pub history: History,
}

/// Trains on every fold except `held_out` (all samples when `None`).
///
/// Runs `epochs × ⌈n / batch_size⌉` optimizer steps; the last minibatch of
/// an epoch may be short. Deterministic in `(spec.seed, optim, train.seed)`.
pub fn train(
    spec: &ModelSpec,
    dataset: &Dataset,
    held_out: Option<usize>,
    optim: &OptimConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    optim.validate()?;
    if spec.inputs() != dataset.feature_len() || spec.classes() != dataset.class_count {
        return Err(Error::Config(format!(
            "model {:?} does not fit dataset ({} features, {} classes)",
            spec.layers,
            dataset.feature_len(),
            dataset.class_count
        )));
    }
    let (mut order, validation) = dataset.split(held_out)?;
    let mut params = spec.init()?;
    let mut optimizer = Optimizer::new(*optim, &params.tensors)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = History::default();
    let mut aug_stats = AugmentStats::default();
    let width = dataset.feature_len();

    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in epoch_batches(&mut order, &mut rng, cfg.batch_size) {
            let mut data = Vec::with_capacity(chunk.len() * width);
            for &i in chunk {
                let features = &dataset.samples[i].features;
                if cfg.augment.enabled {
                    data.extend(
                        augment(features, &cfg.augment, &mut rng, &mut aug_stats).into_data(),
                    );
                } else {
                    data.extend_from_slice(features.data());
                }
            }
            let batch = Tensor::new(data, vec![chunk.len(), width])?;
            let labels = dataset.labels(chunk);
            let (loss, grads) = params.loss_and_grads(&batch, &labels)?;
            history.steps += 1;
            if !loss.is_finite() || !grads.iter().all(Tensor::is_finite) {
                return Err(Error::Diverged {
                    step: history.steps,
                    loss,
                });
            }
            optimizer.step(&mut params.tensors, &grads)?;
            if !params.is_finite() {
                return Err(Error::Diverged {
                    step: history.steps,
                    loss: f64::NAN,
                });
            }
            history.step_losses.push(loss);
            loss_sum += loss;
            batches += 1;
        }
        let val_accuracy = if cfg.track_validation && !validation.is_empty() {
            Some(held_out_accuracy(&params, dataset, &validation)?)
        } else {
            None
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: if batches > 0 {
                loss_sum / batches as f64
            } else {
                f64::NAN
            },
            val_accuracy,
        });
    }
    history.passed_through = aug_stats.passed_through;
    Ok(TrainOutcome {
        params,
        optimizer,
        history,
    })
}

/// Reshuffles `order` and splits it into minibatches.
fn epoch_batches<'a>(
    order: &'a mut [usize],
    rng: &mut ChaCha8Rng,
    batch_size: usize,
) -> std::slice::Chunks<'a, usize> {
    order.shuffle(rng);
    order.chunks(batch_size)
}

fn held_out_accuracy(params: &ModelParams, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    let out = params.forward(&dataset.batch(indices)?)?;
    let classes = params.classes();
    let correct = out
        .probs
        .data()
        .chunks(classes)
        .zip(indices)
        .filter(|(row, &i)| argmax(row) == dataset.samples[i].label)
        .count();
    Ok(correct as f64 / indices.len() as f64)
}

/// Softmax outputs for the samples of `fold` (every sample when `None`),
/// in dataset order. Metadata other than the fold is left for the caller.
pub fn predict(
    params: &ModelParams,
    dataset: &Dataset,
    fold: Option<usize>,
) -> Result<PredictionSet> {
    let indices = match fold {
        Some(_) => dataset.split(fold)?.1,
        None => (0..dataset.len()).collect(),
    };
    let meta = PredictionMeta {
        fold,
        ..Default::default()
    };
    if indices.is_empty() {
        return Ok(PredictionSet::empty(meta, params.classes()));
    }
    let out = params.forward(&dataset.batch(&indices)?)?;
    PredictionSet::new(
        meta,
        params.classes(),
        out.probs.into_data(),
        dataset.labels(&indices),
    )
}
