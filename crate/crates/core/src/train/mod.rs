//! Weighted cross-entropy, Adam, the epoch loop and cross-validation.

mod crossval;
mod loss;
mod optim;

pub use crossval::{
    cross_validate, cross_validate_network, CrossValConfig, CrossValReport, CrossValSummary, FoldModel, FoldResult,
    MeanStd, NetworkFoldModel,
};
pub use loss::{class_weights, weighted_cross_entropy, ClassWeights};
pub use optim::{adam_step, AdamState, BETA1, BETA2, EPS};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::augment::{augment, AugmentConfig};
use crate::data::{preprocess, read_nifti, DatasetManifest, PreprocessConfig, Volume};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::models::Model;
use crate::seed;
use crate::tensor::{Element, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// On-the-fly augmentation of training samples.
    pub augment: bool,
    /// Re-estimate batch-norm running statistics over the training set
    /// after the last epoch.
    pub recalibrate_bn: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            weight_decay: 1e-3,
            batch_size: 1,
            epochs: 100,
            seed: 0,
            augment: true,
            recalibrate_bn: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Parameter(format!("weight decay {} must be >= 0", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// A preprocessed, labelled volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub volume: Volume,
    pub label: usize,
}

/// Reads and preprocesses every manifest entry.
pub fn load_samples(manifest: &DatasetManifest, cfg: &PreprocessConfig) -> Result<Vec<Sample>> {
    manifest
        .entries()
        .iter()
        .zip(manifest.labels())
        .map(|(e, label)| {
            let raw = read_nifti(&e.path)?;
            Ok(Sample {
                id: e.subject_id.clone(),
                volume: preprocess(&raw, cfg)?,
                label,
            })
        })
        .collect()
}

/// Per-class sample counts of a sample set.
pub fn label_counts(samples: &[Sample], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for s in samples {
        counts[s.label] += 1;
    }
    counts
}

/// One progress record per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub samples: usize,
    pub steps: usize,
}

/// Stacks volumes of identical extents into `[N, 1, D, H, W]`.
pub fn stack_volumes<T: Element>(volumes: &[&Volume]) -> Result<Tensor<T>> {
    let first = volumes.first().ok_or_else(|| Error::Contract("empty batch".into()))?;
    let [d, h, w] = first.dims();
    let mut data = Vec::with_capacity(volumes.len() * first.len());
    for v in volumes {
        if v.dims() != first.dims() {
            return Err(Error::Shape(format!(
                "batch mixes extents {:?} and {:?}",
                first.dims(),
                v.dims()
            )));
        }
        data.extend(v.data().iter().map(|&x| T::from_f64(x as f64)));
    }
    Tensor::new(&[volumes.len(), 1, d, h, w], data)
}

fn argmax<T: Element>(row: &[T]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// The shuffled sample order of `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, &[seed::SHUFFLE, epoch as u64]));
    order
}

/// One pass over `samples` in seeded shuffled order: forward, weighted loss,
/// backward and an Adam step per batch.
pub fn train_epoch<T: Element>(
    model: &mut Model<T>,
    samples: &[Sample],
    weights: &ClassWeights,
    state: &mut AdamState<T>,
    config: &TrainConfig,
    augmentation: &AugmentConfig,
    epoch: usize,
) -> Result<EpochStats> {
    if samples.is_empty() {
        return Err(Error::Contract("cannot train on an empty dataset".into()));
    }
    config.validate()?;
    let order = epoch_order(samples.len(), config.seed, epoch);
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut steps = 0usize;
    for (step, batch) in order.chunks(config.batch_size).enumerate() {
        let volumes: Vec<Volume> = batch
            .iter()
            .map(|&i| {
                let v = &samples[i].volume;
                if config.augment && augmentation.enabled {
                    let mut rng = seed::rng(config.seed, &[seed::AUGMENT, epoch as u64, i as u64]);
                    augment(v, augmentation, &mut rng)
                } else {
                    v.clone()
                }
            })
            .collect();
        let targets: Vec<usize> = batch.iter().map(|&i| samples[i].label).collect();
        let input = stack_volumes::<T>(&volumes.iter().collect::<Vec<_>>())?;

        let tape = Tape::new();
        let x = tape.constant(input);
        let mut dropout_rng = seed::rng(config.seed, &[seed::DROPOUT, epoch as u64, step as u64]);
        let logits = model.forward(x, true, &mut dropout_rng).map_err(|e| with_samples(e, batch, samples))?;
        let loss = weighted_cross_entropy(logits, &targets, weights)?;
        let loss_value = loss.value().item()?.as_f64();
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}, step {step}")));
        }
        let grads = tape.backward(loss)?;
        model.store.accumulate(&grads);
        adam_step(&mut model.store, state, config)?;
        model.store.zero_grad();

        let lv = logits.value();
        let classes = lv.shape()[1];
        for (row, &t) in lv.data().chunks(classes).zip(&targets) {
            correct += usize::from(argmax(row) == t);
        }
        loss_sum += loss_value * batch.len() as f64;
        steps += 1;
    }
    Ok(EpochStats {
        epoch,
        mean_loss: loss_sum / samples.len() as f64,
        train_accuracy: correct as f64 / samples.len() as f64,
        samples: samples.len(),
        steps,
    })
}

fn with_samples(err: Error, batch: &[usize], samples: &[Sample]) -> Error {
    let ids: Vec<&str> = batch.iter().map(|&i| samples[i].id.as_str()).collect();
    match err {
        Error::InvalidGeometry(msg) => Error::InvalidGeometry(format!("sample {}: {msg}", ids.join(","))),
        Error::Shape(msg) => Error::Shape(format!("sample {}: {msg}", ids.join(","))),
        other => other,
    }
}

/// Runs `config.epochs` epochs, reporting each through `on_epoch`, then
/// recalibrates batch-norm statistics when `config.recalibrate_bn` is set.
pub fn train_model<T: Element>(
    model: &mut Model<T>,
    samples: &[Sample],
    weights: &ClassWeights,
    config: &TrainConfig,
    augmentation: &AugmentConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    let mut state = AdamState::for_store(&model.store);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let stats = train_epoch(model, samples, weights, &mut state, config, augmentation, epoch)?;
        on_epoch(&stats);
        history.push(stats);
    }
    if config.recalibrate_bn && config.epochs > 0 {
        recalibrate_batchnorm(model, samples, config.batch_size)?;
    }
    Ok(history)
}

/// Replaces the running batch-norm statistics by the plain average of the
/// per-batch statistics over `samples` under the current weights, using
/// unaugmented volumes in `batch_size` chunks. Weights are left untouched.
pub fn recalibrate_batchnorm<T: Element>(model: &mut Model<T>, samples: &[Sample], batch_size: usize) -> Result<()> {
    if samples.is_empty() || batch_size == 0 {
        return Err(Error::Parameter("recalibration needs samples and a batch size >= 1".into()));
    }
    let momenta: Vec<f64> = model.batchnorms_mut().iter().map(|bn| bn.config.momentum).collect();
    model.reset_batchnorm_stats();
    let mut rng = seed::rng(0, &[]);
    let mut result = Ok(());
    for (k, chunk) in samples.chunks(batch_size).enumerate() {
        model.set_batchnorm_momentum(1.0 / (k + 1) as f64);
        let volumes: Vec<&Volume> = chunk.iter().map(|s| &s.volume).collect();
        let tape = Tape::new();
        let step = stack_volumes::<T>(&volumes).and_then(|x| model.forward(tape.constant(x), true, &mut rng));
        if let Err(e) = step {
            result = Err(e);
            break;
        }
    }
    for (bn, m) in model.batchnorms_mut().into_iter().zip(momenta) {
        bn.config.momentum = m;
    }
    result
}

/// Softmax class probabilities of one eval-mode forward pass.
pub fn predict_proba<T: Element>(model: &mut Model<T>, volume: &Volume) -> Result<Vec<f64>> {
    let input = stack_volumes::<T>(&[volume])?;
    let logits = model.predict_logits(&input)?;
    let row: Vec<f64> = logits.data().iter().map(|x| x.as_f64()).collect();
    if row.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / total).collect())
}

pub fn predict_class<T: Element>(model: &mut Model<T>, volume: &Volume) -> Result<usize> {
    let input = stack_volumes::<T>(&[volume])?;
    let logits = model.predict_logits(&input)?;
    Ok(argmax(logits.data()))
}

/// Eval-mode confusion matrix over `samples`.
pub fn evaluate<T: Element>(model: &mut Model<T>, samples: &[Sample]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(model.config.num_classes);
    for s in samples {
        cm.update(s.label, predict_class(model, &s.volume)?)?;
    }
    Ok(cm)
}
