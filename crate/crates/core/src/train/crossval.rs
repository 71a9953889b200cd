use std::cell::RefCell;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{label_counts, predict_class, train_model, class_weights, EpochStats, Sample, TrainConfig};
use crate::data::augment::AugmentConfig;
use crate::data::split::{make_splits, SplitSpec};
use crate::data::{DatasetManifest, Volume};
use crate::error::{Error, Result};
use crate::metrics::{average_confusion, per_class_metrics, ConfusionMatrix, MetricsReport};
use crate::models::{build_model, transfer_load, ArchitectureKind, Checkpoint, Model, ModelConfig, SurgeryReport};
use crate::seed;

/// A classifier that can be trained from scratch for one fold.
pub trait FoldModel {
    fn fit(&mut self, train: &[Sample]) -> Result<()>;
    fn predict(&mut self, volume: &Volume) -> Result<usize>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population (ddof = 0) standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub label: String,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_specificity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValSummary {
    pub folds: usize,
    pub per_class: Vec<ClassSummary>,
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    pub weighted_f1: MeanStd,
    pub mean_confusion_counts: Vec<Vec<f64>>,
    pub mean_confusion_rates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub folds: Vec<FoldResult>,
    pub summary: CrossValSummary,
}

fn summarize(classes: &[String], folds: &[FoldResult]) -> Result<CrossValSummary> {
    let column = |f: &dyn Fn(&FoldResult) -> f64| folds.iter().map(f).collect::<Vec<f64>>();
    let per_class = classes
        .iter()
        .enumerate()
        .map(|(c, label)| {
            let f1 = MeanStd::of(&column(&|r| r.metrics.per_class[c].f1));
            ClassSummary {
                label: label.clone(),
                mean_f1: f1.mean,
                std_f1: f1.std,
                mean_precision: MeanStd::of(&column(&|r| r.metrics.per_class[c].precision)).mean,
                mean_recall: MeanStd::of(&column(&|r| r.metrics.per_class[c].recall)).mean,
                mean_specificity: MeanStd::of(&column(&|r| r.metrics.per_class[c].specificity)).mean,
            }
        })
        .collect();
    let matrices: Vec<ConfusionMatrix> = folds.iter().map(|f| f.confusion.clone()).collect();
    let (counts, rates) = average_confusion(&matrices)?;
    Ok(CrossValSummary {
        folds: folds.len(),
        per_class,
        accuracy: MeanStd::of(&column(&|r| r.accuracy)),
        macro_f1: MeanStd::of(&column(&|r| r.metrics.macro_f1)),
        weighted_f1: MeanStd::of(&column(&|r| r.metrics.weighted_f1)),
        mean_confusion_counts: counts,
        mean_confusion_rates: rates,
    })
}

/// Trains and scores a fresh model per split. `make_model(fold)` builds the
/// untrained model of each fold.
pub fn cross_validate<M: FoldModel>(
    samples: &[Sample],
    classes: &[String],
    splits: &[SplitSpec],
    mut make_model: impl FnMut(usize) -> Result<M>,
) -> Result<CrossValReport> {
    if splits.is_empty() {
        return Err(Error::Parameter("cross-validation needs at least one split".into()));
    }
    let by_id: HashMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut folds = Vec::with_capacity(splits.len());
    for split in splits {
        let fold = split.fold;
        let wrap = |e: Error| Error::Fold {
            fold,
            source: Box::new(e),
        };
        let pick = |ids: &[String]| -> Result<Vec<Sample>> {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .map(|s| (*s).clone())
                        .ok_or_else(|| Error::Split(format!("subject '{id}' is not in the dataset")))
                })
                .collect()
        };
        let train = pick(&split.train).map_err(wrap)?;
        let test = pick(&split.test).map_err(wrap)?;
        let counts = label_counts(&train, classes.len());
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(wrap(Error::Split(format!("class '{}' is absent from the training split", classes[c]))));
        }

        let mut run = || -> Result<FoldResult> {
            let mut model = make_model(fold)?;
            model.fit(&train)?;
            let mut cm = ConfusionMatrix::new(classes.len());
            for s in &test {
                cm.update(s.label, model.predict(&s.volume)?)?;
            }
            let metrics = per_class_metrics(&cm)?;
            Ok(FoldResult {
                fold,
                train_size: train.len(),
                test_size: test.len(),
                accuracy: metrics.accuracy,
                confusion: cm,
                metrics,
            })
        };
        folds.push(run().map_err(wrap)?);
    }
    let summary = summarize(classes, &folds)?;
    Ok(CrossValReport { folds, summary })
}

/// A residual network trained with weighted cross-entropy and Adam.
pub struct NetworkFoldModel {
    pub model: Model<f32>,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub history: Vec<EpochStats>,
    pub surgery: Option<SurgeryReport>,
}

impl NetworkFoldModel {
    pub fn new(
        kind: ArchitectureKind,
        model_config: ModelConfig,
        train: TrainConfig,
        augment: AugmentConfig,
        transfer: Option<(&Checkpoint, &[&str])>,
    ) -> Result<Self> {
        let mut model = build_model(kind, model_config, seed::derive(train.seed, &[seed::INIT]))?;
        let surgery = match transfer {
            Some((ckpt, skip)) => Some(transfer_load(&mut model, ckpt, skip)?),
            None => None,
        };
        Ok(NetworkFoldModel {
            model,
            train,
            augment,
            history: Vec::new(),
            surgery,
        })
    }
}

impl FoldModel for NetworkFoldModel {
    fn fit(&mut self, train: &[Sample]) -> Result<()> {
        let weights = class_weights(&label_counts(train, self.model.config.num_classes))?;
        self.history = train_model(&mut self.model, train, &weights, &self.train, &self.augment, |_| {})?;
        Ok(())
    }

    fn predict(&mut self, volume: &Volume) -> Result<usize> {
        predict_class(&mut self.model, volume)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossValConfig {
    pub architecture: ArchitectureKind,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub folds: usize,
    pub train_ratio: f64,
    pub seed: u64,
}

impl Default for CrossValConfig {
    fn default() -> Self {
        CrossValConfig {
            architecture: ArchitectureKind::ResNetMixedConv,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            folds: 3,
            train_ratio: 0.7,
            seed: 0,
        }
    }
}

/// Splits the manifest and cross-validates one architecture. Fold `i`
/// trains with seed `seed + i`.
pub fn cross_validate_network(
    manifest: &DatasetManifest,
    samples: &[Sample],
    config: &CrossValConfig,
    transfer: Option<(&Checkpoint, &[&str])>,
    mut on_epoch: impl FnMut(usize, &EpochStats),
) -> Result<CrossValReport> {
    config.model.validate()?;
    config.train.validate()?;
    config.augment.validate()?;
    let splits = make_splits(manifest, config.folds, config.train_ratio, config.seed)?;
    let histories = RefCell::new(Vec::new());
    let sink = &histories;
    let report = cross_validate(samples, manifest.classes(), &splits, move |fold| {
        let train = TrainConfig {
            seed: config.seed.wrapping_add(fold as u64),
            ..config.train.clone()
        };
        Ok(LoggedFold {
            fold,
            inner: NetworkFoldModel::new(config.architecture, config.model, train, config.augment.clone(), transfer)?,
            sink,
        })
    })?;
    for (fold, history) in histories.borrow().iter() {
        history.iter().for_each(|s| on_epoch(*fold, s));
    }
    Ok(report)
}

struct LoggedFold<'a> {
    fold: usize,
    inner: NetworkFoldModel,
    sink: &'a RefCell<Vec<(usize, Vec<EpochStats>)>>,
}

impl FoldModel for LoggedFold<'_> {
    fn fit(&mut self, train: &[Sample]) -> Result<()> {
        self.inner.fit(train)?;
        self.sink.borrow_mut().push((self.fold, self.inner.history.clone()));
        Ok(())
    }

    fn predict(&mut self, volume: &Volume) -> Result<usize> {
        self.inner.predict(volume)
    }
}
