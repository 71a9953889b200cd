use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Serialize;
use serde_json::json;
use spatiospatial::data::split::{read_splits, write_splits};
use spatiospatial::data::{
    generate_synthetic, make_splits, preprocess, read_nifti, write_nifti, DatasetManifest, ManifestEntry,
    PreprocessConfig, SplitSpec,
};
use spatiospatial::metrics::{per_class_metrics, ConfusionMatrix, MetricsReport};
use spatiospatial::models::{
    build_model, load_state, transfer_load, Checkpoint, CheckpointMetadata, Model, ModelConfig, SurgeryReport,
};
use spatiospatial::seed;
use spatiospatial::train::{
    class_weights, cross_validate_network, evaluate, label_counts, load_samples, predict_proba, train_model,
    CrossValConfig, EpochStats, Sample,
};

use crate::config::RunConfig;
use crate::exit::CliError;
use crate::{Cli, Command, EvalArgs, ParamsArgs, PredictArgs, PreprocessArgs, RunArgs, SplitArgs, SynthArgs};

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    let out = cli.out.clone();
    match cli.command {
        Command::Synth(args) => synth(&args, seed.unwrap_or(0), out),
        Command::Preprocess(args) => preprocess_cmd(&args, out),
        Command::Split(args) => split(&args, seed.unwrap_or(0), out),
        Command::Train(args) => train(resolve(cli.config.as_deref(), seed, out, &args)?),
        Command::Crossval(args) => crossval(resolve(cli.config.as_deref(), seed, out, &args)?),
        Command::Eval(args) => eval(&args, cli.config.as_deref(), out),
        Command::Predict(args) => predict(&args, cli.config.as_deref()),
        Command::Params(args) => params(&args),
    }
}

/// Config file, then flags.
fn resolve(config: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>, a: &RunArgs) -> Result<RunConfig> {
    let mut c = RunConfig::load(config)?;
    if let Some(s) = seed {
        c.seed = s;
    }
    if out.is_some() {
        c.out = out;
    }
    if let Some(v) = &a.manifest {
        c.manifest = Some(v.clone());
    }
    if let Some(v) = a.arch {
        c.architecture = v;
    }
    if let Some(v) = a.epochs {
        c.train.epochs = v;
    }
    if let Some(v) = a.lr {
        c.train.learning_rate = v;
    }
    if let Some(v) = a.weight_decay {
        c.train.weight_decay = v;
    }
    if let Some(v) = a.batch_size {
        c.train.batch_size = v;
    }
    if let Some(v) = a.dropout {
        c.model.dropout_p = v;
    }
    if a.no_augment {
        c.train.augment = false;
    }
    if a.no_bn_recalibration {
        c.train.recalibrate_bn = false;
    }
    if let Some(v) = a.folds {
        c.folds = v;
    }
    if let Some(v) = a.ratio {
        c.train_ratio = v;
    }
    if let Some(v) = &a.split_file {
        c.split_file = Some(v.clone());
    }
    if let Some(v) = a.fold {
        c.fold = v;
    }
    if let Some(v) = &a.from_checkpoint {
        c.checkpoint = Some(v.clone());
    }
    if let Some(v) = &a.skip {
        c.skip = v.iter().filter(|s| !s.is_empty()).cloned().collect();
    }
    c.train.seed = c.seed;
    c.validate(true)?;
    Ok(c)
}

fn out_dir(out: Option<PathBuf>) -> Result<PathBuf> {
    RunConfig {
        out,
        ..RunConfig::default()
    }
    .out_dir()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

struct JsonLines(BufWriter<File>);

impl JsonLines {
    fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        Ok(JsonLines(BufWriter::new(f)))
    }

    fn write(&mut self, value: &serde_json::Value) -> Result<()> {
        serde_json::to_writer(&mut self.0, value)?;
        self.0.write_all(b"\n")?;
        self.0.flush()?;
        Ok(())
    }
}

fn epoch_record(fold: Option<usize>, s: &EpochStats) -> serde_json::Value {
    let mut v = json!({ "event": "epoch" });
    if let Some(f) = fold {
        v["fold"] = json!(f);
    }
    if let serde_json::Value::Object(fields) = serde_json::to_value(s).expect("plain struct") {
        v.as_object_mut().expect("object").extend(fields);
    }
    v
}

fn synth(args: &SynthArgs, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let dir = out_dir(out)?;
    let manifest = generate_synthetic(&dir, args.classes, args.per_class, args.extent, seed)?;
    println!(
        "wrote {} volumes and {}",
        manifest.len(),
        dir.join("manifest.csv").display()
    );
    Ok(())
}

fn preprocess_cmd(args: &PreprocessArgs, out: Option<PathBuf>) -> Result<()> {
    let cfg = PreprocessConfig {
        target_spacing: Some(args.spacing),
        percentile_lo: args.lo,
        percentile_hi: args.hi,
    };
    let manifest = DatasetManifest::read_csv(&args.manifest)?;
    let dir = out_dir(out)?;
    let mut entries = Vec::with_capacity(manifest.len());
    for e in manifest.entries() {
        let vol = preprocess(&read_nifti(&e.path)?, &cfg).with_context(|| format!("subject {}", e.subject_id))?;
        let path = dir.join(format!("{}.nii", e.subject_id));
        write_nifti(&vol, &path)?;
        entries.push(ManifestEntry {
            path,
            label: e.label.clone(),
            subject_id: e.subject_id.clone(),
        });
    }
    let processed = DatasetManifest::new(entries)?;
    processed.write_csv(dir.join("manifest.csv"))?;
    println!("preprocessed {} volumes into {}", processed.len(), dir.display());
    Ok(())
}

fn split(args: &SplitArgs, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let manifest = DatasetManifest::read_csv(&args.manifest)?;
    let splits = make_splits(&manifest, args.folds, args.ratio, seed)?;
    let dir = out_dir(out)?;
    let path = dir.join("splits.json");
    write_splits(&splits, &path)?;
    for s in &splits {
        println!("fold {}: {} train, {} test", s.fold, s.train.len(), s.test.len());
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn load_split(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<SplitSpec> {
    let splits = match &cfg.split_file {
        Some(p) => read_splits(p)?,
        None => make_splits(manifest, cfg.folds, cfg.train_ratio, cfg.seed)?,
    };
    splits
        .into_iter()
        .find(|s| s.fold == cfg.fold)
        .ok_or_else(|| CliError::Usage(format!("no split with fold index {}", cfg.fold)).into())
}

fn select(samples: &[Sample], ids: &[String]) -> Result<Vec<Sample>> {
    ids.iter()
        .map(|id| {
            samples
                .iter()
                .find(|s| &s.id == id)
                .cloned()
                .ok_or_else(|| anyhow!(spatiospatial::Error::Split(format!("subject '{id}' is not in the manifest"))))
        })
        .collect()
}

fn checkpoint_with_classes(model: &Model<f32>, classes: &[String]) -> Checkpoint {
    let mut ckpt = Checkpoint::from_model(model);
    if let Some(meta) = ckpt.metadata.as_mut() {
        meta.classes = classes.to_vec();
    }
    ckpt
}

#[derive(Serialize)]
struct TrainReport<'a> {
    architecture: String,
    fold: usize,
    seed: u64,
    classes: &'a [String],
    train_size: usize,
    test_size: usize,
    metrics: &'a MetricsReport,
    confusion: Vec<Vec<u64>>,
    surgery: Option<&'a SurgeryReport>,
}

fn train(cfg: RunConfig) -> Result<()> {
    let manifest = DatasetManifest::read_csv(cfg.manifest.as_ref().expect("validated"))?;
    let dir = cfg.out_dir()?;
    let split = load_split(&cfg, &manifest)?;
    let samples = load_samples(&manifest, &cfg.preprocess)?;
    let train_set = select(&samples, &split.train)?;
    let test_set = select(&samples, &split.test)?;
    let classes = manifest.classes().to_vec();

    let model_config = ModelConfig {
        num_classes: classes.len(),
        ..cfg.model
    };
    let mut model = build_model::<f32>(cfg.architecture, model_config, seed::derive(cfg.seed, &[seed::INIT]))?;
    let mut log = JsonLines::create(&dir.join("epochs.jsonl"))?;
    write_json(&dir.join("config.json"), &cfg)?;

    let surgery = match &cfg.checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let skip: Vec<&str> = cfg.skip.iter().map(String::as_str).collect();
            let report = transfer_load(&mut model, &ckpt, &skip)?;
            log.write(&json!({ "event": "surgery", "checkpoint": path, "report": report }))?;
            Some(report)
        }
        None => None,
    };

    let weights = class_weights(&label_counts(&train_set, classes.len()))?;
    let mut log_err = None;
    train_model(&mut model, &train_set, &weights, &cfg.train, &cfg.augment, |s| {
        eprintln!(
            "epoch {:>4}  loss {:.5}  train acc {:.4}",
            s.epoch, s.mean_loss, s.train_accuracy
        );
        if let Err(e) = log.write(&epoch_record(None, s)) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }

    checkpoint_with_classes(&model, &classes).save(dir.join("model.ckpt"))?;
    let cm = evaluate(&mut model, &test_set)?;
    let metrics = per_class_metrics(&cm)?;
    write_text(&dir.join("confusion.csv"), &cm.to_csv(&classes))?;
    write_json(
        &dir.join("report.json"),
        &TrainReport {
            architecture: cfg.architecture.to_string(),
            fold: split.fold,
            seed: cfg.seed,
            classes: &classes,
            train_size: train_set.len(),
            test_size: test_set.len(),
            metrics: &metrics,
            confusion: cm.rows(),
            surgery: surgery.as_ref(),
        },
    )?;
    print!("{}", metrics.to_table(&classes));
    println!("wrote {}", dir.display());
    Ok(())
}

fn crossval(cfg: RunConfig) -> Result<()> {
    let manifest = DatasetManifest::read_csv(cfg.manifest.as_ref().expect("validated"))?;
    let dir = cfg.out_dir()?;
    let samples = load_samples(&manifest, &cfg.preprocess)?;
    let classes = manifest.classes().to_vec();
    let cv = CrossValConfig {
        architecture: cfg.architecture,
        model: ModelConfig {
            num_classes: classes.len(),
            ..cfg.model
        },
        train: cfg.train.clone(),
        augment: cfg.augment.clone(),
        folds: cfg.folds,
        train_ratio: cfg.train_ratio,
        seed: cfg.seed,
    };
    let ckpt = cfg.checkpoint.as_ref().map(Checkpoint::load).transpose()?;
    let skip: Vec<&str> = cfg.skip.iter().map(String::as_str).collect();
    let transfer = ckpt.as_ref().map(|c| (c, skip.as_slice()));
    write_json(&dir.join("config.json"), &cfg)?;

    let mut records = Vec::new();
    let report = cross_validate_network(&manifest, &samples, &cv, transfer, |fold, s| {
        records.push(epoch_record(Some(fold), s));
    })?;

    let mut log = JsonLines::create(&dir.join("folds.jsonl"))?;
    for r in &records {
        log.write(r)?;
    }
    for fold in &report.folds {
        let mut v = json!({ "event": "fold" });
        if let serde_json::Value::Object(fields) = serde_json::to_value(fold)? {
            v.as_object_mut().expect("object").extend(fields);
        }
        log.write(&v)?;
        write_text(
            &dir.join(format!("confusion_fold{}.csv", fold.fold)),
            &fold.confusion.to_csv(&classes),
        )?;
    }
    write_json(
        &dir.join("summary.json"),
        &json!({
            "architecture": cfg.architecture.to_string(),
            "seed": cfg.seed,
            "classes": classes,
            "summary": report.summary,
        }),
    )?;

    let s = &report.summary;
    println!("{:<12} {:>9} {:>9}", "class", "mean f1", "std f1");
    for c in &s.per_class {
        println!("{:<12} {:>9.4} {:>9.4}", c.label, c.mean_f1, c.std_f1);
    }
    println!("accuracy     {:.4} ± {:.4}", s.accuracy.mean, s.accuracy.std);
    println!("macro f1     {:.4} ± {:.4}", s.macro_f1.mean, s.macro_f1.std);
    println!("weighted f1  {:.4} ± {:.4}", s.weighted_f1.mean, s.weighted_f1.std);
    println!("wrote {}", dir.display());
    Ok(())
}

/// Rebuilds the model recorded in a checkpoint.
fn model_from_checkpoint(path: &Path) -> Result<(Model<f32>, CheckpointMetadata)> {
    let ckpt = Checkpoint::load(path)?;
    let meta = ckpt.metadata.clone().ok_or_else(|| {
        anyhow!(spatiospatial::Error::Format {
            field: "checkpoint metadata".into(),
            reason: format!("{} records no architecture", path.display()),
        })
    })?;
    let mut model = build_model::<f32>(meta.architecture, meta.config, 0)?;
    load_state(&mut model, &ckpt)?;
    Ok((model, meta))
}

fn labels_for(meta: &CheckpointMetadata) -> Vec<String> {
    if meta.classes.len() == meta.config.num_classes {
        meta.classes.clone()
    } else {
        (0..meta.config.num_classes).map(|i| i.to_string()).collect()
    }
}

fn eval(args: &EvalArgs, config: Option<&Path>, out: Option<PathBuf>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let (mut model, meta) = model_from_checkpoint(&args.checkpoint)?;
    let manifest = DatasetManifest::read_csv(&args.manifest)?;
    let mut samples = load_samples(&manifest, &cfg.preprocess)?;
    if let Some(path) = &args.split_file {
        let split = read_splits(path)?
            .into_iter()
            .find(|s| s.fold == args.fold)
            .ok_or_else(|| CliError::Usage(format!("no split with fold index {}", args.fold)))?;
        samples = select(&samples, &split.test)?;
    }
    let labels = labels_for(&meta);
    if manifest.classes().len() != labels.len() {
        return Err(CliError::Usage(format!(
            "manifest has {} classes, checkpoint predicts {}",
            manifest.classes().len(),
            labels.len()
        ))
        .into());
    }
    let cm: ConfusionMatrix = evaluate(&mut model, &samples)?;
    let metrics = per_class_metrics(&cm)?;
    print!("{}", metrics.to_table(&labels));
    if out.is_some() {
        let dir = out_dir(out)?;
        write_json(&dir.join("report.json"), &json!({ "metrics": metrics, "confusion": cm.rows() }))?;
        write_text(&dir.join("confusion.csv"), &cm.to_csv(&labels))?;
    }
    Ok(())
}

fn predict(args: &PredictArgs, config: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let (mut model, meta) = model_from_checkpoint(&args.checkpoint)?;
    if let Some(requested) = args.arch {
        if requested != meta.architecture {
            return Err(CliError::ArchitectureMismatch {
                found: meta.architecture.to_string(),
                requested: requested.to_string(),
            }
            .into());
        }
    }
    let raw = read_nifti(&args.volume)?;
    let vol = preprocess(&raw, &cfg.preprocess)?;
    let [d, h, w] = vol.dims();
    model.check_input_geometry(&[1, meta.config.in_channels, d, h, w])?;
    let probs = predict_proba(&mut model, &vol)?;
    let labels = labels_for(&meta);
    let best = probs
        .iter()
        .enumerate()
        .fold(0, |b, (i, &p)| if p > probs[b] { i } else { b });
    let probabilities: serde_json::Map<String, serde_json::Value> =
        labels.iter().zip(&probs).map(|(l, &p)| (l.clone(), json!(p))).collect();
    println!(
        "{}",
        serde_json::to_string(&json!({
            "label": labels[best],
            "class_index": best,
            "probabilities": probabilities,
        }))?
    );
    Ok(())
}

fn params(args: &ParamsArgs) -> Result<()> {
    let config = ModelConfig {
        num_classes: args.classes,
        in_channels: args.in_channels,
        ..ModelConfig::default()
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let model = build_model::<f32>(args.arch, config, 0)?;
    println!("{}", model.count_parameters());
    for (module, n) in model.parameter_breakdown() {
        println!("  {module:<8} {n:>10}");
    }
    Ok(())
}
