use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spatiospatial::data::{AugmentConfig, PreprocessConfig};
use spatiospatial::models::{ArchitectureKind, ModelConfig, DEFAULT_SKIP_PREFIXES};
use spatiospatial::train::TrainConfig;

use crate::exit::CliError;

/// Everything a train / crossval / eval run needs. Loaded from `--config`
/// and then overridden field by field from flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub architecture: ArchitectureKind,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub preprocess: PreprocessConfig,
    pub manifest: Option<PathBuf>,
    pub split_file: Option<PathBuf>,
    pub fold: usize,
    pub folds: usize,
    pub train_ratio: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub skip: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            architecture: ArchitectureKind::ResNetMixedConv,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            preprocess: PreprocessConfig::default(),
            manifest: None,
            split_file: None,
            fold: 0,
            folds: 3,
            train_ratio: 0.7,
            seed: 0,
            out: None,
            checkpoint: None,
            skip: DEFAULT_SKIP_PREFIXES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())).into())
    }

    /// Checks values and referenced paths before any work starts.
    pub fn validate(&self, needs_manifest: bool) -> Result<()> {
        let usage = |e: spatiospatial::Error| CliError::Usage(e.to_string());
        self.model.validate().map_err(usage)?;
        self.train.validate().map_err(usage)?;
        self.augment.validate().map_err(usage)?;
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            bail!(CliError::Usage(format!("train ratio {} must lie in (0, 1)", self.train_ratio)));
        }
        if self.folds == 0 {
            bail!(CliError::Usage("folds must be at least 1".into()));
        }
        if needs_manifest {
            match &self.manifest {
                None => bail!(CliError::Usage("a manifest is required (--manifest)".into())),
                Some(p) if !p.is_file() => {
                    bail!(CliError::Usage(format!("manifest {} does not exist", p.display())))
                }
                _ => {}
            }
        }
        for path in [&self.checkpoint, &self.split_file].into_iter().flatten() {
            if !path.is_file() {
                bail!(CliError::Usage(format!("{} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        let dir = self
            .out
            .clone()
            .ok_or_else(|| CliError::Usage("an output directory is required (--out)".into()))?;
        fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(dir)
    }
}
