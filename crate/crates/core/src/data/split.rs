use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::seed;

/// One train/test partition, listed by subject id in manifest order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fold: usize,
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Number of training subjects for a class of `n`: `round(ratio·n)` kept
/// within `[1, n-1]` so both sides get at least one.
pub fn train_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).clamp(1, n - 1)
}

/// `k` independent class-stratified random splits.
pub fn make_splits(manifest: &DatasetManifest, k: usize, ratio: f64, seed: u64) -> Result<Vec<SplitSpec>> {
    if k == 0 {
        return Err(Error::Parameter("number of folds must be at least 1".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Parameter(format!("train ratio {ratio} must lie in (0, 1)")));
    }
    let labels = manifest.labels();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); manifest.classes().len()];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::Split(format!(
                "class '{}' has {} subject(s); stratified splitting needs at least 2",
                manifest.classes()[c],
                members.len()
            )));
        }
    }

    let mut splits = Vec::with_capacity(k);
    for fold in 0..k {
        // folds are isolated runs seeded with seed + fold
        let mut rng = seed::rng(seed.wrapping_add(fold as u64), &[seed::SPLIT]);
        let mut in_train = vec![false; manifest.len()];
        for members in &by_class {
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut rng);
            for &i in &shuffled[..train_count(members.len(), ratio)] {
                in_train[i] = true;
            }
        }
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, e) in manifest.entries().iter().enumerate() {
            if in_train[i] {
                train.push(e.subject_id.clone());
            } else {
                test.push(e.subject_id.clone());
            }
        }
        splits.push(SplitSpec {
            fold,
            seed,
            train,
            test,
        });
    }
    Ok(splits)
}

pub fn write_splits(splits: &[SplitSpec], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(splits)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_splits(path: impl AsRef<Path>) -> Result<Vec<SplitSpec>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
