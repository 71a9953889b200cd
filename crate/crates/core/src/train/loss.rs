use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::{log_softmax, weighted_nll};
use crate::tensor::{Element, Var};

/// Inverse-frequency class weights `W_c = 1 - n_c / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    pub counts: Vec<usize>,
    pub total: usize,
}

pub fn class_weights(counts: &[usize]) -> Result<ClassWeights> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Parameter("class weights need at least one sample".into()));
    }
    let weights = counts.iter().map(|&c| 1.0 - c as f64 / total as f64).collect();
    Ok(ClassWeights {
        weights,
        counts: counts.to_vec(),
        total,
    })
}

impl ClassWeights {
    /// All-ones weights, i.e. plain cross-entropy.
    pub fn uniform(classes: usize) -> Self {
        ClassWeights {
            weights: vec![1.0; classes],
            counts: vec![0; classes],
            total: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Mean over the batch of `W_y · (-log softmax(logits)[y])`.
pub fn weighted_cross_entropy<'t, T: Element>(
    logits: Var<'t, T>,
    targets: &[usize],
    weights: &ClassWeights,
) -> Result<Var<'t, T>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[1] != weights.len() {
        return Err(Error::Shape(format!(
            "logits {shape:?} do not match {} class weights",
            weights.len()
        )));
    }
    let w: Vec<T> = weights.weights.iter().map(|&x| T::from_f64(x)).collect();
    weighted_nll(log_softmax(logits)?, targets, &w)
}
