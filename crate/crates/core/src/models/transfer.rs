//! Partial weight loading for transfer learning.

use serde::{Deserialize, Serialize};

use super::architecture::Model;
use super::checkpoint::{copy_entry, Checkpoint};
use crate::error::{Error, Result};
use crate::tensor::Element;

/// Prefixes reinitialized by default: the input stem and the classifier head.
pub const DEFAULT_SKIP_PREFIXES: [&str; 2] = ["stem", "fc"];

/// Name accounting of one surgery. `loaded` and `skipped` partition the
/// model's tensor names.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurgeryReport {
    pub loaded: Vec<String>,
    pub skipped: Vec<String>,
    /// Skipped model tensors that the checkpoint does not contain.
    pub missing: Vec<String>,
    /// Checkpoint tensors with no counterpart in the model.
    pub unused: Vec<String>,
}

/// True when `name` is `prefix` itself or lives under `prefix.`.
pub fn has_prefix(name: &str, prefix: &str) -> bool {
    name == prefix || name.strip_prefix(prefix).is_some_and(|rest| rest.starts_with('.'))
}

/// Copies every checkpoint tensor whose name is outside `skip_prefixes`
/// into `model`, leaving skipped tensors at their current values.
///
/// Fails, without modifying the model, if a non-skipped model tensor is
/// absent from the checkpoint or has a different shape.
pub fn transfer_load<T: Element>(
    model: &mut Model<T>,
    ckpt: &Checkpoint,
    skip_prefixes: &[&str],
) -> Result<SurgeryReport> {
    let skip = |name: &str| skip_prefixes.iter().any(|p| has_prefix(name, p));
    let mut report = SurgeryReport::default();
    let mut plan = Vec::new();
    for (_, p) in model.store.iter() {
        let entry = ckpt.get(&p.name);
        if skip(&p.name) {
            report.skipped.push(p.name.clone());
            if entry.is_none() {
                report.missing.push(p.name.clone());
            }
            continue;
        }
        let entry = entry.ok_or_else(|| Error::Surgery {
            name: p.name.clone(),
            reason: "missing from checkpoint".into(),
        })?;
        if entry.shape != p.value.shape() {
            return Err(Error::Surgery {
                name: p.name.clone(),
                reason: format!("shape {:?} in checkpoint, {:?} in model", entry.shape, p.value.shape()),
            });
        }
        plan.push(entry);
        report.loaded.push(p.name.clone());
    }
    report.unused = ckpt
        .entries
        .iter()
        .filter(|e| model.store.id_of(&e.name).is_none())
        .map(|e| e.name.clone())
        .collect();
    for entry in plan {
        copy_entry(model, entry)?;
    }
    Ok(report)
}
