//! The two DNS-based deNATing baselines: IP-ID slope matching and
//! device-facing domain profiles.

pub mod domain;
pub mod ipid;

use crate::flowdata::DeviceModelId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BaselineError {
    #[error("insufficient-data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },
}

/// Per-model detection rates of a baseline. Rates are `None` when the
/// corresponding class has no samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRates {
    pub model: DeviceModelId,
    pub positives: usize,
    pub negatives: usize,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
}

impl BaselineRates {
    pub(crate) fn from_counts(model: DeviceModelId, tp: usize, p: usize, fp: usize, n: usize) -> Self {
        Self {
            model,
            positives: p,
            negatives: n,
            tpr: (p > 0).then(|| tp as f64 / p as f64),
            fpr: (n > 0).then(|| fp as f64 / n as f64),
        }
    }
}
