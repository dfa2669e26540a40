//! TPR/FPR, ROC AUC and time-to-detect.

use alloc::vec::Vec;

use crate::detect::{Scorer, ThresholdSelector};
use crate::flowdata::{FlowDataset, LabeledFlow};
use crate::iforest::ModelArtifact;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("insufficient-data: need at least {needed} flows, got {got}")]
    InsufficientData { needed: usize, got: usize },
}

/// Rates are `None` when their denominator class is empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
}

/// `scores` holds `(normality, is_model)`; positive decision is `g >= th`.
pub fn confusion_rates(scores: &[(f64, bool)], threshold: f64) -> Rates {
    let (mut tp, mut p, mut fp, mut n) = (0usize, 0usize, 0usize, 0usize);
    for &(g, is_model) in scores {
        let hit = g >= threshold;
        if is_model {
            p += 1;
            tp += hit as usize;
        } else {
            n += 1;
            fp += hit as usize;
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Rates {
        tpr: ratio(tp, p),
        fpr: ratio(fp, n),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points from sweeping the threshold down through every distinct
/// score; starts at (0, 0) and ends at (1, 1). `None` for single-class input.
pub fn roc_curve(scores: &[(f64, bool)]) -> Option<Vec<RocPoint>> {
    let positives = scores.iter().filter(|s| s.1).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = alloc::vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let g = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == g {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    Some(points)
}

pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Trapezoidal area under [`roc_curve`]; a tied positive/negative pair
/// counts one half.
pub fn roc_auc(scores: &[(f64, bool)]) -> Option<f64> {
    roc_curve(scores).map(|pts| trapezoid_area(&pts))
}

/// Mean inter-arrival time of successive flow starts plus mean flow
/// duration plus per-flow compute, in seconds.
pub fn time_to_detect(model_flows: &FlowDataset, preprocess_s: f64, classify_s: f64) -> Result<f64, EvalError> {
    let n = model_flows.len();
    if n < 2 {
        return Err(EvalError::InsufficientData { needed: 2, got: n });
    }
    let starts = model_flows.iter().map(|f| f.flow.flow_start_ms);
    let (first, last) = starts.fold((u64::MAX, 0u64), |(lo, hi), s| (lo.min(s), hi.max(s)));
    let mean_iat_ms = (last - first) as f64 / (n - 1) as f64;
    let mean_duration_ms =
        model_flows.iter().map(|f| f.flow.duration_ms() as f64).sum::<f64>() / n as f64;
    Ok((mean_iat_ms + mean_duration_ms) / 1000.0 + preprocess_s + classify_s)
}

/// Mean and sample standard deviation (n - 1 denominator) of the finite
/// values. The deviation is `None` for fewer than two values.
pub fn mean_std(values: impl IntoIterator<Item = f64>) -> Option<(f64, Option<f64>)> {
    let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.len() > 1).then(|| {
        libm::sqrt(v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0))
    });
    Some((mean, std))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelMetrics {
    pub positives: usize,
    pub negatives: usize,
    pub default: Rates,
    /// At the artifact's P10 threshold, when calibrated.
    pub p10: Option<Rates>,
    pub roc_auc: Option<f64>,
    pub roc: Option<Vec<RocPoint>>,
}

/// `(normality, is_model)` for every test flow.
pub fn score_test_set(artifact: &ModelArtifact, test: &FlowDataset) -> Vec<(f64, bool)> {
    let mut scorer = Scorer::new(artifact);
    test.iter()
        .map(|f: &LabeledFlow| (scorer.normality(&f.flow), f.label.is_model(&artifact.model)))
        .collect()
}

/// Metrics over a mixed test set; every non-model flow is a negative.
pub fn model_metrics(artifact: &ModelArtifact, scores: &[(f64, bool)]) -> ModelMetrics {
    let positives = scores.iter().filter(|s| s.1).count();
    let roc = roc_curve(scores);
    ModelMetrics {
        positives,
        negatives: scores.len() - positives,
        default: confusion_rates(scores, artifact.default_threshold),
        p10: artifact
            .threshold(ThresholdSelector::Percentile(10))
            .ok()
            .map(|th| confusion_rates(scores, th)),
        roc_auc: roc.as_deref().map(trapezoid_area),
        roc,
    }
}
