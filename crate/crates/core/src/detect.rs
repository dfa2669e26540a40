//! Per-model training pipeline, percentile threshold calibration and
//! single-flow classification.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::flowdata::{
    chronological_split, filter_model, DatasetSplit, DeviceModelId, FlowDataset, FlowError,
    FlowRecord, SplitRatios,
};
use crate::iforest::{ForestError, ForestParams, IsolationForest, ModelArtifact, FORMAT_VERSION};
use crate::preprocess::{fit_schema, PreprocessError};

/// Upper end of the percentile search range for calibration.
pub const MAX_CALIBRATION_PERCENTILE: u8 = 30;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("insufficient-data: no training flows for {0}")]
    InsufficientData(DeviceModelId),
    #[error("percentile {0} outside [0, 30]")]
    InvalidPercentile(u8),
    #[error("empty validation set")]
    EmptyValidation,
    #[error("validation flow #{0} is not labeled with the artifact's model")]
    ForeignValidationFlow(usize),
    #[error("unknown threshold selector {0:?}")]
    UnknownSelector(String),
    #[error("artifact has no P{0} threshold")]
    Uncalibrated(u8),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: DeviceModelId,
    pub forest: ForestParams,
    pub percentiles: Vec<u8>,
    pub ratios: SplitRatios,
}

impl TrainConfig {
    pub fn new(model: DeviceModelId) -> Self {
        Self {
            model,
            forest: ForestParams::default(),
            percentiles: alloc::vec![10],
            ratios: SplitRatios::default(),
        }
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        match self
            .percentiles
            .iter()
            .find(|&&p| p > MAX_CALIBRATION_PERCENTILE)
        {
            Some(&p) => Err(DetectError::InvalidPercentile(p)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub artifact: ModelArtifact,
    /// True when the model had no validation flows and only the default
    /// threshold is available.
    pub calibration_skipped: bool,
}

/// Split, filter to the model, fit the schema, grow the forest, calibrate.
pub fn train_pipeline(dataset: &FlowDataset, cfg: &TrainConfig) -> Result<TrainOutcome, DetectError> {
    cfg.validate()?;
    let split = chronological_split(dataset, cfg.ratios)?;
    train_from_split(&split, cfg)
}

/// Same as [`train_pipeline`] on an existing split, so many models can
/// share one split.
pub fn train_from_split(split: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutcome, DetectError> {
    cfg.validate()?;
    let training = filter_model(&split.training, &cfg.model);
    let validation = filter_model(&split.validation, &cfg.model);
    train_model(&training, &validation, cfg)
}

/// Trains on flows already restricted to `cfg.model`.
pub fn train_model(
    training: &FlowDataset,
    validation: &FlowDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, DetectError> {
    cfg.validate()?;
    if training.is_empty() {
        return Err(DetectError::InsufficientData(cfg.model.clone()));
    }
    let schema = fit_schema(training, &cfg.model)?;
    let rows: Vec<Vec<f64>> = training.iter().map(|f| schema.transform(&f.flow).0).collect();
    let forest = IsolationForest::train(&rows, &cfg.forest)?;

    let mut artifact = ModelArtifact {
        model: cfg.model.clone(),
        schema,
        forest,
        default_threshold: 0.0,
        calibrated_thresholds: BTreeMap::new(),
        trained_at_ms: training.iter().map(|f| f.flow.flow_end_ms).max().unwrap_or(0),
        training_flow_count: training.len() as u64,
        validation_flow_count: validation.len() as u64,
        format_version: FORMAT_VERSION,
    };
    let calibration_skipped = validation.is_empty();
    if !calibration_skipped {
        calibrate_artifact(&mut artifact, validation, &cfg.percentiles)?;
    }
    Ok(TrainOutcome {
        artifact,
        calibration_skipped,
    })
}

/// Nearest-rank percentile: the `k`-th smallest score with
/// `k = max(1, ceil(percentile / 100 * n))`.
pub fn nearest_rank(scores: &[f64], percentile: u8) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len();
    let k = ((percentile as usize * n).div_ceil(100)).clamp(1, n);
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted[k - 1])
}

/// Normality scores of every flow, in order.
pub fn score_flows<'a>(
    artifact: &ModelArtifact,
    flows: impl IntoIterator<Item = &'a FlowRecord>,
) -> Vec<f64> {
    let mut scorer = Scorer::new(artifact);
    flows.into_iter().map(|f| scorer.normality(f)).collect()
}

pub fn calibrate_threshold(
    artifact: &ModelArtifact,
    validation: &FlowDataset,
    percentile: u8,
) -> Result<f64, DetectError> {
    if percentile > MAX_CALIBRATION_PERCENTILE {
        return Err(DetectError::InvalidPercentile(percentile));
    }
    if let Some(i) = validation.iter().position(|f| !f.label.is_model(&artifact.model)) {
        return Err(DetectError::ForeignValidationFlow(i));
    }
    let scores = score_flows(artifact, validation.iter().map(|f| &f.flow));
    nearest_rank(&scores, percentile).ok_or(DetectError::EmptyValidation)
}

/// Scores validation once and stores a threshold for each percentile.
pub fn calibrate_artifact(
    artifact: &mut ModelArtifact,
    validation: &FlowDataset,
    percentiles: &[u8],
) -> Result<(), DetectError> {
    if let Some(&p) = percentiles.iter().find(|&&p| p > MAX_CALIBRATION_PERCENTILE) {
        return Err(DetectError::InvalidPercentile(p));
    }
    if let Some(i) = validation.iter().position(|f| !f.label.is_model(&artifact.model)) {
        return Err(DetectError::ForeignValidationFlow(i));
    }
    let scores = score_flows(artifact, validation.iter().map(|f| &f.flow));
    for &p in percentiles {
        let th = nearest_rank(&scores, p).ok_or(DetectError::EmptyValidation)?;
        artifact.calibrated_thresholds.insert(p, th);
    }
    artifact.validation_flow_count = validation.len() as u64;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ThresholdSelector {
    Default,
    Percentile(u8),
}

impl FromStr for ThresholdSelector {
    type Err = DetectError;

    /// `default`, or `p<k>` / `P<k>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || DetectError::UnknownSelector(s.into());
        if s.eq_ignore_ascii_case("default") {
            return Ok(ThresholdSelector::Default);
        }
        let digits = s.strip_prefix(['p', 'P']).ok_or_else(unknown)?;
        let p: u8 = digits.parse().map_err(|_| unknown())?;
        if p > MAX_CALIBRATION_PERCENTILE {
            return Err(unknown());
        }
        Ok(ThresholdSelector::Percentile(p))
    }
}

impl fmt::Display for ThresholdSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdSelector::Default => f.write_str("default"),
            ThresholdSelector::Percentile(p) => write!(f, "p{p}"),
        }
    }
}

impl ModelArtifact {
    pub fn threshold(&self, selector: ThresholdSelector) -> Result<f64, DetectError> {
        match selector {
            ThresholdSelector::Default => Ok(self.default_threshold),
            ThresholdSelector::Percentile(p) => self
                .calibrated_thresholds
                .get(&p)
                .copied()
                .ok_or(DetectError::Uncalibrated(p)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub normality: f64,
    pub threshold: f64,
    /// `normality >= threshold`.
    pub is_model: bool,
}

/// Transform + score with a reusable feature buffer.
#[derive(Debug, Clone)]
pub struct Scorer<'a> {
    artifact: &'a ModelArtifact,
    buf: Vec<f64>,
}

impl<'a> Scorer<'a> {
    pub fn new(artifact: &'a ModelArtifact) -> Self {
        Self {
            artifact,
            buf: Vec::with_capacity(artifact.schema.dimension()),
        }
    }

    pub fn artifact(&self) -> &'a ModelArtifact {
        self.artifact
    }

    pub fn normality(&mut self, flow: &FlowRecord) -> f64 {
        self.artifact.schema.transform_into(flow, &mut self.buf);
        self.artifact.forest.normality_score(&self.buf)
    }

    pub fn classify(&mut self, flow: &FlowRecord, threshold: f64) -> Classification {
        let normality = self.normality(flow);
        Classification {
            normality,
            threshold,
            is_model: normality >= threshold,
        }
    }
}

pub fn classify(
    artifact: &ModelArtifact,
    flow: &FlowRecord,
    selector: ThresholdSelector,
) -> Result<Classification, DetectError> {
    let threshold = artifact.threshold(selector)?;
    Ok(Scorer::new(artifact).classify(flow, threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowdata::{FlowKey, Label, LabeledFlow, MacAddr};
    use crate::iforest::{decode_artifact, encode_artifact, ArtifactError};
    use alloc::string::ToString;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> DeviceModelId {
        "plug.TP_Link.HS110".parse().unwrap()
    }

    fn dataset(n: usize, seed: u64) -> FlowDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let port = [53u16, 123, 443][rng.random_range(0..3)];
                let start = i as u64 * 60_000;
                let flow = FlowRecord {
                    key: FlowKey {
                        ip_protocol: if port == 443 { 6 } else { 17 },
                        dst_port: port,
                        ..FlowKey::default()
                    },
                    in_bytes: rng.random_range(100..400),
                    out_bytes: rng.random_range(50..150),
                    l7_proto_name: ["DNS", "NTP", "TLS"][rng.random_range(0..3)].to_string(),
                    flow_start_ms: start,
                    flow_end_ms: start + rng.random_range(0..2000),
                    ..FlowRecord::default()
                };
                LabeledFlow::new(flow, Label::Model(model()), Some(MacAddr([2, 0, 0, 0, 0, 1])))
            })
            .collect()
    }

    #[test]
    fn nearest_rank_by_hand() {
        let scores: Vec<f64> = (-5..5).map(|i| i as f64 / 100.0).rev().collect();
        assert_eq!(nearest_rank(&scores, 10), Some(-0.05));
        assert_eq!(nearest_rank(&scores, 0), Some(-0.05));
        assert_eq!(nearest_rank(&scores, 11), Some(-0.04));
        assert_eq!(nearest_rank(&scores, 30), Some(-0.03));
        assert_eq!(nearest_rank(&[], 10), None);
    }

    #[test]
    fn nearest_rank_count_against_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scores: Vec<f64> = (0..1000).map(|_| rng.random_range(-0.3..0.3)).collect();
        let th = nearest_rank(&scores, 10).unwrap();
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(th, sorted[99]);
        let kept = scores.iter().filter(|&&g| g >= th).count();
        assert!(kept == 900 || kept == 901, "{kept}");
    }

    #[test]
    fn pipeline_produces_default_and_p10() {
        let ds = dataset(1000, 1);
        let cfg = TrainConfig::new(model());
        let out = train_pipeline(&ds, &cfg).unwrap();
        let a = &out.artifact;
        assert!(!out.calibration_skipped);
        assert_eq!(a.default_threshold, 0.0);
        assert_eq!(a.calibrated_thresholds.keys().copied().collect::<Vec<_>>(), vec![10]);
        assert_eq!(a.training_flow_count, 700);
        assert_eq!(a.validation_flow_count, 100);
        assert_eq!(a.trained_at_ms, ds.flows[..700].iter().map(|f| f.flow.flow_end_ms).max().unwrap());

        let again = train_pipeline(&ds, &cfg).unwrap();
        assert_eq!(encode_artifact(&again.artifact), encode_artifact(a));
    }

    #[test]
    fn pipeline_errors_and_skip() {
        let ds = dataset(20, 2);
        let other: DeviceModelId = "plug.TP_Link.HS100".parse().unwrap();
        assert_eq!(
            train_pipeline(&ds, &TrainConfig::new(other.clone())),
            Err(DetectError::InsufficientData(other))
        );
        let mut cfg = TrainConfig::new(model());
        cfg.percentiles = vec![31];
        assert_eq!(train_pipeline(&ds, &cfg), Err(DetectError::InvalidPercentile(31)));

        let cfg = TrainConfig { ratios: SplitRatios::new(0.8, 0.0, 0.2).unwrap(), ..TrainConfig::new(model()) };
        let out = train_pipeline(&ds, &cfg).unwrap();
        assert!(out.calibration_skipped);
        assert!(out.artifact.calibrated_thresholds.is_empty());
    }

    #[test]
    fn calibration_monotone_and_fraction() {
        let ds = dataset(3000, 3);
        let split = chronological_split(&ds, SplitRatios::default()).unwrap();
        let a = train_from_split(&split, &TrainConfig::new(model())).unwrap().artifact;
        let mut prev = f64::NEG_INFINITY;
        for p in (0..=30).step_by(5) {
            let th = calibrate_threshold(&a, &split.validation, p).unwrap();
            assert!(th >= prev);
            prev = th;
        }
        let th = calibrate_threshold(&a, &split.validation, 10).unwrap();
        assert_eq!(th, a.calibrated_thresholds[&10]);
        let scores = score_flows(&a, split.validation.iter().map(|f| &f.flow));
        let n = scores.len() as f64;
        let frac = scores.iter().filter(|&&g| g >= th).count() as f64 / n;
        assert!(frac >= 0.9 - 1.0 / n, "{frac}");
        assert!(calibrate_threshold(&a, &FlowDataset::default(), 10).is_err());
        assert_eq!(calibrate_threshold(&a, &split.validation, 40), Err(DetectError::InvalidPercentile(40)));
    }

    #[test]
    fn selector_parsing_and_classify() {
        assert_eq!("default".parse::<ThresholdSelector>().unwrap(), ThresholdSelector::Default);
        assert_eq!("P10".parse::<ThresholdSelector>().unwrap(), ThresholdSelector::Percentile(10));
        assert_eq!("p0".parse::<ThresholdSelector>().unwrap().to_string(), "p0");
        for bad in ["p", "q10", "p31", "p-1", "10"] {
            assert!(bad.parse::<ThresholdSelector>().is_err(), "{bad}");
        }

        let ds = dataset(1000, 4);
        let a = train_pipeline(&ds, &TrainConfig::new(model())).unwrap().artifact;
        let c = classify(&a, &ds.flows[0].flow, ThresholdSelector::Default).unwrap();
        assert_eq!(c.is_model, c.normality >= 0.0);
        assert_eq!(
            classify(&a, &ds.flows[0].flow, ThresholdSelector::Percentile(20)),
            Err(DetectError::Uncalibrated(20))
        );

        let odd = FlowRecord {
            key: FlowKey { ip_protocol: 47, dst_port: 6666, ..FlowKey::default() },
            in_bytes: 9_000_000,
            out_bytes: 7_000_000,
            l7_proto_name: "GRE".to_string(),
            flow_start_ms: 0,
            flow_end_ms: 3_600_000,
            ..FlowRecord::default()
        };
        assert!(!classify(&a, &odd, ThresholdSelector::Percentile(10)).unwrap().is_model);
    }

    #[test]
    fn artifact_round_trip_and_corruption() {
        let ds = dataset(800, 5);
        let a = train_pipeline(&ds, &TrainConfig::new(model())).unwrap().artifact;
        let bytes = encode_artifact(&a);
        let b = decode_artifact(&bytes).unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let x: Vec<f64> = (0..a.schema.dimension()).map(|_| rng.random_range(-1.0..2.0)).collect();
            assert_eq!(a.forest.anomaly_score(&x).to_bits(), b.forest.anomaly_score(&x).to_bits());
        }

        assert!(matches!(decode_artifact(&bytes[..bytes.len() - 10]), Err(ArtifactError::Corrupt(_))));
        assert!(matches!(decode_artifact(&bytes[..5]), Err(ArtifactError::Corrupt(_))));
        let mut flipped = bytes.clone();
        flipped[40] ^= 0x10;
        assert!(matches!(decode_artifact(&flipped), Err(ArtifactError::Corrupt(_))));

        let mut future = a.clone();
        future.format_version = 99;
        assert_eq!(decode_artifact(&encode_artifact(&future)), Err(ArtifactError::UnsupportedVersion(99)));
    }
}
