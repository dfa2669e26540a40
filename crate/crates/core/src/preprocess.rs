//! Per-model feature schema: min-max scaling for byte counts and duration,
//! one-hot (dummy) encoding for code-valued features.
//!
//! Vector layout, in order:
//!
//! | block          | width                 |
//! |----------------|-----------------------|
//! | in_bytes       | 1                     |
//! | out_bytes      | 1                     |
//! | flow_duration  | 1                     |
//! | protocol       | `protocol.len()`      |
//! | l4_dst_port    | `l4_dst_port.len()`   |
//! | l7_proto_name  | `l7_proto_name.len()` |
//! | src_tos        | `src_tos.len()`       |
//! | dst_tos        | `dst_tos.len()`       |

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Deref;

use crate::flowdata::{DeviceModelId, FlowDataset, FlowRecord};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PreprocessError {
    #[error("insufficient-data: no training flows")]
    InsufficientData,
    #[error("training flow #{index} is labeled {found:?}, expected {expected}")]
    ForeignLabel {
        index: usize,
        expected: DeviceModelId,
        found: String,
    },
    #[error("invalid schema: {0}")]
    Invalid(&'static str),
}

/// Observed range of one numeric feature on the training set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    fn observe(values: impl Iterator<Item = f64>) -> Option<Self> {
        values.fold(None, |acc, v| match acc {
            None => Some(MinMax { min: v, max: v }),
            Some(m) => Some(MinMax {
                min: m.min.min(v),
                max: m.max.max(v),
            }),
        })
    }

    /// `(x - min) / (max - min)`, unclipped; a constant feature maps to 0.
    pub fn scale(&self, x: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            (x - self.min) / span
        } else {
            0.0
        }
    }
}

/// Category values in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary<T: Ord> {
    values: Vec<T>,
    index: BTreeMap<T, usize>,
}

impl<T: Ord + Clone> Vocabulary<T> {
    pub fn from_values(values: Vec<T>) -> Result<Self, PreprocessError> {
        let mut index = BTreeMap::new();
        for (i, v) in values.iter().enumerate() {
            if index.insert(v.clone(), i).is_some() {
                return Err(PreprocessError::Invalid("duplicate category"));
            }
        }
        Ok(Self { values, index })
    }

    fn fit<'a>(items: impl Iterator<Item = &'a T>) -> Self
    where
        T: 'a,
    {
        let mut values = Vec::new();
        let mut index = BTreeMap::new();
        for v in items {
            if !index.contains_key(v) {
                index.insert(v.clone(), values.len());
                values.push(v.clone());
            }
        }
        Self { values, index }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn position(&self, v: &T) -> Option<usize> {
        self.index.get(v).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    pub model: DeviceModelId,
    pub in_bytes: MinMax,
    pub out_bytes: MinMax,
    pub flow_duration: MinMax,
    pub protocol: Vocabulary<u8>,
    pub l4_dst_port: Vocabulary<u16>,
    pub l7_proto_name: Vocabulary<String>,
    pub src_tos: Vocabulary<u8>,
    pub dst_tos: Vocabulary<u8>,
}

pub const NUMERIC_FEATURES: usize = 3;

impl FeatureSchema {
    pub fn dimension(&self) -> usize {
        NUMERIC_FEATURES
            + self.protocol.len()
            + self.l4_dst_port.len()
            + self.l7_proto_name.len()
            + self.src_tos.len()
            + self.dst_tos.len()
    }

    /// Checks the range invariant; vocabularies are duplicate-free by construction.
    pub fn validate(&self) -> Result<(), PreprocessError> {
        for r in [self.in_bytes, self.out_bytes, self.flow_duration] {
            if !(r.min.is_finite() && r.max.is_finite() && r.min <= r.max) {
                return Err(PreprocessError::Invalid("numeric range"));
            }
        }
        Ok(())
    }

    pub fn transform(&self, flow: &FlowRecord) -> FeatureVector {
        let mut out = Vec::with_capacity(self.dimension());
        self.transform_into(flow, &mut out);
        FeatureVector(out)
    }

    /// Clears `out` and writes the encoded flow into it.
    pub fn transform_into(&self, flow: &FlowRecord, out: &mut Vec<f64>) {
        out.clear();
        out.push(self.in_bytes.scale(flow.in_bytes as f64));
        out.push(self.out_bytes.scale(flow.out_bytes as f64));
        out.push(self.flow_duration.scale(flow.duration_ms() as f64));
        one_hot(out, &self.protocol, &flow.key.ip_protocol);
        one_hot(out, &self.l4_dst_port, &flow.key.dst_port);
        one_hot(out, &self.l7_proto_name, &flow.l7_proto_name);
        one_hot(out, &self.src_tos, &flow.src_tos);
        one_hot(out, &self.dst_tos, &flow.dst_tos);
    }
}

fn one_hot<T: Ord + Clone>(out: &mut Vec<f64>, vocab: &Vocabulary<T>, value: &T) {
    let start = out.len();
    out.resize(start + vocab.len(), 0.0);
    if let Some(i) = vocab.position(value) {
        out[start + i] = 1.0;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Fits the schema on the training flows of one model. Every flow must
/// carry label `model`.
pub fn fit_schema(training: &FlowDataset, model: &DeviceModelId) -> Result<FeatureSchema, PreprocessError> {
    if let Some((index, f)) = training
        .flows
        .iter()
        .enumerate()
        .find(|(_, f)| !f.label.is_model(model))
    {
        return Err(PreprocessError::ForeignLabel {
            index,
            expected: model.clone(),
            found: alloc::format!("{}", f.label),
        });
    }
    let flows: Vec<&FlowRecord> = training.flows.iter().map(|f| &f.flow).collect();
    fit_schema_on(&flows, model)
}

pub fn fit_schema_on(flows: &[&FlowRecord], model: &DeviceModelId) -> Result<FeatureSchema, PreprocessError> {
    let range = |g: fn(&FlowRecord) -> f64| {
        MinMax::observe(flows.iter().map(|f| g(f))).ok_or(PreprocessError::InsufficientData)
    };
    Ok(FeatureSchema {
        model: model.clone(),
        in_bytes: range(|f| f.in_bytes as f64)?,
        out_bytes: range(|f| f.out_bytes as f64)?,
        flow_duration: range(|f| f.duration_ms() as f64)?,
        protocol: Vocabulary::fit(flows.iter().map(|f| &f.key.ip_protocol)),
        l4_dst_port: Vocabulary::fit(flows.iter().map(|f| &f.key.dst_port)),
        l7_proto_name: Vocabulary::fit(flows.iter().map(|f| &f.l7_proto_name)),
        src_tos: Vocabulary::fit(flows.iter().map(|f| &f.src_tos)),
        dst_tos: Vocabulary::fit(flows.iter().map(|f| &f.dst_tos)),
    })
}
