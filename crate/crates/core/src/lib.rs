//! Algorithmic core for detecting IoT device models behind a home NAT from
//! single NetFlow records.
//!
//! Everything here is `no_std` + `alloc`: data model, feature schema,
//! isolation forest, threshold calibration, evaluation metrics, the DNS
//! deNATing baselines and the NetFlow v9 wire codec. File formats, sockets,
//! clocks and the CLI live in the `natscope` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod baselines;
pub mod detect;
pub mod dns;
pub mod eval;
pub mod flowdata;
pub mod iforest;
pub mod netflow;
pub mod preprocess;

pub use detect::{Classification, ThresholdSelector, TrainConfig};
pub use flowdata::{DeviceModelId, FlowDataset, FlowRecord, Label, LabeledFlow, MacAddr};
pub use iforest::{IsolationForest, ModelArtifact};
pub use preprocess::{FeatureSchema, FeatureVector};
