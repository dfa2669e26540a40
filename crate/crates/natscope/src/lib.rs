//! IO, file formats, runtime and CLI plumbing around `natscope-core`.

pub mod cli;
pub mod collector;
pub mod config;
pub mod error;
pub mod ingest;
pub mod report;
pub mod runtime;
pub mod store;
pub mod synth;
