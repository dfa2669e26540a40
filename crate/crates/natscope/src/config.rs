//! Optional TOML defaults for the command line. Every field is optional and
//! a flag given on the command line replaces the file's value.
//!
//! ```toml
//! [paths]
//! data = "data/flows.csv"
//! artifacts = "artifacts"
//! reports = "reports"
//!
//! [train]
//! trees = 100
//! subsample = 256
//! seed = 7
//! percentiles = [10]
//! ratios = [0.7, 0.1, 0.2]
//!
//! [detect]
//! policy = "log,notify_stub"
//! threshold = "p10"
//!
//! [collector]
//! bind = "0.0.0.0"
//! port = 2055
//!
//! [synth]
//! scenario = "separable-13"
//! ```

use std::fs;
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub detect: DetectSection,
    #[serde(default)]
    pub collector: CollectorSection,
    #[serde(default)]
    pub synth: SynthSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub artifacts: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub trees: Option<usize>,
    pub subsample: Option<usize>,
    pub seed: Option<u64>,
    pub percentiles: Option<Vec<u8>>,
    pub ratios: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectSection {
    pub policy: Option<String>,
    pub threshold: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectorSection {
    pub bind: Option<IpAddr>,
    pub port: Option<u16>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub scenario: Option<String>,
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Self::parse(&text)
    }
}

/// The flag when given, else the config value, else a usage error naming
/// the flag.
pub fn require<T>(flag: Option<T>, config: Option<T>, name: &str) -> Result<T> {
    flag.or(config).ok_or_else(|| Error::Config(format!("missing --{name}")))
}
