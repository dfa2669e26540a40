//! Artifact files and their training-metadata sidecars.
//!
//! `<model>.nsart` holds the encoded artifact and is byte-identical across
//! reruns with the same inputs and seed. Wall-clock facts go to the
//! `<model>.train.json` sidecar next to it.

use std::fs;
use std::path::{Path, PathBuf};

use natscope_core::flowdata::DeviceModelId;
use natscope_core::iforest::{decode_artifact, encode_artifact, ModelArtifact};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ARTIFACT_EXT: &str = "nsart";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub model: String,
    pub training_time_s: f64,
    pub trained_at_unix_ms: u64,
    pub calibration_skipped: bool,
}

pub fn artifact_path(dir: &Path, model: &DeviceModelId) -> PathBuf {
    dir.join(format!("{model}.{ARTIFACT_EXT}"))
}

pub fn meta_path(artifact: &Path) -> PathBuf {
    artifact.with_extension("train.json")
}

/// Writes through a temporary file so readers never see a partial artifact.
pub fn save_artifact(path: &Path, artifact: &ModelArtifact) -> Result<u64> {
    let bytes = encode_artifact(artifact);
    let tmp = path.with_extension("nsart.tmp");
    fs::write(&tmp, &bytes).map_err(Error::io(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io(path))?;
    Ok(bytes.len() as u64)
}

pub fn load_artifact(path: &Path) -> Result<ModelArtifact> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode_artifact(&bytes).map_err(|source| Error::Artifact { path: path.into(), source })
}

pub fn save_meta(artifact: &Path, meta: &TrainingMeta) -> Result<()> {
    let path = meta_path(artifact);
    let json = serde_json::to_vec_pretty(meta)?;
    fs::write(&path, json).map_err(Error::io(&path))
}

/// `None` when the sidecar is missing or unreadable.
pub fn load_meta(artifact: &Path) -> Option<TrainingMeta> {
    let bytes = fs::read(meta_path(artifact)).ok()?;
    serde_json::from_slice(&bytes).ok()
}

#[derive(Debug, Clone)]
pub struct StoredArtifact {
    pub path: PathBuf,
    pub size_bytes: u64,
    pub artifact: ModelArtifact,
    pub meta: Option<TrainingMeta>,
}

/// Every `*.nsart` in `dir`, sorted by file name.
pub fn load_artifact_dir(dir: &Path) -> Result<Vec<StoredArtifact>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ARTIFACT_EXT))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let artifact = load_artifact(&path)?;
            let size_bytes = fs::metadata(&path).map_err(Error::io(&path))?.len();
            let meta = load_meta(&path);
            Ok(StoredArtifact { path, size_bytes, artifact, meta })
        })
        .collect()
}
