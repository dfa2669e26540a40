//! Portable binary container for a trained per-model classifier.
//!
//! All integers little-endian, reals as IEEE-754 bit patterns, strings as
//! `u32` byte length + UTF-8.
//!
//! ```text
//! magic          8   "NSCPART\0"
//! format_version u32
//! body_len       u64
//! body           body_len bytes
//! crc32          u32   IEEE CRC-32 of every preceding byte
//!
//! body:
//!   model                      str
//!   trained_at_ms              u64
//!   training_flow_count        u64
//!   validation_flow_count      u64
//!   default_threshold          f64
//!   calibrated count           u32, then (percentile u8, threshold f64)*
//!   in/out bytes, duration     3 x (min f64, max f64)
//!   protocol vocab             u32 count, u8*
//!   l4_dst_port vocab          u32 count, u16*
//!   l7_proto_name vocab        u32 count, str*
//!   src_tos, dst_tos vocab     u32 count, u8*   (each)
//!   master_seed                u64
//!   subsample_size             u32
//!   dimension                  u32
//!   height_limit               u32
//!   tree count                 u32
//!   per tree: node count u32, then preorder nodes:
//!     0x00 size u32                        external
//!     0x01 dimension u32, split f64        internal
//! ```

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::{height_limit, IsolationForest, IsolationTree, Node};
use crate::flowdata::DeviceModelId;
use crate::preprocess::{FeatureSchema, MinMax, Vocabulary};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"NSCPART\0";
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ArtifactError {
    #[error("corrupt-artifact: {0}")]
    Corrupt(&'static str),
    #[error("unsupported artifact format version {0}")]
    UnsupportedVersion(u32),
    #[error("schema dimension {schema} does not match forest dimension {forest}")]
    DimensionMismatch { schema: usize, forest: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub model: DeviceModelId,
    pub schema: FeatureSchema,
    pub forest: IsolationForest,
    pub default_threshold: f64,
    /// Percentile -> normality-score threshold calibrated on validation flows.
    pub calibrated_thresholds: BTreeMap<u8, f64>,
    /// Latest `flow_end_ms` among the training flows.
    pub trained_at_ms: u64,
    pub training_flow_count: u64,
    pub validation_flow_count: u64,
    pub format_version: u32,
}

impl ModelArtifact {
    pub fn check(&self) -> Result<(), ArtifactError> {
        if self.format_version != FORMAT_VERSION {
            return Err(ArtifactError::UnsupportedVersion(self.format_version));
        }
        if self.schema.dimension() != self.forest.dimension() {
            return Err(ArtifactError::DimensionMismatch {
                schema: self.schema.dimension(),
                forest: self.forest.dimension(),
            });
        }
        Ok(())
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("length fits in u32"));
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn range(&mut self, r: MinMax) {
        self.f64(r.min);
        self.f64(r.max);
    }
}

pub fn encode_artifact(a: &ModelArtifact) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.str(&alloc::format!("{}", a.model));
    w.u64(a.trained_at_ms);
    w.u64(a.training_flow_count);
    w.u64(a.validation_flow_count);
    w.f64(a.default_threshold);
    w.len(a.calibrated_thresholds.len());
    for (&p, &th) in &a.calibrated_thresholds {
        w.u8(p);
        w.f64(th);
    }

    let s = &a.schema;
    w.range(s.in_bytes);
    w.range(s.out_bytes);
    w.range(s.flow_duration);
    w.len(s.protocol.len());
    s.protocol.values().iter().for_each(|&v| w.u8(v));
    w.len(s.l4_dst_port.len());
    s.l4_dst_port.values().iter().for_each(|&v| w.u16(v));
    w.len(s.l7_proto_name.len());
    s.l7_proto_name.values().iter().for_each(|v| w.str(v));
    w.len(s.src_tos.len());
    s.src_tos.values().iter().for_each(|&v| w.u8(v));
    w.len(s.dst_tos.len());
    s.dst_tos.values().iter().for_each(|&v| w.u8(v));

    let f = &a.forest;
    w.u64(f.master_seed());
    w.len(f.subsample_size());
    w.len(f.dimension());
    w.u32(height_limit(f.subsample_size()));
    w.len(f.trees().len());
    for t in f.trees() {
        w.len(t.nodes().len());
        for n in t.nodes() {
            match *n {
                Node::External { size } => {
                    w.u8(0);
                    w.u32(size);
                }
                Node::Internal { dimension, split, .. } => {
                    w.u8(1);
                    w.u32(dimension);
                    w.f64(split);
                }
            }
        }
    }
    let body = w.0;

    let mut out = Vec::with_capacity(HEADER_LEN + body.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&a.format_version.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

const SHORT: ArtifactError = ArtifactError::Corrupt("truncated body");

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ArtifactError> {
        if self.buf.len() < n {
            return Err(SHORT);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], ArtifactError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8, ArtifactError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ArtifactError> {
        self.array().map(u16::from_le_bytes)
    }
    fn u32(&mut self) -> Result<u32, ArtifactError> {
        self.array().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Result<u64, ArtifactError> {
        self.array().map(u64::from_le_bytes)
    }
    fn f64(&mut self) -> Result<f64, ArtifactError> {
        self.u64().map(f64::from_bits)
    }
    /// Element count, bounded by the bytes left so garbage cannot trigger
    /// huge allocations.
    fn count(&mut self, min_elem: usize) -> Result<usize, ArtifactError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_elem) > self.buf.len() {
            return Err(SHORT);
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String, ArtifactError> {
        let n = self.count(1)?;
        let bytes = self.take(n)?;
        core::str::from_utf8(bytes)
            .map(String::from)
            .map_err(|_| ArtifactError::Corrupt("invalid utf-8"))
    }
    fn range(&mut self) -> Result<MinMax, ArtifactError> {
        Ok(MinMax {
            min: self.f64()?,
            max: self.f64()?,
        })
    }
    fn vocab<T: Ord + Clone>(
        &mut self,
        elem: usize,
        mut read: impl FnMut(&mut Self) -> Result<T, ArtifactError>,
    ) -> Result<Vocabulary<T>, ArtifactError> {
        let n = self.count(elem)?;
        let values = (0..n).map(|_| read(self)).collect::<Result<Vec<T>, _>>()?;
        Vocabulary::from_values(values).map_err(|_| ArtifactError::Corrupt("duplicate category"))
    }
}

pub fn decode_artifact(bytes: &[u8]) -> Result<ModelArtifact, ArtifactError> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(ArtifactError::Corrupt("file shorter than header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(ArtifactError::Corrupt("bad magic"));
    }
    let body_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    if body_len != (bytes.len() - HEADER_LEN - 4) as u64 {
        return Err(ArtifactError::Corrupt("length mismatch"));
    }
    let (payload, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(payload) != u32::from_le_bytes(crc.try_into().expect("4 bytes")) {
        return Err(ArtifactError::Corrupt("checksum mismatch"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(ArtifactError::UnsupportedVersion(version));
    }

    let mut r = Reader {
        buf: &payload[HEADER_LEN..],
    };
    let model: DeviceModelId = r
        .str()?
        .parse()
        .map_err(|_| ArtifactError::Corrupt("invalid model id"))?;
    let trained_at_ms = r.u64()?;
    let training_flow_count = r.u64()?;
    let validation_flow_count = r.u64()?;
    let default_threshold = r.f64()?;
    let mut calibrated_thresholds = BTreeMap::new();
    for _ in 0..r.count(9)? {
        let p = r.u8()?;
        calibrated_thresholds.insert(p, r.f64()?);
    }

    let schema = FeatureSchema {
        model: model.clone(),
        in_bytes: r.range()?,
        out_bytes: r.range()?,
        flow_duration: r.range()?,
        protocol: r.vocab(1, Reader::u8)?,
        l4_dst_port: r.vocab(2, Reader::u16)?,
        l7_proto_name: r.vocab(4, Reader::str)?,
        src_tos: r.vocab(1, Reader::u8)?,
        dst_tos: r.vocab(1, Reader::u8)?,
    };
    schema
        .validate()
        .map_err(|_| ArtifactError::Corrupt("invalid schema range"))?;

    let master_seed = r.u64()?;
    let subsample_size = r.u32()? as usize;
    let dimension = r.u32()? as usize;
    let limit = r.u32()?;
    if limit != height_limit(subsample_size) {
        return Err(ArtifactError::Corrupt("height limit"));
    }
    let n_trees = r.count(4)?;
    if n_trees == 0 {
        return Err(ArtifactError::Corrupt("no trees"));
    }
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let n_nodes = r.count(5)?;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let node = match r.u8()? {
                0 => Node::External { size: r.u32()? },
                1 => {
                    let dim = r.u32()?;
                    if dim as usize >= dimension {
                        return Err(ArtifactError::Corrupt("split dimension out of range"));
                    }
                    Node::Internal {
                        dimension: dim,
                        split: r.f64()?,
                        right: 0,
                    }
                }
                _ => return Err(ArtifactError::Corrupt("unknown node tag")),
            };
            nodes.push(node);
        }
        trees.push(
            IsolationTree::from_preorder(nodes, limit)
                .ok_or(ArtifactError::Corrupt("malformed tree"))?,
        );
    }
    if !r.buf.is_empty() {
        return Err(ArtifactError::Corrupt("trailing bytes"));
    }

    let artifact = ModelArtifact {
        model,
        schema,
        forest: IsolationForest::from_parts(trees, subsample_size, master_seed, dimension),
        default_threshold,
        calibrated_thresholds,
        trained_at_ms,
        training_flow_count,
        validation_flow_count,
        format_version: version,
    };
    artifact.check()?;
    Ok(artifact)
}
