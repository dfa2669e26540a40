//! Flow records, device models, labeled datasets, ground-truth labeling of
//! NATed flows and the per-device chronological split.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::net::Ipv4Addr;
use core::str::FromStr;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlowError {
    #[error("invalid device model id {0:?}: expected type.make.version")]
    InvalidModelId(String),
    #[error("invalid MAC address {0:?}")]
    InvalidMac(String),
    #[error("duplicate MAC {0} in inventory")]
    DuplicateMac(MacAddr),
    #[error("duplicate IP {0} in inventory")]
    DuplicateIp(Ipv4Addr),
    #[error("negative duration: end {end} < start {start}")]
    NegativeDuration { start: u64, end: u64 },
    #[error("split ratios must be non-negative and sum to 1, got ({0}, {1}, {2})")]
    InvalidRatios(f64, f64, f64),
    #[error("flow #{0} has no source MAC; chronological split is keyed by MAC")]
    MissingSourceMac(usize),
}

/// An IoT device model: the combination of type, make and version.
///
/// Canonical text form is `type.make.version`, e.g. `webcam.D_Link.DCS_933L`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeviceModelId {
    device_type: String,
    make: String,
    version: String,
}

impl DeviceModelId {
    pub fn new(device_type: &str, make: &str, version: &str) -> Result<Self, FlowError> {
        let ok = |s: &str| !s.is_empty() && !s.contains('.') && !s.chars().any(char::is_whitespace);
        if !(ok(device_type) && ok(make) && ok(version)) {
            return Err(FlowError::InvalidModelId(alloc::format!(
                "{device_type}.{make}.{version}"
            )));
        }
        Ok(Self {
            device_type: device_type.into(),
            make: make.into(),
            version: version.into(),
        })
    }

    pub fn device_type(&self) -> &str {
        &self.device_type
    }

    pub fn make(&self) -> &str {
        &self.make
    }

    pub fn version(&self) -> &str {
        &self.version
    }
}

impl fmt::Display for DeviceModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.device_type, self.make, self.version)
    }
}

impl FromStr for DeviceModelId {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split('.');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(t), Some(m), Some(v), None) => {
                Self::new(t, m, v).map_err(|_| FlowError::InvalidModelId(s.into()))
            }
            _ => Err(FlowError::InvalidModelId(s.into())),
        }
    }
}

/// Ground-truth class of a flow. `non-IoT` is a reserved value, never a model id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Model(DeviceModelId),
    NonIot,
    Unlabeled,
}

impl Label {
    pub const NON_IOT: &'static str = "non-IoT";

    pub fn model(&self) -> Option<&DeviceModelId> {
        match self {
            Label::Model(m) => Some(m),
            _ => None,
        }
    }

    pub fn is_model(&self, m: &DeviceModelId) -> bool {
        self.model() == Some(m)
    }

    /// Parses a label cell: empty means unlabeled.
    pub fn parse(s: &str) -> Result<Self, FlowError> {
        let s = s.trim();
        if s.is_empty() {
            Ok(Label::Unlabeled)
        } else if s.eq_ignore_ascii_case(Self::NON_IOT) {
            Ok(Label::NonIot)
        } else {
            s.parse().map(Label::Model)
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Model(m) => m.fmt(f),
            Label::NonIot => f.write_str(Self::NON_IOT),
            Label::Unlabeled => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddr(pub [u8; 6]);

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl FromStr for MacAddr {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || FlowError::InvalidMac(s.into());
        let mut out = [0u8; 6];
        let mut parts = s.trim().split([':', '-']);
        for byte in out.iter_mut() {
            let part = parts.next().ok_or_else(err)?;
            if part.len() != 2 {
                return Err(err());
            }
            *byte = u8::from_str_radix(part, 16).map_err(|_| err())?;
        }
        if parts.next().is_some() {
            return Err(err());
        }
        Ok(MacAddr(out))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InventoryEntry {
    pub mac: MacAddr,
    pub internal_ip: Ipv4Addr,
    /// `Label::Model` or `Label::NonIot`.
    pub label: Label,
}

/// The lab's IP/MAC/device-model table. Static internal IPs are assumed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeviceInventory {
    entries: Vec<InventoryEntry>,
    by_ip: BTreeMap<Ipv4Addr, usize>,
    by_mac: BTreeMap<MacAddr, usize>,
}

impl DeviceInventory {
    pub fn new(entries: Vec<InventoryEntry>) -> Result<Self, FlowError> {
        let mut by_ip = BTreeMap::new();
        let mut by_mac = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if by_mac.insert(e.mac, i).is_some() {
                return Err(FlowError::DuplicateMac(e.mac));
            }
            if by_ip.insert(e.internal_ip, i).is_some() {
                return Err(FlowError::DuplicateIp(e.internal_ip));
            }
        }
        Ok(Self {
            entries,
            by_ip,
            by_mac,
        })
    }

    pub fn entries(&self) -> &[InventoryEntry] {
        &self.entries
    }

    pub fn by_ip(&self, ip: Ipv4Addr) -> Option<&InventoryEntry> {
        self.by_ip.get(&ip).map(|&i| &self.entries[i])
    }

    pub fn by_mac(&self, mac: MacAddr) -> Option<&InventoryEntry> {
        self.by_mac.get(&mac).map(|&i| &self.entries[i])
    }
}

/// NetFlow aggregation key: interface, addresses, protocol, ports and TOS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowKey {
    pub ingress_interface: u32,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub ip_protocol: u8,
    pub src_port: u16,
    pub dst_port: u16,
    pub tos: u8,
}

impl Default for FlowKey {
    fn default() -> Self {
        Self {
            ingress_interface: 0,
            src_ip: Ipv4Addr::UNSPECIFIED,
            dst_ip: Ipv4Addr::UNSPECIFIED,
            ip_protocol: 0,
            src_port: 0,
            dst_port: 0,
            tos: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowRecord {
    pub key: FlowKey,
    pub in_bytes: u64,
    pub out_bytes: u64,
    pub src_tos: u8,
    pub dst_tos: u8,
    /// Opaque categorical; never re-detected.
    pub l7_proto_name: String,
    pub flow_start_ms: u64,
    pub flow_end_ms: u64,
}

impl Default for FlowRecord {
    fn default() -> Self {
        Self {
            key: FlowKey::default(),
            in_bytes: 0,
            out_bytes: 0,
            src_tos: 0,
            dst_tos: 0,
            l7_proto_name: "unknown".to_string(),
            flow_start_ms: 0,
            flow_end_ms: 0,
        }
    }
}

impl FlowRecord {
    /// `flow_end_ms - flow_start_ms`, saturating at zero. Ingest rejects
    /// records where the subtraction would underflow.
    pub fn duration_ms(&self) -> u64 {
        self.flow_end_ms.saturating_sub(self.flow_start_ms)
    }

    fn overlaps(&self, other: &FlowRecord) -> bool {
        self.flow_start_ms <= other.flow_end_ms && other.flow_start_ms <= self.flow_end_ms
    }
}

/// Checked flow duration in milliseconds.
pub fn flow_duration(flow: &FlowRecord) -> Result<u64, FlowError> {
    flow.flow_end_ms
        .checked_sub(flow.flow_start_ms)
        .ok_or(FlowError::NegativeDuration {
            start: flow.flow_start_ms,
            end: flow.flow_end_ms,
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFlow {
    pub flow: FlowRecord,
    pub label: Label,
    pub source_mac: Option<MacAddr>,
}

impl LabeledFlow {
    pub fn new(flow: FlowRecord, label: Label, source_mac: Option<MacAddr>) -> Self {
        Self {
            flow,
            label,
            source_mac,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowDataset {
    pub flows: Vec<LabeledFlow>,
}

impl FlowDataset {
    pub fn new(flows: Vec<LabeledFlow>) -> Self {
        Self { flows }
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, LabeledFlow> {
        self.flows.iter()
    }

    /// Distinct model labels, sorted.
    pub fn models(&self) -> Vec<DeviceModelId> {
        let mut out: Vec<DeviceModelId> =
            self.flows.iter().filter_map(|f| f.label.model().cloned()).collect();
        out.sort();
        out.dedup();
        out
    }
}

impl FromIterator<LabeledFlow> for FlowDataset {
    fn from_iter<I: IntoIterator<Item = LabeledFlow>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a FlowDataset {
    type Item = &'a LabeledFlow;
    type IntoIter = core::slice::Iter<'a, LabeledFlow>;

    fn into_iter(self) -> Self::IntoIter {
        self.flows.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RejectReason {
    NoMatch,
    Ambiguous,
    UnknownDevice,
    NotRouterSource,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::NoMatch => "no-match",
            RejectReason::Ambiguous => "ambiguous",
            RejectReason::UnknownDevice => "unknown-device",
            RejectReason::NotRouterSource => "not-router-source",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedFlow {
    pub flow: FlowRecord,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelingOutcome {
    pub dataset: FlowDataset,
    pub rejected: Vec<RejectedFlow>,
}

type TwinKey = (Ipv4Addr, u8, u16, u16);

fn twin_key(f: &FlowRecord) -> TwinKey {
    (f.key.dst_ip, f.key.ip_protocol, f.key.src_port, f.key.dst_port)
}

/// Labels flows captured in front of the NAT by matching each with its
/// internal twin: same (dst_ip, protocol, src_port, dst_port) and an
/// overlapping `[start, end]` interval. The label comes from the inventory
/// entry of the twin's pre-NAT source address.
pub fn label_flows(
    external: &[FlowRecord],
    internal: &[FlowRecord],
    inventory: &DeviceInventory,
    router_ip: Ipv4Addr,
) -> LabelingOutcome {
    let mut index: BTreeMap<TwinKey, Vec<usize>> = BTreeMap::new();
    for (i, f) in internal.iter().enumerate() {
        index.entry(twin_key(f)).or_default().push(i);
    }

    let mut out = LabelingOutcome::default();
    for ext in external {
        let reject = |reason| RejectedFlow {
            flow: ext.clone(),
            reason,
        };
        if ext.key.src_ip != router_ip {
            out.rejected.push(reject(RejectReason::NotRouterSource));
            continue;
        }
        let mut candidates = index
            .get(&twin_key(ext))
            .into_iter()
            .flatten()
            .map(|&i| &internal[i])
            .filter(|int| int.overlaps(ext));
        let twin = match (candidates.next(), candidates.next()) {
            (None, _) => {
                out.rejected.push(reject(RejectReason::NoMatch));
                continue;
            }
            (Some(_), Some(_)) => {
                out.rejected.push(reject(RejectReason::Ambiguous));
                continue;
            }
            (Some(t), None) => t,
        };
        match inventory.by_ip(twin.key.src_ip) {
            Some(entry) => out.dataset.flows.push(LabeledFlow::new(
                ext.clone(),
                entry.label.clone(),
                Some(entry.mac),
            )),
            None => out.rejected.push(reject(RejectReason::UnknownDevice)),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub training: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(training: f64, validation: f64, test: f64) -> Result<Self, FlowError> {
        let finite = [training, validation, test]
            .iter()
            .all(|r| r.is_finite() && *r >= 0.0);
        if !finite || libm::fabs(training + validation + test - 1.0) > 1e-9 {
            return Err(FlowError::InvalidRatios(training, validation, test));
        }
        Ok(Self {
            training,
            validation,
            test,
        })
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            training: 0.7,
            validation: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub training: FlowDataset,
    pub validation: FlowDataset,
    pub test: FlowDataset,
}

// 0.7 + 0.1 evaluates to 0.7999999999999999, so nudge before flooring.
fn boundary(fraction: f64, n: usize) -> usize {
    let idx = libm::floor(fraction * n as f64 + 1e-9) as usize;
    idx.min(n)
}

/// Per-device (MAC) chronological split: the earliest `training` share of
/// each device's flows, then the next `validation` share, then the rest.
///
/// Flows are ordered by start, then end, then input position. Each output
/// partition is the union over devices, stably re-sorted by (start, end).
pub fn chronological_split(
    dataset: &FlowDataset,
    ratios: SplitRatios,
) -> Result<DatasetSplit, FlowError> {
    let mut per_device: BTreeMap<MacAddr, Vec<usize>> = BTreeMap::new();
    let mut device_order: Vec<MacAddr> = Vec::new();
    for (i, f) in dataset.flows.iter().enumerate() {
        let mac = f.source_mac.ok_or(FlowError::MissingSourceMac(i))?;
        per_device
            .entry(mac)
            .or_insert_with(|| {
                device_order.push(mac);
                Vec::new()
            })
            .push(i);
    }

    let key = |i: usize| {
        let f = &dataset.flows[i].flow;
        (f.flow_start_ms, f.flow_end_ms, i)
    };
    let mut parts: [Vec<usize>; 3] = Default::default();
    for mac in &device_order {
        let idx = per_device.get_mut(mac).expect("device indexed");
        idx.sort_by_key(|&i| key(i));
        let n = idx.len();
        let b1 = boundary(ratios.training, n);
        let b2 = boundary(ratios.training + ratios.validation, n).max(b1);
        parts[0].extend_from_slice(&idx[..b1]);
        parts[1].extend_from_slice(&idx[b1..b2]);
        parts[2].extend_from_slice(&idx[b2..]);
    }

    let [tr, va, te] = parts.map(|mut p| {
        p.sort_by_key(|&i| {
            let f = &dataset.flows[i].flow;
            (f.flow_start_ms, f.flow_end_ms)
        });
        p.into_iter()
            .map(|i| dataset.flows[i].clone())
            .collect::<FlowDataset>()
    });
    Ok(DatasetSplit {
        training: tr,
        validation: va,
        test: te,
    })
}

/// Flows labeled exactly `m` (all three segments), in original order.
pub fn filter_model(dataset: &FlowDataset, m: &DeviceModelId) -> FlowDataset {
    dataset
        .flows
        .iter()
        .filter(|f| f.label.is_model(m))
        .cloned()
        .collect()
}

/// Complement of [`filter_model`].
pub fn filter_not_model(dataset: &FlowDataset, m: &DeviceModelId) -> FlowDataset {
    dataset
        .flows
        .iter()
        .filter(|f| !f.label.is_model(m))
        .cloned()
        .collect()
}
