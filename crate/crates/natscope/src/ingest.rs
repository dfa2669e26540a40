//! nProbe-style flow CSV, device inventory CSV and DNS event JSONL.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;

use natscope_core::dns::{normalize_qname, DnsEvent};
use natscope_core::flowdata::{
    DeviceInventory, FlowDataset, FlowRecord, InventoryEntry, Label, LabeledFlow, MacAddr,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IN_BYTES: &str = "IN_BYTES";
pub const OUT_BYTES: &str = "OUT_BYTES";
pub const SRC_TOS: &str = "SRC_TOS";
pub const DST_TOS: &str = "DST_TOS";
pub const PROTOCOL: &str = "PROTOCOL";
pub const L4_DST_PORT: &str = "L4_DST_PORT";
pub const L7_PROTO_NAME: &str = "L7_PROTO_NAME";
pub const FLOW_START_MILLISECONDS: &str = "FLOW_START_MILLISECONDS";
pub const FLOW_END_MILLISECONDS: &str = "FLOW_END_MILLISECONDS";
pub const SRC_IP: &str = "SRC_IP";
pub const DST_IP: &str = "DST_IP";
pub const L4_SRC_PORT: &str = "L4_SRC_PORT";
pub const INPUT_INTERFACE: &str = "INPUT_INTERFACE";
pub const LABEL: &str = "LABEL";
pub const SRC_MAC: &str = "SRC_MAC";

pub const MANDATORY_COLUMNS: [&str; 9] = [
    IN_BYTES,
    OUT_BYTES,
    SRC_TOS,
    DST_TOS,
    PROTOCOL,
    L4_DST_PORT,
    L7_PROTO_NAME,
    FLOW_START_MILLISECONDS,
    FLOW_END_MILLISECONDS,
];

pub const OPTIONAL_COLUMNS: [&str; 6] = [SRC_IP, DST_IP, L4_SRC_PORT, INPUT_INTERFACE, LABEL, SRC_MAC];

/// L7 name used when the exporter gives none.
pub const UNKNOWN_L7: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRow {
    /// 1-based line in the input file.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct FlowCsv {
    pub dataset: FlowDataset,
    pub rejected: Vec<RejectedRow>,
}

pub fn read_flow_csv(path: impl AsRef<Path>, inventory: Option<&DeviceInventory>) -> Result<FlowCsv> {
    let path = path.as_ref();
    let file = File::open(path).map_err(Error::io(path))?;
    parse_flow_csv(BufReader::new(file), inventory)
}

struct Columns {
    mandatory: [usize; 9],
    optional: [Option<usize>; 6],
}

impl Columns {
    fn locate(headers: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| headers.iter().position(|h| h.trim() == name);
        let mut mandatory = [0; 9];
        for (slot, name) in mandatory.iter_mut().zip(MANDATORY_COLUMNS) {
            *slot = find(name).ok_or_else(|| Error::MissingColumn(name.into()))?;
        }
        Ok(Self {
            mandatory,
            optional: OPTIONAL_COLUMNS.map(find),
        })
    }
}

/// Every data row ends up either in the dataset or in `rejected`.
///
/// Labels come from a non-empty `LABEL` cell, else from the inventory entry
/// of `SRC_IP`, else the flow is unlabeled. The source MAC follows the same
/// order with `SRC_MAC`.
pub fn parse_flow_csv<R: Read>(reader: R, inventory: Option<&DeviceInventory>) -> Result<FlowCsv> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut out = FlowCsv::default();
    if headers.is_empty() {
        return Ok(out);
    }
    let cols = Columns::locate(&headers)?;

    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line() + 1;
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if matches!(e.kind(), csv::ErrorKind::Utf8 { .. }) => {
                out.rejected.push(RejectedRow { line, reason: "parse-error:utf8".into() });
                continue;
            }
            Err(e) => return Err(e.into()),
        }
        let line = record.position().map_or(line, |p| p.line());
        if record.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        match parse_row(&record, &cols, inventory) {
            Ok(flow) => out.dataset.flows.push(flow),
            Err(reason) => out.rejected.push(RejectedRow { line, reason }),
        }
    }
    Ok(out)
}

fn parse_row(
    record: &csv::StringRecord,
    cols: &Columns,
    inventory: Option<&DeviceInventory>,
) -> std::result::Result<LabeledFlow, String> {
    fn cell(record: &csv::StringRecord, idx: usize) -> &str {
        record.get(idx).unwrap_or("").trim()
    }
    fn num<T: FromStr>(record: &csv::StringRecord, idx: usize, name: &str) -> std::result::Result<T, String> {
        cell(record, idx).parse().map_err(|_| format!("parse-error:{name}"))
    }
    fn opt<T: FromStr>(
        record: &csv::StringRecord,
        idx: Option<usize>,
        name: &str,
    ) -> std::result::Result<Option<T>, String> {
        match idx.map(|i| cell(record, i)) {
            None | Some("") => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|_| format!("parse-error:{name}")),
        }
    }

    let m = &cols.mandatory;
    let o = &cols.optional;
    let mut flow = FlowRecord {
        in_bytes: num(record, m[0], IN_BYTES)?,
        out_bytes: num(record, m[1], OUT_BYTES)?,
        src_tos: num(record, m[2], SRC_TOS)?,
        dst_tos: num(record, m[3], DST_TOS)?,
        l7_proto_name: match cell(record, m[6]) {
            "" => UNKNOWN_L7.to_string(),
            s => s.to_string(),
        },
        flow_start_ms: num(record, m[7], FLOW_START_MILLISECONDS)?,
        flow_end_ms: num(record, m[8], FLOW_END_MILLISECONDS)?,
        ..FlowRecord::default()
    };
    flow.key.ip_protocol = num(record, m[4], PROTOCOL)?;
    flow.key.dst_port = num(record, m[5], L4_DST_PORT)?;
    flow.key.tos = flow.src_tos;
    if flow.flow_end_ms < flow.flow_start_ms {
        return Err("negative-duration".into());
    }
    if let Some(ip) = opt(record, o[0], SRC_IP)? {
        flow.key.src_ip = ip;
    }
    if let Some(ip) = opt(record, o[1], DST_IP)? {
        flow.key.dst_ip = ip;
    }
    if let Some(p) = opt(record, o[2], L4_SRC_PORT)? {
        flow.key.src_port = p;
    }
    if let Some(i) = opt(record, o[3], INPUT_INTERFACE)? {
        flow.key.ingress_interface = i;
    }
    let label_cell = o[4].map(|i| cell(record, i)).unwrap_or("");
    let label = if label_cell.is_empty() {
        None
    } else {
        Some(Label::parse(label_cell).map_err(|_| format!("parse-error:{LABEL}"))?)
    };
    let mac: Option<MacAddr> = opt(record, o[5], SRC_MAC)?;

    let entry = inventory.and_then(|inv| inv.by_ip(flow.key.src_ip));
    let label = label
        .or_else(|| entry.map(|e| e.label.clone()))
        .unwrap_or(Label::Unlabeled);
    let mac = mac.or_else(|| entry.map(|e| e.mac));
    Ok(LabeledFlow::new(flow, label, mac))
}

/// Streams flows in the column layout [`parse_flow_csv`] reads.
pub struct FlowCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> FlowCsvWriter<W> {
    pub fn new(writer: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(writer);
        let header: Vec<&str> = MANDATORY_COLUMNS.iter().chain(&OPTIONAL_COLUMNS).copied().collect();
        inner.write_record(&header)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, f: &LabeledFlow) -> Result<()> {
        let r = &f.flow;
        self.inner.write_record([
            r.in_bytes.to_string(),
            r.out_bytes.to_string(),
            r.src_tos.to_string(),
            r.dst_tos.to_string(),
            r.key.ip_protocol.to_string(),
            r.key.dst_port.to_string(),
            r.l7_proto_name.clone(),
            r.flow_start_ms.to_string(),
            r.flow_end_ms.to_string(),
            r.key.src_ip.to_string(),
            r.key.dst_ip.to_string(),
            r.key.src_port.to_string(),
            r.key.ingress_interface.to_string(),
            f.label.to_string(),
            f.source_mac.map(|m| m.to_string()).unwrap_or_default(),
        ])?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(Error::io("<flow csv>"))
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| Error::io("<flow csv>")(e.into_error()))
    }
}

pub fn write_flow_csv<'a, W: Write>(writer: W, flows: impl IntoIterator<Item = &'a LabeledFlow>) -> Result<W> {
    let mut w = FlowCsvWriter::new(writer)?;
    for f in flows {
        w.write(f)?;
    }
    w.into_inner()
}

pub fn save_flow_csv(path: impl AsRef<Path>, dataset: &FlowDataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = write_flow_csv(io::BufWriter::new(file), dataset.iter())?;
    w.flush().map_err(Error::io(path))
}

/// Inventory CSV with columns `MAC`, `IP`, `LABEL`.
pub fn read_inventory(path: impl AsRef<Path>) -> Result<DeviceInventory> {
    let path = path.as_ref();
    let file = File::open(path).map_err(Error::io(path))?;
    parse_inventory(BufReader::new(file))
}

pub fn parse_inventory<R: Read>(reader: R) -> Result<DeviceInventory> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.into()))
    };
    let (mac, ip, label) = (find("MAC")?, find("IP")?, find("LABEL")?);
    let mut entries = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |i: usize| rec.get(i).unwrap_or("").trim();
        let internal_ip = get(ip)
            .parse()
            .map_err(|_| Error::Config(format!("inventory line {line}: bad IP {:?}", get(ip))))?;
        entries.push(InventoryEntry {
            mac: get(mac).parse()?,
            internal_ip,
            label: Label::parse(get(label))?,
        });
    }
    Ok(DeviceInventory::new(entries)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct DnsLine {
    ts_ms: u64,
    src_ip: Ipv4Addr,
    ip_id: i64,
    resolver_ip: Ipv4Addr,
    qname: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct DnsJsonl {
    pub events: Vec<DnsEvent>,
    pub rejected: Vec<RejectedRow>,
}

pub fn read_dns_jsonl(path: impl AsRef<Path>) -> Result<DnsJsonl> {
    let path = path.as_ref();
    let file = File::open(path).map_err(Error::io(path))?;
    parse_dns_jsonl(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::Io { path: path.into(), source },
        e => e,
    })
}

/// Events in file order; blank lines are skipped.
pub fn parse_dns_jsonl<R: BufRead>(reader: R) -> Result<DnsJsonl> {
    let mut out = DnsJsonl::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(Error::io("<dns jsonl>"))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_dns_line(&line) {
            Ok(ev) => out.events.push(ev),
            Err(reason) => out.rejected.push(RejectedRow { line: line_no, reason }),
        }
    }
    Ok(out)
}

fn parse_dns_line(line: &str) -> std::result::Result<DnsEvent, String> {
    let raw: DnsLine = serde_json::from_str(line).map_err(|_| "parse-error:json".to_string())?;
    let ip_id = u16::try_from(raw.ip_id).map_err(|_| "ip-id-out-of-range".to_string())?;
    let qname = normalize_qname(&raw.qname).ok_or_else(|| "empty-qname".to_string())?;
    let label = match raw.label.as_deref() {
        None => Label::Unlabeled,
        Some(s) => Label::parse(s).map_err(|_| "parse-error:label".to_string())?,
    };
    Ok(DnsEvent {
        timestamp_ms: raw.ts_ms,
        observed_src_ip: raw.src_ip,
        ip_id,
        resolver_ip: raw.resolver_ip,
        qname,
        label,
    })
}

pub fn write_dns_jsonl<W: Write>(mut writer: W, events: &[DnsEvent]) -> Result<W> {
    for e in events {
        let line = DnsLine {
            ts_ms: e.timestamp_ms,
            src_ip: e.observed_src_ip,
            ip_id: e.ip_id.into(),
            resolver_ip: e.resolver_ip,
            qname: e.qname.clone(),
            label: match &e.label {
                Label::Unlabeled => None,
                l => Some(l.to_string()),
            },
        };
        serde_json::to_writer(&mut writer, &line)?;
        writer.write_all(b"\n").map_err(Error::io("<dns jsonl>"))?;
    }
    Ok(writer)
}

pub fn save_dns_jsonl(path: impl AsRef<Path>, events: &[DnsEvent]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = write_dns_jsonl(io::BufWriter::new(file), events)?;
    w.flush().map_err(Error::io(path))
}
