//! NetFlow v9 wire codec with a per-exporter template cache.
//!
//! Decoding is all-or-nothing per datagram: every flowset is parsed and
//! validated before the cache is touched, so a malformed datagram leaves the
//! cache exactly as it was.

mod encode;

pub use encode::DatagramBuilder;

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;
use core::net::Ipv4Addr;

use crate::flowdata::FlowRecord;

pub const VERSION: u16 = 9;
pub const HEADER_LEN: usize = 20;
pub const TEMPLATE_FLOWSET_ID: u16 = 0;
pub const OPTIONS_TEMPLATE_FLOWSET_ID: u16 = 1;
pub const MIN_DATA_FLOWSET_ID: u16 = 256;
pub const DEFAULT_PENDING_CAPACITY: usize = 10_000;

/// Field type numbers understood by the codec.
pub mod field {
    pub const IN_BYTES: u16 = 1;
    pub const PROTOCOL: u16 = 4;
    pub const SRC_TOS: u16 = 5;
    pub const L4_SRC_PORT: u16 = 7;
    pub const IPV4_SRC_ADDR: u16 = 8;
    pub const INPUT_INTERFACE: u16 = 10;
    pub const L4_DST_PORT: u16 = 11;
    pub const IPV4_DST_ADDR: u16 = 12;
    pub const LAST_SWITCHED: u16 = 21;
    pub const FIRST_SWITCHED: u16 = 22;
    pub const OUT_BYTES: u16 = 23;
    pub const DST_TOS: u16 = 55;
    pub const FLOW_START_MILLISECONDS: u16 = 152;
    pub const FLOW_END_MILLISECONDS: u16 = 153;

    pub const SUPPORTED: [u16; 14] = [
        IN_BYTES,
        PROTOCOL,
        SRC_TOS,
        L4_SRC_PORT,
        IPV4_SRC_ADDR,
        INPUT_INTERFACE,
        L4_DST_PORT,
        IPV4_DST_ADDR,
        LAST_SWITCHED,
        FIRST_SWITCHED,
        OUT_BYTES,
        DST_TOS,
        FLOW_START_MILLISECONDS,
        FLOW_END_MILLISECONDS,
    ];

    /// Widest encoding accepted for a supported field.
    pub(crate) fn max_len(field_type: u16) -> Option<u16> {
        match field_type {
            PROTOCOL | SRC_TOS | DST_TOS => Some(1),
            L4_SRC_PORT | L4_DST_PORT => Some(2),
            IPV4_SRC_ADDR | IPV4_DST_ADDR | LAST_SWITCHED | FIRST_SWITCHED => Some(4),
            INPUT_INTERFACE => Some(4),
            IN_BYTES | OUT_BYTES | FLOW_START_MILLISECONDS | FLOW_END_MILLISECONDS => Some(8),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NetflowError {
    #[error("unsupported-version: {0}")]
    UnsupportedVersion(u16),
    #[error("truncated: {0}")]
    Truncated(&'static str),
    #[error("invalid-template: {0}")]
    InvalidTemplate(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketHeader {
    pub count: u16,
    pub sys_uptime_ms: u32,
    pub unix_secs: u32,
    pub sequence: u32,
    pub source_id: u32,
}

impl PacketHeader {
    pub fn parse(datagram: &[u8]) -> Result<Self, NetflowError> {
        if datagram.len() < HEADER_LEN {
            return Err(NetflowError::Truncated("header"));
        }
        let version = be_u16(&datagram[0..2]);
        if version != VERSION {
            return Err(NetflowError::UnsupportedVersion(version));
        }
        Ok(Self {
            count: be_u16(&datagram[2..4]),
            sys_uptime_ms: be_u32(&datagram[4..8]),
            unix_secs: be_u32(&datagram[8..12]),
            sequence: be_u32(&datagram[12..16]),
            source_id: be_u32(&datagram[16..20]),
        })
    }

    /// Converts a sysuptime-relative switch time to epoch milliseconds.
    pub fn uptime_to_epoch_ms(&self, switched: u32) -> u64 {
        let age = i64::from(self.sys_uptime_ms) - i64::from(switched);
        (i64::from(self.unix_secs) * 1000 - age).max(0) as u64
    }

    pub fn epoch_to_uptime_ms(&self, epoch_ms: u64) -> u32 {
        let age = i64::from(self.unix_secs) * 1000 - epoch_ms as i64;
        (i64::from(self.sys_uptime_ms) - age) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemplateField {
    pub field_type: u16,
    pub length: u16,
}

/// Data-record layout announced by an exporter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    template_id: u16,
    fields: Vec<TemplateField>,
}

impl Template {
    pub fn new(template_id: u16, fields: Vec<TemplateField>) -> Result<Self, NetflowError> {
        if template_id < MIN_DATA_FLOWSET_ID {
            return Err(NetflowError::InvalidTemplate("template id below 256"));
        }
        if fields.is_empty() {
            return Err(NetflowError::InvalidTemplate("no fields"));
        }
        for f in &fields {
            if f.length == 0 {
                return Err(NetflowError::InvalidTemplate("zero-length field"));
            }
            if field::max_len(f.field_type).is_some_and(|max| f.length > max) {
                return Err(NetflowError::InvalidTemplate("field too wide"));
            }
        }
        if fields.iter().map(|f| usize::from(f.length)).sum::<usize>() > usize::from(u16::MAX) {
            return Err(NetflowError::InvalidTemplate("record too long"));
        }
        Ok(Self { template_id, fields })
    }

    pub fn template_id(&self) -> u16 {
        self.template_id
    }

    pub fn fields(&self) -> &[TemplateField] {
        &self.fields
    }

    pub fn record_len(&self) -> usize {
        self.fields.iter().map(|f| usize::from(f.length)).sum()
    }

    fn decode_record(&self, bytes: &[u8], header: &PacketHeader) -> FlowRecord {
        let mut rec = FlowRecord::default();
        let (mut start_abs, mut end_abs, mut first_sw, mut last_sw) = (None, None, None, None);
        let mut at = 0;
        for f in &self.fields {
            let raw = &bytes[at..at + usize::from(f.length)];
            at += usize::from(f.length);
            let v = be_uint(raw);
            match f.field_type {
                field::IN_BYTES => rec.in_bytes = v,
                field::OUT_BYTES => rec.out_bytes = v,
                field::PROTOCOL => rec.key.ip_protocol = v as u8,
                field::SRC_TOS => {
                    rec.src_tos = v as u8;
                    rec.key.tos = v as u8;
                }
                field::DST_TOS => rec.dst_tos = v as u8,
                field::L4_SRC_PORT => rec.key.src_port = v as u16,
                field::L4_DST_PORT => rec.key.dst_port = v as u16,
                field::IPV4_SRC_ADDR => rec.key.src_ip = Ipv4Addr::from(v as u32),
                field::IPV4_DST_ADDR => rec.key.dst_ip = Ipv4Addr::from(v as u32),
                field::INPUT_INTERFACE => rec.key.ingress_interface = v as u32,
                field::FLOW_START_MILLISECONDS => start_abs = Some(v),
                field::FLOW_END_MILLISECONDS => end_abs = Some(v),
                field::FIRST_SWITCHED => first_sw = Some(v as u32),
                field::LAST_SWITCHED => last_sw = Some(v as u32),
                _ => {}
            }
        }
        rec.flow_start_ms = start_abs
            .or_else(|| first_sw.map(|s| header.uptime_to_epoch_ms(s)))
            .unwrap_or(0);
        rec.flow_end_ms = end_abs
            .or_else(|| last_sw.map(|s| header.uptime_to_epoch_ms(s)))
            .unwrap_or(0);
        rec.l7_proto_name = String::from("unknown");
        rec
    }

    fn decode_flowset(&self, body: &[u8], header: &PacketHeader, out: &mut Vec<FlowRecord>) {
        // Trailing bytes shorter than one record are padding.
        for chunk in body.chunks_exact(self.record_len()) {
            out.push(self.decode_record(chunk, header));
        }
    }
}

#[derive(Debug, Clone)]
struct PendingFlowset {
    header: PacketHeader,
    template_id: u16,
    body: Vec<u8>,
}

/// Templates keyed by `(source_id, template_id)` plus data flowsets waiting
/// for a template that has not arrived yet.
#[derive(Debug, Clone)]
pub struct TemplateCache {
    templates: BTreeMap<(u32, u16), Template>,
    pending: VecDeque<PendingFlowset>,
    pending_capacity: usize,
    dropped_pending: u64,
}

impl Default for TemplateCache {
    fn default() -> Self {
        Self::with_pending_capacity(DEFAULT_PENDING_CAPACITY)
    }
}

enum Staged<'a> {
    Template(Template),
    Data { template_id: u16, body: &'a [u8] },
}

impl TemplateCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// `capacity` bounds the number of buffered data flowsets; the oldest is
    /// dropped on overflow.
    pub fn with_pending_capacity(capacity: usize) -> Self {
        Self {
            templates: BTreeMap::new(),
            pending: VecDeque::new(),
            pending_capacity: capacity,
            dropped_pending: 0,
        }
    }

    pub fn get(&self, source_id: u32, template_id: u16) -> Option<&Template> {
        self.templates.get(&(source_id, template_id))
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn dropped_pending(&self) -> u64 {
        self.dropped_pending
    }

    /// Decodes one export packet. Records come out in flowset order;
    /// buffered records released by a template in this packet are emitted
    /// at the position of that template.
    pub fn decode(&mut self, datagram: &[u8]) -> Result<Vec<FlowRecord>, NetflowError> {
        let header = PacketHeader::parse(datagram)?;
        let staged = stage(&datagram[HEADER_LEN..])?;

        let mut out = Vec::new();
        for item in staged {
            match item {
                Staged::Template(t) => {
                    let key = (header.source_id, t.template_id);
                    if self.templates.get(&key) == Some(&t) {
                        continue;
                    }
                    self.templates.insert(key, t);
                    self.release_pending(header.source_id, key.1, &mut out);
                }
                Staged::Data { template_id, body } => {
                    match self.templates.get(&(header.source_id, template_id)) {
                        Some(t) => t.decode_flowset(body, &header, &mut out),
                        None => self.buffer(PendingFlowset {
                            header,
                            template_id,
                            body: body.to_vec(),
                        }),
                    }
                }
            }
        }
        Ok(out)
    }

    fn buffer(&mut self, p: PendingFlowset) {
        if self.pending_capacity == 0 {
            self.dropped_pending += 1;
            return;
        }
        while self.pending.len() >= self.pending_capacity {
            self.pending.pop_front();
            self.dropped_pending += 1;
        }
        self.pending.push_back(p);
    }

    fn release_pending(&mut self, source_id: u32, template_id: u16, out: &mut Vec<FlowRecord>) {
        let Some(t) = self.templates.get(&(source_id, template_id)) else {
            return;
        };
        let mut keep = VecDeque::with_capacity(self.pending.len());
        for p in self.pending.drain(..) {
            if p.header.source_id == source_id && p.template_id == template_id {
                t.decode_flowset(&p.body, &p.header, out);
            } else {
                keep.push_back(p);
            }
        }
        self.pending = keep;
    }
}

/// Parses and validates every flowset without touching any cache.
fn stage(mut rest: &[u8]) -> Result<Vec<Staged<'_>>, NetflowError> {
    let mut staged = Vec::new();
    while !rest.is_empty() {
        if rest.len() < 4 {
            return Err(NetflowError::Truncated("flowset header"));
        }
        let id = be_u16(&rest[0..2]);
        let len = usize::from(be_u16(&rest[2..4]));
        if len < 4 || len > rest.len() {
            return Err(NetflowError::Truncated("flowset length"));
        }
        let body = &rest[4..len];
        rest = &rest[len..];
        match id {
            TEMPLATE_FLOWSET_ID => parse_templates(body, &mut staged)?,
            id if id >= MIN_DATA_FLOWSET_ID => staged.push(Staged::Data { template_id: id, body }),
            // Options templates and reserved ids carry nothing we use.
            _ => {}
        }
    }
    Ok(staged)
}

fn parse_templates<'a>(mut body: &'a [u8], staged: &mut Vec<Staged<'a>>) -> Result<(), NetflowError> {
    // A template record needs at least its 4-byte header; shorter tails are padding.
    while body.len() >= 4 {
        let id = be_u16(&body[0..2]);
        let count = usize::from(be_u16(&body[2..4]));
        if id == 0 && count == 0 {
            break;
        }
        let need = 4 + 4 * count;
        if body.len() < need {
            return Err(NetflowError::Truncated("template record"));
        }
        let fields = body[4..need]
            .chunks_exact(4)
            .map(|c| TemplateField {
                field_type: be_u16(&c[0..2]),
                length: be_u16(&c[2..4]),
            })
            .collect();
        staged.push(Staged::Template(Template::new(id, fields)?));
        body = &body[need..];
    }
    if body.iter().any(|&b| b != 0) {
        return Err(NetflowError::Truncated("template record"));
    }
    Ok(())
}

fn be_u16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

/// Big-endian unsigned integer of any width; bytes beyond eight keep only
/// the low-order part.
fn be_uint(b: &[u8]) -> u64 {
    b.iter().fold(0u64, |acc, &x| (acc << 8) | u64::from(x))
}
