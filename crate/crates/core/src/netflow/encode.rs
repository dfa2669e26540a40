//! Export-side counterpart of the decoder.

use alloc::vec::Vec;

use super::{field, PacketHeader, Template, MIN_DATA_FLOWSET_ID, TEMPLATE_FLOWSET_ID, VERSION};
use crate::flowdata::FlowRecord;

/// Assembles one export packet flowset by flowset.
///
/// Values wider than their template field are truncated to the low-order
/// bytes. Sysuptime-relative switch times are derived from the header.
#[derive(Debug, Clone)]
pub struct DatagramBuilder {
    header: PacketHeader,
    body: Vec<u8>,
    records: u16,
}

impl DatagramBuilder {
    pub fn new(sys_uptime_ms: u32, unix_secs: u32, sequence: u32, source_id: u32) -> Self {
        Self {
            header: PacketHeader {
                count: 0,
                sys_uptime_ms,
                unix_secs,
                sequence,
                source_id,
            },
            body: Vec::new(),
            records: 0,
        }
    }

    pub fn templates(&mut self, templates: &[&Template]) -> &mut Self {
        let start = self.begin(TEMPLATE_FLOWSET_ID);
        for t in templates {
            push_u16(&mut self.body, t.template_id());
            push_u16(&mut self.body, t.fields().len() as u16);
            for f in t.fields() {
                push_u16(&mut self.body, f.field_type);
                push_u16(&mut self.body, f.length);
            }
            self.records = self.records.wrapping_add(1);
        }
        self.end(start, 4);
        self
    }

    pub fn data(&mut self, template: &Template, records: &[FlowRecord]) -> &mut Self {
        debug_assert!(template.template_id() >= MIN_DATA_FLOWSET_ID);
        let start = self.begin(template.template_id());
        for r in records {
            for f in template.fields() {
                let v = field_value(r, f.field_type, &self.header);
                let bytes = v.to_be_bytes();
                let len = usize::from(f.length);
                if len <= 8 {
                    self.body.extend_from_slice(&bytes[8 - len..]);
                } else {
                    self.body.resize(self.body.len() + len - 8, 0);
                    self.body.extend_from_slice(&bytes);
                }
            }
            self.records = self.records.wrapping_add(1);
        }
        self.end(start, template.record_len());
        self
    }

    pub fn finish(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(super::HEADER_LEN + self.body.len());
        push_u16(&mut out, VERSION);
        push_u16(&mut out, self.records);
        out.extend_from_slice(&self.header.sys_uptime_ms.to_be_bytes());
        out.extend_from_slice(&self.header.unix_secs.to_be_bytes());
        out.extend_from_slice(&self.header.sequence.to_be_bytes());
        out.extend_from_slice(&self.header.source_id.to_be_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    fn begin(&mut self, id: u16) -> usize {
        let start = self.body.len();
        push_u16(&mut self.body, id);
        push_u16(&mut self.body, 0);
        start
    }

    /// Pads to a 4-byte boundary unless the padding could be mistaken for a
    /// record, then patches the flowset length.
    fn end(&mut self, start: usize, record_len: usize) {
        let pad = (4 - (self.body.len() - start) % 4) % 4;
        if pad < record_len {
            self.body.resize(self.body.len() + pad, 0);
        }
        let len = (self.body.len() - start) as u16;
        self.body[start + 2..start + 4].copy_from_slice(&len.to_be_bytes());
    }
}

fn field_value(r: &FlowRecord, field_type: u16, header: &PacketHeader) -> u64 {
    match field_type {
        field::IN_BYTES => r.in_bytes,
        field::OUT_BYTES => r.out_bytes,
        field::PROTOCOL => r.key.ip_protocol.into(),
        field::SRC_TOS => r.src_tos.into(),
        field::DST_TOS => r.dst_tos.into(),
        field::L4_SRC_PORT => r.key.src_port.into(),
        field::L4_DST_PORT => r.key.dst_port.into(),
        field::IPV4_SRC_ADDR => u32::from(r.key.src_ip).into(),
        field::IPV4_DST_ADDR => u32::from(r.key.dst_ip).into(),
        field::INPUT_INTERFACE => r.key.ingress_interface.into(),
        field::FLOW_START_MILLISECONDS => r.flow_start_ms,
        field::FLOW_END_MILLISECONDS => r.flow_end_ms,
        field::FIRST_SWITCHED => header.epoch_to_uptime_ms(r.flow_start_ms).into(),
        field::LAST_SWITCHED => header.epoch_to_uptime_ms(r.flow_end_ms).into(),
        _ => 0,
    }
}

fn push_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_be_bytes());
}
