//! DNS request observations used by the deNATing baselines.

use alloc::string::String;
use core::net::Ipv4Addr;

use crate::flowdata::Label;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsEvent {
    pub timestamp_ms: u64,
    /// Source address as seen by the observer (the router's for NATed homes).
    pub observed_src_ip: Ipv4Addr,
    pub ip_id: u16,
    pub resolver_ip: Ipv4Addr,
    /// Lower-case, no trailing dot. Use [`normalize_qname`].
    pub qname: String,
    pub label: Label,
}

/// Lower-cases and strips trailing dots. Returns `None` for an empty result.
pub fn normalize_qname(raw: &str) -> Option<String> {
    let trimmed = raw.trim().trim_end_matches('.');
    if trimmed.is_empty() {
        None
    } else {
        Some(trimmed.to_ascii_lowercase())
    }
}
