//! Detection by device-facing server names seen in DNS requests.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::net::Ipv4Addr;

use super::BaselineRates;
use crate::dns::DnsEvent;
use crate::flowdata::{DeviceModelId, Label};

/// Models contacting fewer distinct servers than this are not covered.
pub const MIN_PROFILE_SERVERS: usize = 3;
pub const DEFAULT_WINDOW_MS: u64 = 10 * 60 * 1000;
pub const DEFAULT_MIN_DISTINCT: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainProfile {
    pub model: DeviceModelId,
    pub server_names: BTreeSet<String>,
}

impl DomainProfile {
    pub fn covered(&self) -> bool {
        self.server_names.len() >= MIN_PROFILE_SERVERS
    }
}

/// Distinct normalized qnames per labeled model, sorted by model.
pub fn build_domain_profiles(training: &[DnsEvent]) -> Vec<DomainProfile> {
    let mut names: BTreeMap<&DeviceModelId, BTreeSet<String>> = BTreeMap::new();
    for e in training {
        if let Label::Model(m) = &e.label {
            names.entry(m).or_default().insert(e.qname.clone());
        }
    }
    names
        .into_iter()
        .map(|(m, server_names)| DomainProfile {
            model: m.clone(),
            server_names,
        })
        .collect()
}

/// Models whose profile shares at least `min_distinct` distinct names with
/// the events.
pub fn detect_window<'a>(
    events: impl IntoIterator<Item = &'a DnsEvent>,
    profiles: &[DomainProfile],
    min_distinct: usize,
) -> BTreeSet<DeviceModelId> {
    let seen: BTreeSet<&str> = events.into_iter().map(|e| e.qname.as_str()).collect();
    profiles
        .iter()
        .filter(|p| p.server_names.iter().filter(|n| seen.contains(n.as_str())).count() >= min_distinct)
        .map(|p| p.model.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DomainConfig {
    pub window_ms: u64,
    pub min_distinct: usize,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            window_ms: DEFAULT_WINDOW_MS,
            min_distinct: DEFAULT_MIN_DISTINCT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainWindow {
    pub start_ms: u64,
    pub end_ms: u64,
    /// Ground-truth models present in the window.
    pub present: BTreeSet<DeviceModelId>,
    pub detected: BTreeSet<DeviceModelId>,
}

/// Tumbling windows aligned to the first event; only windows holding at
/// least one event are returned. Events must be time-ordered.
pub fn domain_detect(events: &[DnsEvent], profiles: &[DomainProfile], cfg: DomainConfig) -> Vec<DomainWindow> {
    let Some(first) = events.first() else {
        return Vec::new();
    };
    let origin = first.timestamp_ms;
    let width = cfg.window_ms.max(1);
    let mut out = Vec::new();
    let mut i = 0;
    while i < events.len() {
        let slot = (events[i].timestamp_ms - origin) / width;
        let start_ms = origin + slot * width;
        let end_ms = start_ms + width;
        let j = i + events[i..].partition_point(|e| e.timestamp_ms < end_ms);
        let window = &events[i..j];
        out.push(DomainWindow {
            start_ms,
            end_ms,
            present: window.iter().filter_map(|e| e.label.model().cloned()).collect(),
            detected: detect_window(window, profiles, cfg.min_distinct),
        });
        i = j;
    }
    out
}

/// Runs [`domain_detect`] per observed source address and scores each
/// profile's model over all (source, window) pairs.
pub fn evaluate_domain_detection(
    test_events: &[DnsEvent],
    profiles: &[DomainProfile],
    cfg: DomainConfig,
) -> Vec<BaselineRates> {
    let mut per_source: BTreeMap<Ipv4Addr, Vec<DnsEvent>> = BTreeMap::new();
    for e in test_events {
        per_source.entry(e.observed_src_ip).or_default().push(e.clone());
    }
    let mut windows = Vec::new();
    for (_, mut evs) in per_source {
        evs.sort_by_key(|e| e.timestamp_ms);
        windows.extend(domain_detect(&evs, profiles, cfg));
    }
    profiles
        .iter()
        .map(|p| {
            let (mut tp, mut pos, mut fp, mut neg) = (0, 0, 0, 0);
            for w in &windows {
                let hit = w.detected.contains(&p.model);
                if w.present.contains(&p.model) {
                    pos += 1;
                    tp += hit as usize;
                } else {
                    neg += 1;
                    fp += hit as usize;
                }
            }
            BaselineRates::from_counts(p.model.clone(), tp, pos, fp, neg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn model(v: &str) -> DeviceModelId {
        DeviceModelId::new("speaker", "Amazon", v).unwrap()
    }

    fn ev(ts: u64, src: u8, qname: &str, label: Option<&str>) -> DnsEvent {
        DnsEvent {
            timestamp_ms: ts,
            observed_src_ip: Ipv4Addr::new(198, 51, 100, src),
            ip_id: 0,
            resolver_ip: Ipv4Addr::new(8, 8, 8, 8),
            qname: qname.to_string(),
            label: label.map_or(Label::NonIot, |v| Label::Model(model(v))),
        }
    }

    #[test]
    fn profiles_dedupe_and_coverage() {
        let evs = [
            ev(0, 1, "a.com", Some("x")),
            ev(1, 1, "b.com", Some("x")),
            ev(2, 1, "c.com", Some("x")),
            ev(3, 1, "a.com", Some("x")),
            ev(4, 2, "d.com", Some("y")),
            ev(5, 2, "e.com", Some("y")),
            ev(6, 3, "google.com", None),
        ];
        let p = build_domain_profiles(&evs);
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].server_names.len(), 3);
        assert!(p[0].covered());
        assert!(!p[1].covered());
    }

    #[test]
    fn window_threshold() {
        let profile = [DomainProfile {
            model: model("x"),
            server_names: ["a.com", "b.com", "c.com"].iter().map(|s| s.to_string()).collect(),
        }];
        let three = [ev(0, 1, "a.com", None), ev(1, 1, "b.com", None), ev(2, 1, "c.com", None)];
        assert_eq!(detect_window(&three, &profile, 3), BTreeSet::from([model("x")]));
        assert!(detect_window(&three[..2], &profile, 3).is_empty());
        let repeated = [ev(0, 1, "a.com", None), ev(1, 1, "a.com", None), ev(2, 1, "b.com", None)];
        assert!(detect_window(&repeated, &profile, 3).is_empty());
    }

    #[test]
    fn overlapping_profiles_report_both() {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        let profiles = [
            DomainProfile { model: model("x"), server_names: names(&["ntp.amazon.com", "amazon.com", "ssl.amazon.com"]) },
            DomainProfile { model: model("y"), server_names: names(&["ntp.amazon.com", "amazon.com", "ssl.amazon.com", "z.com"]) },
        ];
        let evs = [ev(0, 1, "ntp.amazon.com", None), ev(1, 1, "amazon.com", None), ev(2, 1, "ssl.amazon.com", None)];
        assert_eq!(detect_window(&evs, &profiles, 3).len(), 2);
    }

    #[test]
    fn tumbling_windows_align_to_first_event() {
        let profile = [DomainProfile {
            model: model("x"),
            server_names: ["a.com", "b.com", "c.com"].iter().map(|s| s.to_string()).collect(),
        }];
        let w = DEFAULT_WINDOW_MS;
        let evs = [
            ev(1000, 1, "a.com", Some("x")),
            ev(1000 + w - 1, 1, "b.com", Some("x")),
            ev(1000 + w - 1, 1, "c.com", Some("x")),
            ev(1000 + w, 1, "a.com", Some("x")),
            ev(1000 + 3 * w, 1, "b.com", Some("x")),
        ];
        let out = domain_detect(&evs, &profile, DomainConfig::default());
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].start_ms, 1000);
        assert_eq!(out[0].detected.len(), 1);
        assert_eq!(out[1].start_ms, 1000 + w);
        assert!(out[1].detected.is_empty());
        assert_eq!(out[2].start_ms, 1000 + 3 * w);

        let rates = evaluate_domain_detection(&evs, &profile, DomainConfig::default());
        assert_eq!(rates[0].positives, 3);
        assert_eq!(rates[0].tpr, Some(1.0 / 3.0));
        assert_eq!(rates[0].fpr, None);
        assert!(domain_detect(&[], &profile, DomainConfig::default()).is_empty());
    }
}
