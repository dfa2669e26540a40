//! Deterministic synthetic flows and DNS events for desk-scale runs.
//!
//! A model's traffic is a weighted table of services. Each service fixes
//! protocol, destination port and L7 name and carries its own log-normal
//! byte and duration marginals, so the categorical and numeric features of
//! one flow are drawn jointly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::net::Ipv4Addr;
use std::path::Path;

use natscope_core::dns::{normalize_qname, DnsEvent};
use natscope_core::flowdata::{
    DeviceInventory, FlowDataset, FlowRecord, InventoryEntry, Label, LabeledFlow, MacAddr,
};
use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest;

const WEIGHT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalSpec {
    pub median: f64,
    pub sigma: f64,
}

impl LogNormalSpec {
    fn distribution(&self) -> LogNormal<f64> {
        LogNormal::new(self.median.ln(), self.sigma).expect("validated parameters")
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.median > 0.0 && self.median.is_finite() && self.sigma > 0.0 && self.sigma.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("{what}: median and sigma must be positive")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub weight: f64,
    pub protocol: u8,
    pub dst_port: u16,
    pub l7_proto_name: String,
    #[serde(default)]
    pub dst_ips: Vec<Ipv4Addr>,
    pub in_bytes: LogNormalSpec,
    pub out_bytes: LogNormalSpec,
    pub duration_ms: LogNormalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    #[serde(with = "mac_text")]
    pub mac: MacAddr,
    /// Address inside the home network.
    pub internal_ip: Ipv4Addr,
    /// Public address of the home router; all of the device's traffic is
    /// seen from it.
    pub home_ip: Ipv4Addr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnsSpec {
    /// IP-ID increase per DNS request.
    pub ipid_slope: f64,
    /// Integer noise drawn uniformly from `[-ipid_noise, ipid_noise]`.
    #[serde(default)]
    pub ipid_noise: u32,
    pub qnames: Vec<String>,
    pub mean_iat_s: f64,
    #[serde(default = "default_resolver")]
    pub resolver: Ipv4Addr,
}

mod mac_text {
    use natscope_core::flowdata::MacAddr;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(mac: &MacAddr, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(mac)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<MacAddr, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

fn default_resolver() -> Ipv4Addr {
    Ipv4Addr::new(8, 8, 8, 8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTrafficSpec {
    /// Model id (`type.make.version`) or `non-IoT`.
    pub label: String,
    pub services: Vec<ServiceSpec>,
    /// `(tos, weight)` pairs; applied to both TOS fields.
    #[serde(default = "default_tos")]
    pub tos: Vec<(u8, f64)>,
    pub mean_iat_s: f64,
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub dns: Option<DnsSpec>,
}

fn default_tos() -> Vec<(u8, f64)> {
    vec![(0, 1.0)]
}

/// `target` draws `fraction` of its flows from `source`'s service table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapSpec {
    pub source: String,
    pub target: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub seed: u64,
    pub flows_per_device: usize,
    pub start_ms: u64,
    /// DNS is generated for this long after each device's first request.
    #[serde(default)]
    pub dns_duration_s: u64,
    pub specs: Vec<ModelTrafficSpec>,
    #[serde(default)]
    pub overlaps: Vec<OverlapSpec>,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(format!("scenario {:?}: {m}", self.name)));
        let mut labels = BTreeSet::new();
        let mut macs = BTreeSet::new();
        for s in &self.specs {
            match Label::parse(&s.label) {
                Ok(Label::Unlabeled) | Err(_) => return err(format!("bad label {:?}", s.label)),
                Ok(Label::Model(_)) if !labels.insert(s.label.as_str()) => {
                    return err(format!("duplicate model {}", s.label));
                }
                Ok(_) => {}
            }
            if s.services.is_empty() {
                return err(format!("{}: no services", s.label));
            }
            check_weights(s.services.iter().map(|x| x.weight), &s.label, "service")?;
            check_weights(s.tos.iter().map(|x| x.1), &s.label, "tos")?;
            for svc in &s.services {
                svc.in_bytes.validate(&s.label)?;
                svc.out_bytes.validate(&s.label)?;
                svc.duration_ms.validate(&s.label)?;
            }
            if !(s.mean_iat_s > 0.0 && s.mean_iat_s.is_finite()) {
                return err(format!("{}: mean_iat_s must be positive", s.label));
            }
            if s.devices.is_empty() {
                return err(format!("{}: no devices", s.label));
            }
            for d in &s.devices {
                if !macs.insert(d.mac) {
                    return err(format!("duplicate MAC {}", d.mac));
                }
            }
            if let Some(dns) = &s.dns {
                if !(dns.ipid_slope > 0.0 && dns.ipid_slope.is_finite()) {
                    return err(format!("{}: ipid_slope must be positive", s.label));
                }
                if !(dns.mean_iat_s > 0.0 && dns.mean_iat_s.is_finite()) {
                    return err(format!("{}: dns mean_iat_s must be positive", s.label));
                }
                if dns.qnames.is_empty() || dns.qnames.iter().any(|q| normalize_qname(q).is_none()) {
                    return err(format!("{}: qnames must be non-empty", s.label));
                }
            }
        }
        for o in &self.overlaps {
            if !labels.contains(o.source.as_str()) || !labels.contains(o.target.as_str()) || o.source == o.target {
                return err(format!("overlap {} -> {} must name two distinct models", o.source, o.target));
            }
            if !(0.0..=1.0).contains(&o.fraction) {
                return err(format!("overlap fraction {} outside [0, 1]", o.fraction));
            }
        }
        Ok(())
    }

    pub fn inventory(&self) -> Result<DeviceInventory> {
        let entries = self
            .specs
            .iter()
            .flat_map(|s| {
                let label = Label::parse(&s.label).expect("validated label");
                s.devices.iter().map(move |d| InventoryEntry {
                    mac: d.mac,
                    internal_ip: d.internal_ip,
                    label: label.clone(),
                })
            })
            .collect();
        Ok(DeviceInventory::new(entries)?)
    }
}

fn check_weights(weights: impl Iterator<Item = f64>, label: &str, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for w in weights {
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::Config(format!("{label}: {what} weights must be positive")));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(Error::Config(format!("{label}: {what} weights sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Reads a scenario file holding one scenario object or a list of them.
pub fn load_scenarios(path: &Path) -> Result<Vec<ScenarioSpec>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<ScenarioSpec>),
        One(Box<ScenarioSpec>),
    }
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let list = match serde_json::from_slice(&bytes)? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(s) => vec![*s],
    };
    let mut names = BTreeSet::new();
    for s in &list {
        if !names.insert(s.name.as_str()) {
            return Err(Error::Config(format!("duplicate scenario name {:?}", s.name)));
        }
        s.validate()?;
    }
    Ok(list)
}

/// A named preset, or a scenario file path optionally suffixed with
/// `#name` to pick one scenario out of several.
pub fn resolve_scenario(arg: &str, seed: Option<u64>) -> Result<ScenarioSpec> {
    let mut spec = match preset(arg) {
        Some(s) => s,
        None => {
            let (path, name) = match arg.rsplit_once('#') {
                Some((p, n)) => (p, Some(n)),
                None => (arg, None),
            };
            let list = load_scenarios(Path::new(path))?;
            match name {
                Some(n) => list
                    .into_iter()
                    .find(|s| s.name == n)
                    .ok_or_else(|| Error::Config(format!("no scenario named {n:?} in {path}")))?,
                None if list.len() == 1 => list.into_iter().next().expect("one scenario"),
                None => return Err(Error::Config(format!("{path} holds several scenarios; select one with {path}#NAME"))),
            }
        }
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    spec.validate()?;
    Ok(spec)
}

fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0xD605_BBB5_8C8A_BBB5) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const FLOW_STREAM: u64 = 1;
const DNS_STREAM: u64 = 2;

struct DeviceJob<'a> {
    spec: &'a ModelTrafficSpec,
    device: &'a DeviceSpec,
    label: Label,
    index: u64,
    borrowed: Option<(&'a ModelTrafficSpec, f64)>,
}

fn device_jobs(scenario: &ScenarioSpec) -> Vec<DeviceJob<'_>> {
    let by_label: BTreeMap<&str, &ModelTrafficSpec> =
        scenario.specs.iter().map(|s| (s.label.as_str(), s)).collect();
    let mut jobs = Vec::new();
    for spec in &scenario.specs {
        let borrowed = scenario
            .overlaps
            .iter()
            .find(|o| o.target == spec.label)
            .map(|o| (by_label[o.source.as_str()], o.fraction));
        for device in &spec.devices {
            jobs.push(DeviceJob {
                spec,
                device,
                label: Label::parse(&spec.label).expect("validated label"),
                index: jobs.len() as u64,
                borrowed,
            });
        }
    }
    jobs
}

fn service_dst_ip(svc: &ServiceSpec, rng: &mut ChaCha8Rng) -> Ipv4Addr {
    if svc.dst_ips.is_empty() {
        let [hi, lo] = svc.dst_port.to_be_bytes();
        Ipv4Addr::new(198, 51, hi, lo)
    } else {
        svc.dst_ips[rng.random_range(0..svc.dst_ips.len())]
    }
}

fn device_flows(job: &DeviceJob<'_>, scenario: &ScenarioSpec) -> Vec<LabeledFlow> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, FLOW_STREAM, job.index));
    let own = WeightedIndex::new(job.spec.services.iter().map(|s| s.weight)).expect("validated weights");
    let other = job
        .borrowed
        .map(|(src, f)| (src, f, WeightedIndex::new(src.services.iter().map(|s| s.weight)).expect("validated weights")));
    let tos = WeightedIndex::new(job.spec.tos.iter().map(|t| t.1)).expect("validated weights");
    let iat = Exp::new(1.0 / (job.spec.mean_iat_s * 1000.0)).expect("validated iat");

    let mut t = scenario.start_ms as f64 + rng.random::<f64>() * job.spec.mean_iat_s * 1000.0;
    let mut out = Vec::with_capacity(scenario.flows_per_device);
    for _ in 0..scenario.flows_per_device {
        t += iat.sample(&mut rng);
        let svc = match &other {
            Some((src, fraction, idx)) if rng.random::<f64>() < *fraction => &src.services[idx.sample(&mut rng)],
            _ => &job.spec.services[own.sample(&mut rng)],
        };
        let tos_value = job.spec.tos[tos.sample(&mut rng)].0;
        let start = t.round() as u64;
        let duration = svc.duration_ms.distribution().sample(&mut rng).round() as u64;
        let mut flow = FlowRecord {
            in_bytes: (svc.in_bytes.distribution().sample(&mut rng).round() as u64).max(1),
            out_bytes: svc.out_bytes.distribution().sample(&mut rng).round() as u64,
            src_tos: tos_value,
            dst_tos: tos_value,
            l7_proto_name: svc.l7_proto_name.clone(),
            flow_start_ms: start,
            flow_end_ms: start + duration,
            ..FlowRecord::default()
        };
        flow.key.ingress_interface = 1;
        flow.key.src_ip = job.device.home_ip;
        flow.key.dst_ip = service_dst_ip(svc, &mut rng);
        flow.key.ip_protocol = svc.protocol;
        flow.key.src_port = rng.random_range(32_768..=60_999);
        flow.key.dst_port = svc.dst_port;
        flow.key.tos = tos_value;
        out.push(LabeledFlow::new(flow, job.label.clone(), Some(job.device.mac)));
    }
    out
}

/// Labeled flows of every device ordered by start then end time.
pub fn generate_flows(scenario: &ScenarioSpec) -> Result<FlowDataset> {
    scenario.validate()?;
    let jobs = device_jobs(scenario);
    let per_device: Vec<Vec<LabeledFlow>> = jobs.par_iter().map(|j| device_flows(j, scenario)).collect();
    let mut flows: Vec<LabeledFlow> = per_device.into_iter().flatten().collect();
    flows.sort_by_key(|f| (f.flow.flow_start_ms, f.flow.flow_end_ms));
    Ok(FlowDataset::new(flows))
}

/// Unwrapped IP-IDs `start + slope * i + noise`, held non-decreasing.
pub fn ipid_sequence(rng: &mut impl Rng, start: u16, slope: f64, noise: u32, n: usize) -> Vec<u64> {
    let noise = i64::from(noise);
    let mut prev = 0u64;
    (0..n)
        .map(|i| {
            let jitter = if noise > 0 { rng.random_range(-noise..=noise) } else { 0 };
            let v = (i64::from(start) + (slope * i as f64).round() as i64 + jitter).max(0) as u64;
            prev = if i == 0 { v } else { v.max(prev) };
            prev
        })
        .collect()
}

fn device_dns(job: &DeviceJob<'_>, dns: &DnsSpec, scenario: &ScenarioSpec) -> Vec<DnsEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, DNS_STREAM, job.index));
    let iat = Exp::new(1.0 / (dns.mean_iat_s * 1000.0)).expect("validated iat");
    let first = scenario.start_ms as f64 + rng.random::<f64>() * dns.mean_iat_s * 1000.0;
    let end = first + scenario.dns_duration_s as f64 * 1000.0;
    let mut times = vec![first];
    loop {
        let next = times[times.len() - 1] + iat.sample(&mut rng);
        if next >= end {
            break;
        }
        times.push(next);
    }
    let start_id: u16 = rng.random();
    let ids = ipid_sequence(&mut rng, start_id, dns.ipid_slope, dns.ipid_noise, times.len());
    let names: Vec<String> = dns.qnames.iter().filter_map(|q| normalize_qname(q)).collect();
    // Names are drawn in shuffled rounds so every run of `names.len()`
    // consecutive requests aligned to a round covers the whole set.
    let mut order: Vec<usize> = Vec::with_capacity(times.len());
    while order.len() < times.len() {
        let mut round: Vec<usize> = (0..names.len()).collect();
        round.shuffle(&mut rng);
        order.extend(round);
    }
    times
        .iter()
        .zip(ids)
        .zip(order)
        .map(|((&t, id), q)| DnsEvent {
            timestamp_ms: t.round() as u64,
            observed_src_ip: job.device.home_ip,
            ip_id: (id % 65_536) as u16,
            resolver_ip: dns.resolver,
            qname: names[q].clone(),
            label: job.label.clone(),
        })
        .collect()
}

/// DNS events of every device with a DNS spec, ordered by time.
pub fn generate_dns(scenario: &ScenarioSpec) -> Result<Vec<DnsEvent>> {
    scenario.validate()?;
    let jobs = device_jobs(scenario);
    let per_device: Vec<Vec<DnsEvent>> = jobs
        .par_iter()
        .map(|j| j.spec.dns.as_ref().map_or_else(Vec::new, |d| device_dns(j, d, scenario)))
        .collect();
    let mut events: Vec<DnsEvent> = per_device.into_iter().flatten().collect();
    events.sort_by_key(|e| e.timestamp_ms);
    Ok(events)
}

/// Per observed source, events before `first + round(fraction * spans) *
/// span_ms` go to training and the rest to test, where `spans` is the
/// number of whole spans the source covers.
pub fn split_dns_by_time(events: &[DnsEvent], fraction: f64, span_ms: u64) -> (Vec<DnsEvent>, Vec<DnsEvent>) {
    let mut bounds: BTreeMap<Ipv4Addr, (u64, u64)> = BTreeMap::new();
    for e in events {
        let b = bounds.entry(e.observed_src_ip).or_insert((e.timestamp_ms, e.timestamp_ms));
        b.0 = b.0.min(e.timestamp_ms);
        b.1 = b.1.max(e.timestamp_ms);
    }
    let span = span_ms.max(1);
    let cut: BTreeMap<Ipv4Addr, u64> = bounds
        .into_iter()
        .map(|(ip, (lo, hi))| {
            let spans = (hi - lo) / span + 1;
            (ip, lo + (fraction * spans as f64).round() as u64 * span)
        })
        .collect();
    events.iter().cloned().partition(|e| e.timestamp_ms < cut[&e.observed_src_ip])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSummary {
    pub flows: usize,
    pub dns_events: usize,
}

/// Writes `flows.csv`, `inventory.csv`, `dns.jsonl`, `dns_train.jsonl`,
/// `dns_test.jsonl` and the resolved `scenario.json`.
pub fn write_scenario(scenario: &ScenarioSpec, out_dir: &Path) -> Result<SynthSummary> {
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let flows = generate_flows(scenario)?;
    ingest::save_flow_csv(out_dir.join("flows.csv"), &flows)?;

    let inv_path = out_dir.join("inventory.csv");
    let mut w = csv::Writer::from_path(&inv_path)?;
    w.write_record(["MAC", "IP", "LABEL"])?;
    for e in scenario.inventory()?.entries() {
        w.write_record([e.mac.to_string(), e.internal_ip.to_string(), e.label.to_string()])?;
    }
    w.flush().map_err(Error::io(&inv_path))?;

    let dns = generate_dns(scenario)?;
    ingest::save_dns_jsonl(out_dir.join("dns.jsonl"), &dns)?;
    let (train, test) = split_dns_by_time(&dns, 0.7, 600_000);
    ingest::save_dns_jsonl(out_dir.join("dns_train.jsonl"), &train)?;
    ingest::save_dns_jsonl(out_dir.join("dns_test.jsonl"), &test)?;

    let spec_path = out_dir.join("scenario.json");
    fs::write(&spec_path, serde_json::to_vec_pretty(scenario)?).map_err(Error::io(&spec_path))?;
    Ok(SynthSummary { flows: flows.len(), dns_events: dns.len() })
}

pub const PRESETS: [&str; 3] = ["separable-13", "overlap-pair", "overlap-pair-separable"];
pub const OVERLAP_PAIR: [&str; 2] = ["webcam.Amcrest.IP2M_841", "webcam.Sricam.SP009"];
const DEFAULT_SEED: u64 = 20_240_101;
const START_MS: u64 = 1_704_067_200_000;

pub fn preset(name: &str) -> Option<ScenarioSpec> {
    match name {
        "separable-13" => Some(separable_13()),
        "overlap-pair" => Some(overlap_pair(0.8)),
        "overlap-pair-separable" => Some(overlap_pair(0.0)),
        _ => None,
    }
}

const IOT_MODELS: [&str; 13] = [
    "webcam.Amcrest.IP2M_841",
    "webcam.Sricam.SP009",
    "webcam.D_Link.DCS_933L",
    "plug.TP_Link.HS110",
    "plug.Belkin.Wemo",
    "speaker.Amazon.Echo_Dot",
    "speaker.Google.Home_Mini",
    "bulb.Philips.Hue",
    "hub.Samsung.SmartThings",
    "thermostat.Google.Nest",
    "doorbell.Ring.Pro",
    "tv.Roku.Express",
    "printer.HP.Envy",
];

/// Services spread over a multiplicative grid so each sits at its own point
/// in (in bytes, out bytes, duration) space.
const GRID_SLOTS: usize = 48;
const GRID_STEP: f64 = 1.4;
const SERVICE_SIGMA: f64 = 0.12;

fn grid_service(slot: usize, model: usize, j: usize) -> ServiceSpec {
    let at = |k: usize| GRID_STEP.powi((k % GRID_SLOTS) as i32);
    ServiceSpec {
        weight: 0.0,
        protocol: if j.is_multiple_of(2) { 6 } else { 17 },
        dst_port: 20_000 + (model * 16 + j) as u16,
        l7_proto_name: format!("{}-svc{j}", IOT_MODELS[model].split('.').nth(1).unwrap_or("iot")),
        dst_ips: Vec::new(),
        in_bytes: LogNormalSpec { median: 120.0 * at(slot), sigma: SERVICE_SIGMA },
        out_bytes: LogNormalSpec { median: 90.0 * at(slot * 7 + 3), sigma: SERVICE_SIGMA },
        duration_ms: LogNormalSpec { median: 40.0 * at(slot * 13 + 5), sigma: SERVICE_SIGMA },
    }
}

fn iot_spec(model: usize, slot: &mut usize, device_index: usize) -> ModelTrafficSpec {
    let n_services = 2 + model % 3;
    let raw: Vec<f64> = (0..n_services).map(|j| (n_services - j) as f64).collect();
    let total: f64 = raw.iter().sum();
    let services = raw
        .iter()
        .enumerate()
        .map(|(j, w)| {
            let s = ServiceSpec { weight: w / total, ..grid_service(*slot, model, j) };
            *slot += 1;
            s
        })
        .collect();
    // Three models contact at least three device-facing names; the rest
    // fall below the domain-profile coverage bar.
    let n_names = if model.is_multiple_of(5) { 3 + model % 2 } else { 1 + model % 2 };
    let make = IOT_MODELS[model].split('.').nth(1).unwrap_or("iot").to_lowercase();
    const SLOPES: [f64; 13] = [1.0, 2.0, 3.0, 5.0, 7.0, 9.0, 12.0, 15.0, 19.0, 24.0, 30.0, 38.0, 48.0];
    ModelTrafficSpec {
        label: IOT_MODELS[model].into(),
        services,
        tos: if model % 4 == 3 { vec![(0, 0.7), (40, 0.3)] } else { vec![(0, 1.0)] },
        mean_iat_s: 30.0 + 45.0 * (model % 7) as f64,
        devices: vec![device(device_index)],
        dns: Some(DnsSpec {
            ipid_slope: SLOPES[model],
            ipid_noise: 2,
            qnames: (0..n_names).map(|k| format!("d{k}.{make}-{model}.iot.example")).collect(),
            mean_iat_s: 10.0,
            resolver: default_resolver(),
        }),
    }
}

fn device(i: usize) -> DeviceSpec {
    let i8 = i as u8;
    DeviceSpec {
        mac: MacAddr([0x02, 0, 0, 0, 0, i8]),
        internal_ip: Ipv4Addr::new(192, 168, 1, 10 + i8),
        home_ip: Ipv4Addr::new(203, 0, 113, 10 + i8),
    }
}

fn non_iot_spec(devices: std::ops::Range<usize>) -> ModelTrafficSpec {
    let svc = |weight, protocol, port, l7: &str, inb, outb, dur| ServiceSpec {
        weight,
        protocol,
        dst_port: port,
        l7_proto_name: l7.into(),
        dst_ips: Vec::new(),
        in_bytes: LogNormalSpec { median: inb, sigma: 1.5 },
        out_bytes: LogNormalSpec { median: outb, sigma: 1.8 },
        duration_ms: LogNormalSpec { median: dur, sigma: 1.5 },
    };
    ModelTrafficSpec {
        label: Label::NON_IOT.into(),
        services: vec![
            svc(0.5, 6, 443, "TLS", 2_000.0, 20_000.0, 5_000.0),
            svc(0.2, 17, 443, "QUIC", 3_000.0, 40_000.0, 8_000.0),
            svc(0.15, 17, 53, "DNS", 80.0, 160.0, 30.0),
            svc(0.15, 6, 80, "HTTP", 600.0, 8_000.0, 1_500.0),
        ],
        tos: vec![(0, 1.0)],
        mean_iat_s: 20.0,
        devices: devices.map(device).collect(),
        dns: Some(DnsSpec {
            ipid_slope: 11.0,
            ipid_noise: 40,
            qnames: ["www.google.com", "www.youtube.com", "mail.example.org", "cdn.example.net", "news.example.com"]
                .map(String::from)
                .to_vec(),
            mean_iat_s: 5.0,
            resolver: default_resolver(),
        }),
    }
}

fn separable_13() -> ScenarioSpec {
    let mut slot = 0;
    let mut specs: Vec<ModelTrafficSpec> = (0..IOT_MODELS.len()).map(|m| iot_spec(m, &mut slot, m)).collect();
    specs.push(non_iot_spec(IOT_MODELS.len()..IOT_MODELS.len() + 4));
    ScenarioSpec {
        name: "separable-13".into(),
        seed: DEFAULT_SEED,
        flows_per_device: 2_000,
        start_ms: START_MS,
        dns_duration_s: 6 * 3_600,
        specs,
        overlaps: Vec::new(),
    }
}

/// The two webcams of the 13-model preset plus two non-IoT devices; the
/// second webcam draws `fraction` of its flows from the first's services.
pub fn overlap_pair(fraction: f64) -> ScenarioSpec {
    let mut slot = 0;
    let mut specs: Vec<ModelTrafficSpec> = (0..2).map(|m| iot_spec(m, &mut slot, m)).collect();
    specs.push(non_iot_spec(2..4));
    ScenarioSpec {
        name: if fraction > 0.0 { "overlap-pair".into() } else { "overlap-pair-separable".into() },
        seed: DEFAULT_SEED,
        flows_per_device: 2_000,
        start_ms: START_MS,
        dns_duration_s: 3_600,
        specs,
        overlaps: vec![OverlapSpec {
            source: OVERLAP_PAIR[0].into(),
            target: OVERLAP_PAIR[1].into(),
            fraction,
        }],
    }
}
