//! Local detector: scores each arriving flow against every loaded artifact
//! and runs the configured actions on positive decisions.

use std::fmt;
use std::io::Write;
use std::net::Ipv4Addr;
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use natscope_core::detect::ThresholdSelector;
use natscope_core::flowdata::FlowRecord;
use natscope_core::iforest::ModelArtifact;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Log,
    NotifyStub,
    BlockStub,
    CascadeHook,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Log => "log",
            Action::NotifyStub => "notify_stub",
            Action::BlockStub => "block_stub",
            Action::CascadeHook => "cascade_hook",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "log" => Ok(Action::Log),
            "notify_stub" => Ok(Action::NotifyStub),
            "block_stub" => Ok(Action::BlockStub),
            "cascade_hook" => Ok(Action::CascadeHook),
            other => Err(Error::Config(format!("unknown action {other:?}"))),
        }
    }
}

/// Ordered actions for positive decisions; `log` is always first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionPolicy {
    on_positive: Vec<Action>,
}

impl ActionPolicy {
    pub fn new(actions: impl IntoIterator<Item = Action>) -> Self {
        let mut on_positive = vec![Action::Log];
        for a in actions {
            if !on_positive.contains(&a) {
                on_positive.push(a);
            }
        }
        Self { on_positive }
    }

    /// Comma-separated action names, e.g. `log,notify_stub`.
    pub fn parse(s: &str) -> Result<Self> {
        let actions = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Action>>>()?;
        Ok(Self::new(actions))
    }

    pub fn actions(&self) -> &[Action] {
        &self.on_positive
    }
}

impl Default for ActionPolicy {
    fn default() -> Self {
        Self::new([])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "M")]
    Model,
    #[serde(rename = "non-M")]
    NotModel,
}

/// Identifies the flow an event refers to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRef {
    pub index: u64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub protocol: u8,
    pub src_port: u16,
    pub dst_port: u16,
    pub flow_start_ms: u64,
    pub flow_end_ms: u64,
}

impl FlowRef {
    fn new(index: u64, f: &FlowRecord) -> Self {
        Self {
            index,
            src_ip: f.key.src_ip,
            dst_ip: f.key.dst_ip,
            protocol: f.key.ip_protocol,
            src_port: f.key.src_port,
            dst_port: f.key.dst_port,
            flow_start_ms: f.flow_start_ms,
            flow_end_ms: f.flow_end_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub timestamp_ms: u64,
    pub flow: FlowRef,
    pub model: String,
    pub normality: f64,
    pub threshold: f64,
    pub decision: Decision,
    pub action_taken: Action,
    /// Secondary verifier verdict when the cascade hook ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cascade_verdict: Option<bool>,
    /// Preprocessing plus scoring time.
    pub compute_us: f64,
}

/// Secondary check run by the `cascade_hook` action.
pub trait CascadeVerifier {
    fn verify(&mut self, flow: &FlowRecord, event: &DetectionEvent) -> bool;
}

#[derive(Debug, Serialize)]
struct StubRecord<'a> {
    timestamp_ms: u64,
    model: &'a str,
    message: String,
}

/// Where events and stub side effects go.
pub struct Outputs<'a> {
    pub audit: Box<dyn Write + 'a>,
    pub notifications: Box<dyn Write + 'a>,
    pub blocks: Box<dyn Write + 'a>,
    pub cascade: Option<Box<dyn CascadeVerifier + 'a>>,
}

impl<'a> Outputs<'a> {
    pub fn discard() -> Self {
        Self {
            audit: Box::new(std::io::sink()),
            notifications: Box::new(std::io::sink()),
            blocks: Box::new(std::io::sink()),
            cascade: None,
        }
    }

    pub fn flush(&mut self) -> Result<()> {
        for w in [&mut self.audit, &mut self.notifications, &mut self.blocks] {
            w.flush().map_err(Error::io("<detector output>"))?;
        }
        Ok(())
    }
}

struct Loaded {
    artifact: ModelArtifact,
    model: String,
    threshold: f64,
}

pub struct Detector {
    loaded: Vec<Loaded>,
    policy: ActionPolicy,
    buf: Vec<f64>,
}

impl Detector {
    /// Fails when an artifact is internally inconsistent or lacks the
    /// selected threshold.
    pub fn new(artifacts: Vec<ModelArtifact>, selector: ThresholdSelector, policy: ActionPolicy) -> Result<Self> {
        if artifacts.is_empty() {
            return Err(Error::Config("detector needs at least one artifact".into()));
        }
        let loaded = artifacts
            .into_iter()
            .map(|artifact| {
                artifact.check().map_err(|source| Error::Artifact {
                    path: artifact.model.to_string().into(),
                    source,
                })?;
                let threshold = artifact.threshold(selector)?;
                Ok(Loaded { model: artifact.model.to_string(), threshold, artifact })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { loaded, policy, buf: Vec::new() })
    }

    pub fn models(&self) -> impl Iterator<Item = &str> {
        self.loaded.iter().map(|l| l.model.as_str())
    }

    /// One event per artifact, in artifact order.
    pub fn process(&mut self, index: u64, flow: &FlowRecord, out: &mut Outputs<'_>) -> Result<Vec<DetectionEvent>> {
        let mut events = Vec::with_capacity(self.loaded.len());
        for l in &self.loaded {
            let started = Instant::now();
            l.artifact.schema.transform_into(flow, &mut self.buf);
            let g = l.artifact.forest.normality_score(&self.buf);
            let compute_us = started.elapsed().as_secs_f64() * 1e6;
            let positive = g >= l.threshold;
            let mut event = DetectionEvent {
                timestamp_ms: now_ms(),
                flow: FlowRef::new(index, flow),
                model: l.model.clone(),
                normality: g,
                threshold: l.threshold,
                decision: if positive { Decision::Model } else { Decision::NotModel },
                action_taken: Action::Log,
                cascade_verdict: None,
                compute_us,
            };
            if positive {
                for &action in self.policy.actions() {
                    run_action(action, flow, &mut event, out)?;
                    event.action_taken = action;
                }
            }
            serde_json::to_writer(&mut out.audit, &event)?;
            out.audit.write_all(b"\n").map_err(Error::io("<audit log>"))?;
            events.push(event);
        }
        Ok(events)
    }
}

fn run_action(action: Action, flow: &FlowRecord, event: &mut DetectionEvent, out: &mut Outputs<'_>) -> Result<()> {
    let stub = |verb: &str| StubRecord {
        timestamp_ms: event.timestamp_ms,
        model: &event.model,
        message: format!(
            "{verb}: flow {} {}:{} -> {}:{} proto {} classified as {} (g={:.4}, th={:.4})",
            event.flow.index,
            flow.key.src_ip,
            flow.key.src_port,
            flow.key.dst_ip,
            flow.key.dst_port,
            flow.key.ip_protocol,
            event.model,
            event.normality,
            event.threshold
        ),
    };
    match action {
        Action::Log => {}
        Action::NotifyStub => {
            serde_json::to_writer(&mut out.notifications, &stub("notify"))?;
            out.notifications.write_all(b"\n").map_err(Error::io("<notifications>"))?;
        }
        Action::BlockStub => {
            serde_json::to_writer(&mut out.blocks, &stub("block"))?;
            out.blocks.write_all(b"\n").map_err(Error::io("<blocks>"))?;
        }
        Action::CascadeHook => {
            if let Some(v) = out.cascade.as_mut() {
                event.cascade_verdict = Some(v.verify(flow, event));
            }
        }
    }
    Ok(())
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    pub flows: u64,
    pub events: u64,
    pub positives: u64,
}

/// Processes flows in arrival order until the source is exhausted.
pub fn run_detector(
    flows: impl IntoIterator<Item = FlowRecord>,
    detector: &mut Detector,
    out: &mut Outputs<'_>,
) -> Result<RunStats> {
    let mut stats = RunStats::default();
    for (i, flow) in flows.into_iter().enumerate() {
        let events = detector.process(i as u64, &flow, out)?;
        stats.flows += 1;
        stats.events += events.len() as u64;
        stats.positives += events.iter().filter(|e| e.decision == Decision::Model).count() as u64;
    }
    out.flush()?;
    Ok(stats)
}
