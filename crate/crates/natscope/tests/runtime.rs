use std::cell::RefCell;
use std::io::Write;
use std::rc::Rc;

use natscope::runtime::{run_detector, Action, ActionPolicy, Decision, DetectionEvent, Detector, Outputs};
use natscope::synth;
use natscope_core::detect::{train_from_split, ThresholdSelector, TrainConfig};
use natscope_core::flowdata::{chronological_split, FlowRecord, Label, SplitRatios};
use natscope_core::iforest::{ForestParams, ModelArtifact};

#[derive(Clone, Default)]
struct Shared(Rc<RefCell<Vec<u8>>>);

impl Write for Shared {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.borrow_mut().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl Shared {
    fn lines(&self) -> Vec<serde_json::Value> {
        String::from_utf8(self.0.borrow().clone())
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }
}

struct Fixture {
    artifacts: Vec<ModelArtifact>,
    test: Vec<(FlowRecord, Label)>,
}

fn fixture() -> Fixture {
    let mut spec = synth::preset("overlap-pair-separable").unwrap();
    spec.flows_per_device = 500;
    let data = synth::generate_flows(&spec).unwrap();
    let split = chronological_split(&data, SplitRatios::default()).unwrap();
    let artifacts = data
        .models()
        .into_iter()
        .map(|m| {
            let cfg = TrainConfig { forest: ForestParams { seed: 5, ..ForestParams::default() }, ..TrainConfig::new(m) };
            train_from_split(&split, &cfg).unwrap().artifact
        })
        .collect();
    let test = split.test.iter().map(|f| (f.flow.clone(), f.label.clone())).collect();
    Fixture { artifacts, test }
}

fn outputs(audit: &Shared, notes: &Shared, blocks: &Shared) -> Outputs<'static> {
    Outputs {
        audit: Box::new(audit.clone()),
        notifications: Box::new(notes.clone()),
        blocks: Box::new(blocks.clone()),
        cascade: None,
    }
}

fn p10() -> ThresholdSelector {
    ThresholdSelector::Percentile(10)
}

#[test]
fn non_model_stream_only_logs() {
    let fx = fixture();
    let a = fx.artifacts[0].clone();
    let negatives: Vec<FlowRecord> = fx
        .test
        .iter()
        .filter(|(_, l)| *l == Label::NonIot)
        .map(|(f, _)| f.clone())
        .collect();
    let mut det = Detector::new(vec![a.clone()], p10(), ActionPolicy::parse("log,notify_stub,block_stub").unwrap()).unwrap();
    let th = a.threshold(p10()).unwrap();
    let mut scorer = natscope_core::detect::Scorer::new(&a);
    let all_negative: Vec<FlowRecord> =
        negatives.into_iter().filter(|f| scorer.normality(f) < th).take(100).collect();
    assert_eq!(all_negative.len(), 100);

    let (audit, notes, blocks) = (Shared::default(), Shared::default(), Shared::default());
    let stats = run_detector(all_negative, &mut det, &mut outputs(&audit, &notes, &blocks)).unwrap();
    assert_eq!((stats.flows, stats.events, stats.positives), (100, 100, 0));
    let events = audit.lines();
    assert_eq!(events.len(), 100);
    assert!(events.iter().all(|e| e["action_taken"] == "log" && e["decision"] == "non-M"));
    assert!(notes.lines().is_empty() && blocks.lines().is_empty());
}

#[test]
fn positive_with_notify_writes_notification() {
    let fx = fixture();
    let a = fx.artifacts[0].clone();
    let own = fx.test.iter().find(|(_, l)| l.is_model(&a.model)).unwrap().0.clone();
    let mut det = Detector::new(vec![a], ThresholdSelector::Default, ActionPolicy::parse("log,notify_stub").unwrap()).unwrap();
    let (audit, notes, blocks) = (Shared::default(), Shared::default(), Shared::default());
    let events = det.process(0, &own, &mut outputs(&audit, &notes, &blocks)).unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].decision, Decision::Model);
    assert_eq!(events[0].action_taken, Action::NotifyStub);
    let n = notes.lines();
    assert_eq!(n.len(), 1);
    assert_eq!(n[0]["model"], events[0].model.as_str());
    assert!(n[0]["timestamp_ms"].is_u64() && n[0]["message"].is_string());
    assert_eq!(audit.lines()[0]["action_taken"], "notify_stub");
}

#[test]
fn two_positive_artifacts_give_two_events() {
    let fx = fixture();
    let a = fx.artifacts[0].clone();
    let own = fx.test.iter().find(|(_, l)| l.is_model(&a.model)).unwrap().0.clone();
    let b = a.clone();
    let mut det = Detector::new(vec![a, b], ThresholdSelector::Default, ActionPolicy::default()).unwrap();
    let events = det.process(3, &own, &mut Outputs::discard()).unwrap();
    assert_eq!(events.len(), 2);
    assert!(events.iter().all(|e| e.decision == Decision::Model && e.flow.index == 3));
}

#[test]
fn decision_is_inclusive_at_threshold() {
    let fx = fixture();
    let mut a = fx.artifacts[0].clone();
    let flow = fx.test[0].0.clone();
    let g = natscope_core::detect::Scorer::new(&a).normality(&flow);
    a.default_threshold = g;
    let mut det = Detector::new(vec![a], ThresholdSelector::Default, ActionPolicy::default()).unwrap();
    let e = det.process(0, &flow, &mut Outputs::discard()).unwrap();
    assert_eq!(e[0].decision, Decision::Model);
    assert_eq!(e[0].normality, e[0].threshold);
}

#[test]
fn permuting_flows_permutes_events() {
    let fx = fixture();
    let flows: Vec<FlowRecord> = fx.test.iter().take(40).map(|(f, _)| f.clone()).collect();
    let mut det = Detector::new(fx.artifacts.clone(), p10(), ActionPolicy::default()).unwrap();
    let score = |det: &mut Detector, fs: &[FlowRecord]| -> Vec<Vec<(f64, Decision)>> {
        fs.iter()
            .enumerate()
            .map(|(i, f)| {
                det.process(i as u64, f, &mut Outputs::discard())
                    .unwrap()
                    .iter()
                    .map(|e| (e.normality, e.decision))
                    .collect()
            })
            .collect()
    };
    let forward = score(&mut det, &flows);
    let mut rev = flows.clone();
    rev.reverse();
    let mut backward = score(&mut det, &rev);
    backward.reverse();
    assert_eq!(forward, backward);
}

#[test]
fn dimension_mismatch_fails_at_startup() {
    let fx = fixture();
    let mut broken = fx.artifacts[0].clone();
    broken.forest = fx.artifacts[1].forest.clone();
    assert_ne!(broken.schema.dimension(), broken.forest.dimension());
    let err = Detector::new(vec![broken], ThresholdSelector::Default, ActionPolicy::default()).err().unwrap();
    assert_eq!(err.code(), "dimension-mismatch");
}

#[test]
fn missing_percentile_fails_at_startup() {
    let fx = fixture();
    let err = Detector::new(fx.artifacts.clone(), ThresholdSelector::Percentile(25), ActionPolicy::default())
        .err()
        .unwrap();
    assert_eq!(err.code(), "uncalibrated");
}

struct Rejecting(Rc<RefCell<u32>>);

impl natscope::runtime::CascadeVerifier for Rejecting {
    fn verify(&mut self, _flow: &FlowRecord, _event: &DetectionEvent) -> bool {
        *self.0.borrow_mut() += 1;
        false
    }
}

#[test]
fn cascade_hook_records_verdict() {
    let fx = fixture();
    let a = fx.artifacts[0].clone();
    let own = fx.test.iter().find(|(_, l)| l.is_model(&a.model)).unwrap().0.clone();
    let calls = Rc::new(RefCell::new(0));
    let mut out = Outputs::discard();
    out.cascade = Some(Box::new(Rejecting(calls.clone())));
    let mut det = Detector::new(vec![a], ThresholdSelector::Default, ActionPolicy::parse("cascade_hook").unwrap()).unwrap();
    let e = det.process(0, &own, &mut out).unwrap();
    assert_eq!(e[0].action_taken, Action::CascadeHook);
    assert_eq!(e[0].cascade_verdict, Some(false));
    assert_eq!(*calls.borrow(), 1);
}

#[test]
fn classify_properties_on_separable_data() {
    let fx = fixture();
    let a = fx.artifacts[0].clone();
    let spec = synth::preset("overlap-pair-separable").unwrap();
    let model = spec.specs.iter().find(|s| s.label == a.model.to_string()).unwrap();
    let svc = &model.services[0];
    let own: Vec<&FlowRecord> = fx.test.iter().filter(|(_, l)| l.is_model(&a.model)).map(|(f, _)| f).collect();

    // The center of the model's heaviest service.
    let mut typical = own[0].clone();
    typical.key.dst_port = svc.dst_port;
    typical.key.ip_protocol = svc.protocol;
    typical.l7_proto_name = svc.l7_proto_name.clone();
    typical.in_bytes = svc.in_bytes.median.round() as u64;
    typical.out_bytes = svc.out_bytes.median.round() as u64;
    typical.flow_end_ms = typical.flow_start_ms + svc.duration_ms.median.round() as u64;
    let mut det = Detector::new(vec![a.clone()], ThresholdSelector::Default, ActionPolicy::default()).unwrap();
    assert_eq!(det.process(0, &typical, &mut Outputs::discard()).unwrap()[0].decision, Decision::Model);

    let mut det = Detector::new(vec![a], p10(), ActionPolicy::default()).unwrap();
    let hits = own
        .iter()
        .filter(|f| det.process(0, f, &mut Outputs::discard()).unwrap()[0].decision == Decision::Model)
        .count();
    assert!(hits as f64 / own.len() as f64 > 0.8, "{hits}/{}", own.len());

    let mut odd = own[0].clone();
    odd.key.dst_port = 9;
    odd.key.ip_protocol = 132;
    odd.l7_proto_name = "never-seen".into();
    odd.in_bytes = 50_000_000;
    odd.out_bytes = 80_000_000;
    odd.flow_end_ms = odd.flow_start_ms + 3_600_000;
    let e = det.process(0, &odd, &mut Outputs::discard()).unwrap();
    assert_eq!(e[0].decision, Decision::NotModel);
    assert!(e[0].compute_us < 1_000.0);
}
