//! Command-line front end. `main` only maps [`run`]'s result to an exit
//! code.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::{IpAddr, Ipv4Addr};
use std::path::{Path, PathBuf};
use std::sync::mpsc::RecvTimeoutError;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use natscope_core::baselines::domain::{build_domain_profiles, evaluate_domain_detection, DomainConfig};
use natscope_core::baselines::ipid::{evaluate_slope_matching, train_slope_models};
use natscope_core::detect::{calibrate_artifact, train_model, ThresholdSelector, TrainConfig};
use natscope_core::flowdata::{
    chronological_split, filter_model, DeviceInventory, FlowDataset, Label, LabeledFlow,
    SplitRatios,
};
use natscope_core::iforest::ForestParams;
use rayon::prelude::*;

use crate::collector::{self, Collector, DEFAULT_CHANNEL_CAPACITY};
use crate::config::{require, CliConfig};
use crate::error::{Error, Result};
use crate::report::{emit_report, evaluate_artifacts, ReportRow, METHOD_DOMAIN, METHOD_IPID};
use crate::runtime::{run_detector, ActionPolicy, Detector, Outputs, RunStats};
use crate::store::{self, StoredArtifact, TrainingMeta};
use crate::{ingest, synth};

const DEFAULT_COLLECTOR_PORT: u16 = 2055;

/// Fingerprint IoT device models behind a home NAT from NetFlow records.
///
/// Flow CSV: header row with IN_BYTES, OUT_BYTES, SRC_TOS, DST_TOS,
/// PROTOCOL, L4_DST_PORT, L7_PROTO_NAME, FLOW_START_MILLISECONDS,
/// FLOW_END_MILLISECONDS; optional SRC_IP, DST_IP, L4_SRC_PORT,
/// INPUT_INTERFACE, LABEL (type.make.version or non-IoT) and SRC_MAC.
/// Inventory CSV: MAC, IP, LABEL. DNS events: JSON lines with
/// ts_ms, src_ip, ip_id, resolver_ip, qname and optional label.
#[derive(Debug, Parser)]
#[command(name = "natscope", version)]
pub struct Cli {
    /// TOML file with defaults; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic dataset (flows.csv, inventory.csv, dns*.jsonl).
    Synth(SynthArgs),
    /// Split a labeled flow CSV per device in time order into training.csv, validation.csv and test.csv.
    Split(SplitArgs),
    /// Train one artifact per model (`<model>.nsart` plus a `.train.json` sidecar).
    Train(TrainArgs),
    /// Store percentile thresholds computed on validation flows in artifacts.
    Calibrate(CalibrateArgs),
    /// Score a test set with every artifact and write report.csv, report.json and roc_<model>.csv.
    Evaluate(EvaluateArgs),
    /// Classify flows as they arrive and write one JSON audit line per (flow, model).
    Detect(DetectArgs),
    /// Listen for NetFlow v9 and write the decoded flows as CSV.
    Collect(CollectArgs),
    /// Run a DNS-based baseline and write its report.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Preset (separable-13, overlap-pair, overlap-pair-separable) or a
    /// scenario JSON file, optionally `FILE#NAME`.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub flows_per_device: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub inventory: Option<PathBuf>,
    /// training,validation,test fractions summing to 1.
    #[arg(long)]
    pub ratios: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labeled flows. Split by --ratios unless --validation is given, in
    /// which case all of it is training data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub inventory: Option<PathBuf>,
    /// Model id, or `all` for every model in the training data.
    #[arg(long, default_value = "all")]
    pub model: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub subsample: Option<usize>,
    /// Comma-separated calibration percentiles.
    #[arg(long)]
    pub percentiles: Option<String>,
    #[arg(long)]
    pub ratios: Option<String>,
    /// Artifact directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Artifact file or directory of artifacts.
    #[arg(long)]
    pub artifact: PathBuf,
    #[arg(long)]
    pub validation: PathBuf,
    #[arg(long)]
    pub inventory: Option<PathBuf>,
    #[arg(long, default_value = "10", value_delimiter = ',')]
    pub percentile: Vec<u8>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub artifacts: Option<PathBuf>,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub inventory: Option<PathBuf>,
    /// `default` or `p<k>`.
    #[arg(long)]
    pub threshold: Option<String>,
    /// Report directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub artifacts: Option<PathBuf>,
    /// `csv:FILE` or `udp:PORT`.
    #[arg(long)]
    pub input: String,
    /// Actions on a positive decision, e.g. `log,notify_stub,block_stub`.
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub threshold: Option<String>,
    /// Audit log; standard output when absent.
    #[arg(long)]
    pub audit: Option<PathBuf>,
    /// Stub notification log; standard error when absent.
    #[arg(long)]
    pub notify_log: Option<PathBuf>,
    /// Stub block log; standard error when absent.
    #[arg(long)]
    pub block_log: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<IpAddr>,
    #[arg(long)]
    pub max_flows: Option<u64>,
    #[arg(long)]
    pub duration_s: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub bind: Option<IpAddr>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_flows: Option<u64>,
    #[arg(long)]
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Ipid,
    Domain,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    pub kind: BaselineKind,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Relative slope tolerance (ipid).
    #[arg(long, default_value_t = natscope_core::baselines::ipid::DEFAULT_REL_TOLERANCE)]
    pub tolerance: f64,
    /// Requests per test segment (ipid).
    #[arg(long, default_value_t = 50)]
    pub segment_len: usize,
    /// Window length (domain).
    #[arg(long, default_value_t = 600)]
    pub window_s: u64,
    /// Distinct profile names needed in a window (domain).
    #[arg(long, default_value_t = natscope_core::baselines::domain::DEFAULT_MIN_DISTINCT)]
    pub min_distinct: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => cmd_synth(a, &cfg),
        Command::Split(a) => cmd_split(a, &cfg),
        Command::Train(a) => cmd_train(a, &cfg),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Evaluate(a) => cmd_evaluate(a, &cfg),
        Command::Detect(a) => cmd_detect(a, &cfg),
        Command::Collect(a) => cmd_collect(a, &cfg),
        Command::Baseline(a) => cmd_baseline(a, &cfg),
    }
}

fn parse_ratios(s: &str) -> Result<SplitRatios> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::Config(format!("ratios {s:?} are not numbers")))?;
    match parts[..] {
        [a, b, c] => Ok(SplitRatios::new(a, b, c)?),
        _ => Err(Error::Config(format!("ratios {s:?} need three values"))),
    }
}

fn ratios(flag: Option<&str>, cfg: &CliConfig) -> Result<SplitRatios> {
    match (flag, cfg.train.ratios) {
        (Some(s), _) => parse_ratios(s),
        (None, Some([a, b, c])) => Ok(SplitRatios::new(a, b, c)?),
        (None, None) => Ok(SplitRatios::default()),
    }
}

fn parse_percentiles(s: &str) -> Result<Vec<u8>> {
    s.split(',')
        .map(|p| p.trim().parse::<u8>().map_err(|_| Error::Config(format!("bad percentile {p:?}"))))
        .collect()
}

fn selector(flag: Option<&str>, cfg: &CliConfig) -> Result<ThresholdSelector> {
    Ok(flag.or(cfg.detect.threshold.as_deref()).unwrap_or("p10").parse()?)
}

fn existing(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::Config(format!("{} does not exist", path.display())))
    }
}

fn inventory(path: Option<&Path>) -> Result<Option<DeviceInventory>> {
    path.map(|p| ingest::read_inventory(existing(p)?)).transpose()
}

fn load_flows(path: &Path, inv: Option<&DeviceInventory>) -> Result<FlowDataset> {
    let csv = ingest::read_flow_csv(existing(path)?, inv)?;
    if !csv.rejected.is_empty() {
        log::warn!("{}: skipped {} malformed rows", path.display(), csv.rejected.len());
    }
    Ok(csv.dataset)
}

fn cmd_synth(a: SynthArgs, cfg: &CliConfig) -> Result<()> {
    let name = require(a.scenario, cfg.synth.scenario.clone(), "scenario")?;
    let mut spec = synth::resolve_scenario(&name, a.seed)?;
    if let Some(n) = a.flows_per_device {
        spec.flows_per_device = n;
    }
    let summary = synth::write_scenario(&spec, &a.out)?;
    println!("scenario={} flows={} dns_events={} out={}", spec.name, summary.flows, summary.dns_events, a.out.display());
    Ok(())
}

fn cmd_split(a: SplitArgs, cfg: &CliConfig) -> Result<()> {
    let data = require(a.data, cfg.paths.data.clone(), "data")?;
    let r = ratios(a.ratios.as_deref(), cfg)?;
    let inv = inventory(a.inventory.as_deref())?;
    let split = chronological_split(&load_flows(&data, inv.as_ref())?, r)?;
    std::fs::create_dir_all(&a.out).map_err(Error::io(&a.out))?;
    for (name, part) in [("training", &split.training), ("validation", &split.validation), ("test", &split.test)] {
        ingest::save_flow_csv(a.out.join(format!("{name}.csv")), part)?;
    }
    println!(
        "training={} validation={} test={}",
        split.training.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs, cfg: &CliConfig) -> Result<()> {
    let data = require(a.data, cfg.paths.data.clone(), "data")?;
    let out = require(a.out, cfg.paths.artifacts.clone(), "out")?;
    let inv = inventory(a.inventory.as_deref())?;
    let forest = ForestParams {
        n_trees: a.trees.or(cfg.train.trees).unwrap_or(100),
        subsample_size: a.subsample.or(cfg.train.subsample).unwrap_or(256),
        seed: a.seed.or(cfg.train.seed).unwrap_or(0),
    };
    let percentiles = match a.percentiles.as_deref() {
        Some(s) => parse_percentiles(s)?,
        None => cfg.train.percentiles.clone().unwrap_or_else(|| vec![10]),
    };
    let all = load_flows(&data, inv.as_ref())?;
    let (training, validation) = match &a.validation {
        Some(v) => (all, load_flows(v, inv.as_ref())?),
        None => {
            let s = chronological_split(&all, ratios(a.ratios.as_deref(), cfg)?)?;
            (s.training, s.validation)
        }
    };
    let models = if a.model == "all" {
        training.models()
    } else {
        match Label::parse(&a.model)? {
            Label::Model(m) => vec![m],
            _ => return Err(Error::Config(format!("--model {} is not a device model", a.model))),
        }
    };
    if models.is_empty() {
        return Err(Error::Config("no device models in the training data".into()));
    }
    std::fs::create_dir_all(&out).map_err(Error::io(&out))?;
    let results: Vec<Result<(PathBuf, u64)>> = models
        .par_iter()
        .map(|m| {
            let tc = TrainConfig { forest, percentiles: percentiles.clone(), ..TrainConfig::new(m.clone()) };
            train_one(&training, &validation, &tc, &out)
        })
        .collect();
    for r in results {
        let (path, size) = r?;
        println!("{} {size}", path.display());
    }
    Ok(())
}

fn now_unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn train_one(training: &FlowDataset, validation: &FlowDataset, tc: &TrainConfig, out: &Path) -> Result<(PathBuf, u64)> {
    let started = Instant::now();
    let outcome = train_model(&filter_model(training, &tc.model), &filter_model(validation, &tc.model), tc)?;
    let training_time_s = started.elapsed().as_secs_f64();
    if outcome.calibration_skipped {
        log::warn!("{}: no validation flows, only the default threshold is stored", tc.model);
    }
    let path = store::artifact_path(out, &tc.model);
    let size = store::save_artifact(&path, &outcome.artifact)?;
    store::save_meta(
        &path,
        &TrainingMeta {
            model: tc.model.to_string(),
            training_time_s,
            trained_at_unix_ms: now_unix_ms(),
            calibration_skipped: outcome.calibration_skipped,
        },
    )?;
    Ok((path, size))
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let inv = inventory(a.inventory.as_deref())?;
    let validation = load_flows(&a.validation, inv.as_ref())?;
    let paths: Vec<PathBuf> = if existing(&a.artifact)?.is_dir() {
        store::load_artifact_dir(&a.artifact)?.into_iter().map(|s| s.path).collect()
    } else {
        vec![a.artifact.clone()]
    };
    for path in paths {
        let mut artifact = store::load_artifact(&path)?;
        let own = filter_model(&validation, &artifact.model);
        calibrate_artifact(&mut artifact, &own, &a.percentile)?;
        store::save_artifact(&path, &artifact)?;
        if let Some(mut meta) = store::load_meta(&path) {
            meta.calibration_skipped = false;
            store::save_meta(&path, &meta)?;
        }
        let ths: Vec<String> = artifact.calibrated_thresholds.iter().map(|(p, t)| format!("p{p}={t}")).collect();
        println!("{} {}", path.display(), ths.join(" "));
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, cfg: &CliConfig) -> Result<()> {
    let dir = require(a.artifacts, cfg.paths.artifacts.clone(), "artifacts")?;
    let out = require(a.out, cfg.paths.reports.clone(), "out")?;
    let sel = selector(a.threshold.as_deref(), cfg)?;
    let inv = inventory(a.inventory.as_deref())?;
    let test = load_flows(&a.test, inv.as_ref())?;
    let artifacts: Vec<StoredArtifact> = store::load_artifact_dir(existing(&dir)?)?;
    if artifacts.is_empty() {
        return Err(Error::Config(format!("no artifacts in {}", dir.display())));
    }
    let evals = evaluate_artifacts(&artifacts, &test, sel);
    let rows: Vec<ReportRow> = evals.iter().map(|e| e.row.clone()).collect();
    let rocs: Vec<(String, _)> = evals
        .iter()
        .filter_map(|e| e.roc.clone().map(|r| (e.row.model.clone(), r)))
        .collect();
    let files = emit_report(&rows, &rocs, &out)?;
    for r in crate::report::summary_rows(&rows).iter().filter(|r| r.model == "mean") {
        println!(
            "mean roc_auc={} tpr_p10={} fpr_p10={}",
            fmt_opt(r.roc_auc),
            fmt_opt(r.tpr_p10),
            fmt_opt(r.fpr_p10)
        );
    }
    println!("{}", files.csv.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn writer_or(path: Option<&Path>, fallback: fn() -> Box<dyn Write>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) => Ok(Box::new(BufWriter::new(File::create(p).map_err(Error::io(p))?))),
        None => Ok(fallback()),
    }
}

enum Input {
    Csv(PathBuf),
    Udp(u16),
}

fn parse_input(s: &str) -> Result<Input> {
    match s.split_once(':') {
        Some(("csv", f)) if !f.is_empty() => Ok(Input::Csv(f.into())),
        Some(("udp", p)) => p.parse().map(Input::Udp).map_err(|_| Error::Config(format!("bad port in {s:?}"))),
        _ => Err(Error::Config(format!("--input must be csv:FILE or udp:PORT, got {s:?}"))),
    }
}

fn cmd_detect(a: DetectArgs, cfg: &CliConfig) -> Result<()> {
    let dir = require(a.artifacts, cfg.paths.artifacts.clone(), "artifacts")?;
    let input = parse_input(&a.input)?;
    let policy = ActionPolicy::parse(a.policy.as_deref().or(cfg.detect.policy.as_deref()).unwrap_or("log"))?;
    let sel = selector(a.threshold.as_deref(), cfg)?;
    let artifacts = store::load_artifact_dir(existing(&dir)?)?.into_iter().map(|s| s.artifact).collect();
    let mut detector = Detector::new(artifacts, sel, policy)?;
    let mut out = Outputs {
        audit: writer_or(a.audit.as_deref(), || Box::new(io::stdout()))?,
        notifications: writer_or(a.notify_log.as_deref(), || Box::new(io::stderr()))?,
        blocks: writer_or(a.block_log.as_deref(), || Box::new(io::stderr()))?,
        cascade: None,
    };
    let limit = a.max_flows.unwrap_or(u64::MAX);
    let stats = match input {
        Input::Csv(path) => {
            let flows = load_flows(&path, None)?;
            let take = usize::try_from(limit).unwrap_or(usize::MAX);
            run_detector(flows.flows.into_iter().take(take).map(|f| f.flow), &mut detector, &mut out)?
        }
        Input::Udp(port) => {
            let bind = a.bind.or(cfg.collector.bind).unwrap_or(IpAddr::V4(Ipv4Addr::UNSPECIFIED));
            let c = Collector::bind((bind, port)).map_err(Error::io(format!("udp:{port}")))?;
            let (handle, rx) = collector::spawn(c, DEFAULT_CHANNEL_CAPACITY).map_err(Error::io("collector"))?;
            let deadline = a.duration_s.map(|s| Instant::now() + Duration::from_secs_f64(s));
            let mut stats = RunStats::default();
            while stats.flows < limit {
                let wait = match deadline {
                    Some(d) => match d.checked_duration_since(Instant::now()) {
                        Some(w) => w,
                        None => break,
                    },
                    None => Duration::from_secs(3600),
                };
                match rx.recv_timeout(wait) {
                    Ok(flow) => {
                        let events = detector.process(stats.flows, &flow, &mut out)?;
                        stats.flows += 1;
                        stats.events += events.len() as u64;
                        stats.positives +=
                            events.iter().filter(|e| e.decision == crate::runtime::Decision::Model).count() as u64;
                    }
                    Err(RecvTimeoutError::Timeout) => continue,
                    Err(RecvTimeoutError::Disconnected) => break,
                }
            }
            out.flush()?;
            drop(rx);
            handle.stop().map_err(Error::io("collector"))?;
            stats
        }
    };
    log::info!("flows={} events={} positives={}", stats.flows, stats.events, stats.positives);
    Ok(())
}

fn cmd_collect(a: CollectArgs, cfg: &CliConfig) -> Result<()> {
    let port = a.port.or(cfg.collector.port).unwrap_or(DEFAULT_COLLECTOR_PORT);
    let bind = a.bind.or(cfg.collector.bind).unwrap_or(IpAddr::V4(Ipv4Addr::UNSPECIFIED));
    let c = Collector::bind((bind, port)).map_err(Error::io(format!("udp:{port}")))?;
    let (handle, rx) = collector::spawn(c, DEFAULT_CHANNEL_CAPACITY).map_err(Error::io("collector"))?;
    let file = File::create(&a.out).map_err(Error::io(&a.out))?;
    let mut w = ingest::FlowCsvWriter::new(BufWriter::new(file))?;
    let deadline = a.duration_s.map(|s| Instant::now() + Duration::from_secs_f64(s));
    let limit = a.max_flows.unwrap_or(u64::MAX);
    let mut n = 0u64;
    while n < limit {
        let wait = match deadline {
            Some(d) => match d.checked_duration_since(Instant::now()) {
                Some(w) => w,
                None => break,
            },
            None => Duration::from_secs(3600),
        };
        match rx.recv_timeout(wait) {
            Ok(flow) => {
                w.write(&LabeledFlow::new(flow, Label::Unlabeled, None))?;
                w.flush()?;
                n += 1;
            }
            Err(RecvTimeoutError::Timeout) => continue,
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    drop(rx);
    let stats = handle.stop().map_err(Error::io("collector"))?;
    w.flush()?;
    println!("flows={n} datagrams={} malformed={}", stats.datagrams, stats.malformed);
    Ok(())
}

fn cmd_baseline(a: BaselineArgs, cfg: &CliConfig) -> Result<()> {
    let out = require(a.out, cfg.paths.reports.clone(), "out")?;
    let read = |p: &Path| -> Result<Vec<_>> {
        let d = ingest::read_dns_jsonl(existing(p)?)?;
        if !d.rejected.is_empty() {
            log::warn!("{}: skipped {} malformed lines", p.display(), d.rejected.len());
        }
        Ok(d.events)
    };
    let train = read(&a.train)?;
    let test = read(&a.test)?;
    let rows: Vec<ReportRow> = match a.kind {
        BaselineKind::Ipid => {
            let models = train_slope_models(&train);
            evaluate_slope_matching(&test, &models, a.tolerance, a.segment_len)
                .iter()
                .map(|r| ReportRow::from_baseline(METHOD_IPID, r))
                .collect()
        }
        BaselineKind::Domain => {
            let (covered, skipped): (Vec<_>, Vec<_>) =
                build_domain_profiles(&train).into_iter().partition(|p| p.covered());
            let skipped: Vec<String> = skipped.iter().map(|p| p.model.to_string()).collect();
            if !skipped.is_empty() {
                log::info!("not covered (fewer than three server names): {}", skipped.join(", "));
            }
            let dc = DomainConfig { window_ms: a.window_s * 1000, min_distinct: a.min_distinct };
            evaluate_domain_detection(&test, &covered, dc)
                .iter()
                .map(|r| ReportRow::from_baseline(METHOD_DOMAIN, r))
                .collect()
        }
    };
    let files = emit_report(&rows, &[], &out)?;
    for r in &rows {
        println!("{} tpr={} fpr={}", r.model, fmt_opt(r.tpr_default), fmt_opt(r.fpr_default));
    }
    println!("{}", files.csv.display());
    Ok(())
}
