//! Per-model evaluation and the report files: `report.csv`, `report.json`
//! and one `roc_<model>.csv` per evaluated model.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use natscope_core::baselines::BaselineRates;
use natscope_core::detect::ThresholdSelector;
use natscope_core::eval::{confusion_rates, mean_std, model_metrics, time_to_detect, RocPoint};
use natscope_core::flowdata::{filter_model, FlowDataset};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::StoredArtifact;

pub const METHOD_IFOREST: &str = "iforest";
pub const METHOD_IPID: &str = "ipid-slope";
pub const METHOD_DOMAIN: &str = "dns-domain";

/// One line of the results table. Baseline rows carry their single
/// operating point in the `*_default` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    /// Model id, or `mean` / `std` on summary rows.
    pub model: String,
    pub iot: bool,
    pub training_flows: Option<u64>,
    pub validation_flows: Option<u64>,
    pub test_positives: Option<u64>,
    pub test_negatives: Option<u64>,
    pub training_time_s: Option<f64>,
    pub artifact_size_bytes: Option<u64>,
    pub tpr_default: Option<f64>,
    pub fpr_default: Option<f64>,
    pub tpr_p10: Option<f64>,
    pub fpr_p10: Option<f64>,
    pub selector: Option<String>,
    pub tpr_selected: Option<f64>,
    pub fpr_selected: Option<f64>,
    pub roc_auc: Option<f64>,
    pub time_to_detect_s: Option<f64>,
}

impl ReportRow {
    fn empty(method: &str, model: &str) -> Self {
        Self {
            method: method.into(),
            model: model.into(),
            iot: true,
            training_flows: None,
            validation_flows: None,
            test_positives: None,
            test_negatives: None,
            training_time_s: None,
            artifact_size_bytes: None,
            tpr_default: None,
            fpr_default: None,
            tpr_p10: None,
            fpr_p10: None,
            selector: None,
            tpr_selected: None,
            fpr_selected: None,
            roc_auc: None,
            time_to_detect_s: None,
        }
    }

    pub fn from_baseline(method: &str, rates: &BaselineRates) -> Self {
        Self {
            test_positives: Some(rates.positives as u64),
            test_negatives: Some(rates.negatives as u64),
            tpr_default: rates.tpr,
            fpr_default: rates.fpr,
            ..Self::empty(method, &rates.model.to_string())
        }
    }

    fn real_columns_mut(&mut self) -> [&mut Option<f64>; 9] {
        [
            &mut self.training_time_s,
            &mut self.tpr_default,
            &mut self.fpr_default,
            &mut self.tpr_p10,
            &mut self.fpr_p10,
            &mut self.tpr_selected,
            &mut self.fpr_selected,
            &mut self.roc_auc,
            &mut self.time_to_detect_s,
        ]
    }

    fn real_columns(&self) -> [Option<f64>; 9] {
        [
            self.training_time_s,
            self.tpr_default,
            self.fpr_default,
            self.tpr_p10,
            self.fpr_p10,
            self.tpr_selected,
            self.fpr_selected,
            self.roc_auc,
            self.time_to_detect_s,
        ]
    }

    fn int_columns(&self) -> [Option<u64>; 5] {
        [
            self.training_flows,
            self.validation_flows,
            self.test_positives,
            self.test_negatives,
            self.artifact_size_bytes,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelEvaluation {
    pub row: ReportRow,
    pub roc: Option<Vec<RocPoint>>,
}

/// Scores the whole test set with each artifact. Every flow that is not
/// the artifact's model counts as a negative.
pub fn evaluate_artifacts(
    artifacts: &[StoredArtifact],
    test: &FlowDataset,
    selector: ThresholdSelector,
) -> Vec<ModelEvaluation> {
    artifacts.par_iter().map(|s| evaluate_one(s, test, selector)).collect()
}

fn evaluate_one(stored: &StoredArtifact, test: &FlowDataset, selector: ThresholdSelector) -> ModelEvaluation {
    let a = &stored.artifact;
    let started = Instant::now();
    let vectors: Vec<Vec<f64>> = test.iter().map(|f| a.schema.transform(&f.flow).0).collect();
    let preprocess = started.elapsed();
    let started = Instant::now();
    let scores: Vec<(f64, bool)> = vectors
        .iter()
        .zip(test.iter())
        .map(|(v, f)| (a.forest.normality_score(v), f.label.is_model(&a.model)))
        .collect();
    let classify = started.elapsed();
    let per_flow = |d: std::time::Duration| d.as_secs_f64() / test.len().max(1) as f64;

    let metrics = model_metrics(a, &scores);
    let selected = a.threshold(selector).ok().map(|th| confusion_rates(&scores, th));
    let ttd = time_to_detect(&filter_model(test, &a.model), per_flow(preprocess), per_flow(classify)).ok();
    let row = ReportRow {
        training_flows: Some(a.training_flow_count),
        validation_flows: Some(a.validation_flow_count),
        test_positives: Some(metrics.positives as u64),
        test_negatives: Some(metrics.negatives as u64),
        training_time_s: stored.meta.as_ref().map(|m| m.training_time_s),
        artifact_size_bytes: Some(stored.size_bytes),
        tpr_default: metrics.default.tpr,
        fpr_default: metrics.default.fpr,
        tpr_p10: metrics.p10.and_then(|r| r.tpr),
        fpr_p10: metrics.p10.and_then(|r| r.fpr),
        selector: Some(selector.to_string()),
        tpr_selected: selected.and_then(|r| r.tpr),
        fpr_selected: selected.and_then(|r| r.fpr),
        roc_auc: metrics.roc_auc,
        time_to_detect_s: ttd,
        ..ReportRow::empty(METHOD_IFOREST, &a.model.to_string())
    };
    ModelEvaluation { row, roc: metrics.roc }
}

/// `mean` and `std` rows per method over IoT rows; a column is averaged
/// over the rows where it is defined.
pub fn summary_rows(rows: &[ReportRow]) -> Vec<ReportRow> {
    let mut methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    methods.sort_unstable();
    methods.dedup();
    let mut out = Vec::new();
    for method in methods {
        let iot: Vec<&ReportRow> = rows.iter().filter(|r| r.method == method && r.iot).collect();
        if iot.is_empty() {
            continue;
        }
        let mut mean = ReportRow::empty(method, "mean");
        let mut std = ReportRow::empty(method, "std");
        for col in 0..9 {
            if let Some((m, s)) = mean_std(iot.iter().filter_map(|r| r.real_columns()[col])) {
                *mean.real_columns_mut()[col] = Some(m);
                *std.real_columns_mut()[col] = s;
            }
        }
        out.push(mean);
        out.push(std);
    }
    out
}

#[derive(Debug, Serialize)]
struct ReportJson<'a> {
    rows: &'a [ReportRow],
    summary: &'a [ReportRow],
}

pub const CSV_HEADER: [&str; 19] = [
    "method",
    "model",
    "iot",
    "training_flows",
    "validation_flows",
    "test_positives",
    "test_negatives",
    "training_time_s",
    "artifact_size_bytes",
    "tpr_default",
    "fpr_default",
    "tpr_p10",
    "fpr_p10",
    "selector",
    "tpr_selected",
    "fpr_selected",
    "roc_auc",
    "time_to_detect_s",
    "row_kind",
];

fn csv_cells(r: &ReportRow, kind: &str) -> Vec<String> {
    let real = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let int = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
    let [train, val, pos, neg, size] = r.int_columns();
    let [time, tpr_d, fpr_d, tpr_p, fpr_p, tpr_s, fpr_s, auc, ttd] = r.real_columns();
    vec![
        r.method.clone(),
        r.model.clone(),
        r.iot.to_string(),
        int(train),
        int(val),
        int(pos),
        int(neg),
        real(time),
        int(size),
        real(tpr_d),
        real(fpr_d),
        real(tpr_p),
        real(fpr_p),
        r.selector.clone().unwrap_or_default(),
        real(tpr_s),
        real(fpr_s),
        real(auc),
        real(ttd),
        kind.into(),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub roc: Vec<PathBuf>,
}

/// Writes the summary files and one ROC file per entry of `rocs`.
pub fn emit_report(
    rows: &[ReportRow],
    rocs: &[(String, Vec<RocPoint>)],
    out_dir: &Path,
) -> Result<ReportFiles> {
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let summary = summary_rows(rows);

    let csv_path = out_dir.join("report.csv");
    let file = File::create(&csv_path).map_err(Error::io(&csv_path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(csv_cells(r, "model"))?;
    }
    for r in &summary {
        w.write_record(csv_cells(r, "summary"))?;
    }
    w.flush().map_err(Error::io(&csv_path))?;

    let json_path = out_dir.join("report.json");
    let file = File::create(&json_path).map_err(Error::io(&json_path))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &ReportJson { rows, summary: &summary })?;

    let mut roc = Vec::new();
    for (model, points) in rocs {
        let path = out_dir.join(format!("roc_{model}.csv"));
        write_roc(&path, points)?;
        roc.push(path);
    }
    Ok(ReportFiles { csv: csv_path, json: json_path, roc })
}

pub fn write_roc(path: &Path, points: &[RocPoint]) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["fpr", "tpr"])?;
    for p in points {
        w.write_record([p.fpr.to_string(), p.tpr.to_string()])?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_roc(path: &Path) -> Result<Vec<RocPoint>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Config(format!("{}: bad ROC row", path.display())))
        };
        out.push(RocPoint { fpr: num(0)?, tpr: num(1)? });
    }
    Ok(out)
}
