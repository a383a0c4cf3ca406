use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::spec::{ExperimentKind, ExperimentSpec};
use crate::error::{Error, Result};
use crate::metrics::{float_or_inf, CurvePoint, DetectionMetrics, ScoreKind};
use crate::train::StepRecord;

/// Written into every report.
pub const VERSION: &str = concat!("oodgat ", env!("CARGO_PKG_VERSION"));

/// Test-set measurements of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub condition: String,
    pub run: String,
    pub split: usize,
    pub split_seed: u64,
    pub seed: u64,
    pub steps: usize,
    pub best_step: usize,
    pub accuracy: f64,
    pub ent: DetectionMetrics,
    pub att: Option<DetectionMetrics>,
}

const DETECTION_FIELDS: [&str; 4] = ["auroc", "aupr", "fpr95", "joint_f1"];

impl RunRecord {
    /// Aggregated metrics as `(name, value)`; attention metrics only when present.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let mut out = vec![("accuracy".to_string(), self.accuracy)];
        for (kind, m) in [
            (ScoreKind::Entropy, Some(&self.ent)),
            (ScoreKind::Attention, self.att.as_ref()),
        ] {
            if let Some(m) = m {
                for (field, v) in DETECTION_FIELDS
                    .iter()
                    .zip([m.auroc, m.aupr, m.fpr95, m.joint_f1])
                {
                    out.push((format!("{}_{field}", kind.as_str()), v));
                }
            }
        }
        out
    }

    /// Output file stem.
    pub fn file_stem(&self) -> String {
        format!("{}-{}", self.condition, self.run)
    }
}

/// Mean and population standard deviation per metric over one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub condition: String,
    pub runs: usize,
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
}

/// Groups runs by condition (first-appearance order) and summarizes each.
/// A metric missing from some run of a condition is left out.
pub fn aggregate(runs: &[RunRecord]) -> Vec<Aggregate> {
    let mut order: Vec<&str> = Vec::new();
    for r in runs {
        if !order.contains(&r.condition.as_str()) {
            order.push(&r.condition);
        }
    }
    order
        .into_iter()
        .map(|cond| {
            let group: Vec<&RunRecord> = runs.iter().filter(|r| r.condition == cond).collect();
            let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for r in &group {
                for (k, v) in r.metrics() {
                    values.entry(k).or_default().push(v);
                }
            }
            let mut mean = BTreeMap::new();
            let mut std = BTreeMap::new();
            for (k, vs) in values.into_iter().filter(|(_, vs)| vs.len() == group.len()) {
                let m = vs.iter().sum::<f64>() / vs.len() as f64;
                let var = vs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vs.len() as f64;
                mean.insert(k.clone(), m);
                std.insert(k, var.sqrt());
            }
            Aggregate {
                condition: cond.to_string(),
                runs: group.len(),
                mean,
                std,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: ExperimentKind,
    pub version: String,
    pub config: ExperimentSpec,
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Line {
    Header {
        experiment: ExperimentKind,
        version: String,
        config: Box<ExperimentSpec>,
    },
    Run(RunRecord),
    Aggregate(Aggregate),
}

const CSV_HEAD: [&str; 8] = [
    "condition",
    "run",
    "split",
    "split_seed",
    "seed",
    "steps",
    "best_step",
    "accuracy",
];

fn csv_header() -> Vec<String> {
    let mut h: Vec<String> = CSV_HEAD.iter().map(|s| s.to_string()).collect();
    for kind in ["ent", "att"] {
        for f in DETECTION_FIELDS.iter().chain(&["joint_threshold"]) {
            h.push(format!("{kind}_{f}"));
        }
    }
    h
}

fn num(v: f64) -> String {
    float_or_inf::format_value(v)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse {
        file: "report.csv".into(),
        line: e.position().map_or(0, |p| p.line() as usize),
        msg: e.to_string(),
    }
}

impl RunReport {
    pub fn new(config: ExperimentSpec, runs: Vec<RunRecord>) -> Self {
        let aggregates = aggregate(&runs);
        RunReport {
            experiment: config.name,
            version: VERSION.to_string(),
            config,
            runs,
            aggregates,
        }
    }

    pub fn aggregate(&self, condition: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.condition == condition)
    }

    /// Mean of `metric` over the runs of `condition`.
    pub fn mean(&self, condition: &str, metric: &str) -> Option<f64> {
        self.aggregate(condition)
            .and_then(|a| a.mean.get(metric).copied())
    }

    pub fn conditions(&self) -> Vec<&str> {
        self.aggregates
            .iter()
            .map(|a| a.condition.as_str())
            .collect()
    }

    /// Header line, one line per run, one line per condition aggregate.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = Line::Header {
            experiment: self.experiment,
            version: self.version.clone(),
            config: Box::new(self.config.clone()),
        };
        let lines = std::iter::once(header)
            .chain(self.runs.iter().cloned().map(Line::Run))
            .chain(self.aggregates.iter().cloned().map(Line::Aggregate));
        for line in lines {
            out.push_str(&serde_json::to_string(&line).expect("report serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut header = None;
        let mut runs = Vec::new();
        let mut aggregates = Vec::new();
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let parsed: Line = serde_json::from_str(line).map_err(|e| Error::Parse {
                file: "report.jsonl".into(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            match parsed {
                Line::Header {
                    experiment,
                    version,
                    config,
                } => header = Some((experiment, version, *config)),
                Line::Run(r) => runs.push(r),
                Line::Aggregate(a) => aggregates.push(a),
            }
        }
        let (experiment, version, config) = header.ok_or_else(|| Error::Parse {
            file: "report.jsonl".into(),
            line: 1,
            msg: "missing header record".into(),
        })?;
        Ok(RunReport {
            experiment,
            version,
            config,
            runs,
            aggregates,
        })
    }

    /// One row per run, then one `mean` row per condition.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(csv_header()).expect("in-memory write");
        for r in &self.runs {
            let mut row = vec![
                r.condition.clone(),
                r.run.clone(),
                r.split.to_string(),
                r.split_seed.to_string(),
                r.seed.to_string(),
                r.steps.to_string(),
                r.best_step.to_string(),
                num(r.accuracy),
            ];
            for m in [Some(&r.ent), r.att.as_ref()] {
                match m {
                    Some(m) => row
                        .extend([m.auroc, m.aupr, m.fpr95, m.joint_f1, m.joint_threshold].map(num)),
                    None => row.extend(std::iter::repeat_n(String::new(), 5)),
                }
            }
            w.write_record(&row).expect("in-memory write");
        }
        for a in &self.aggregates {
            let header = csv_header();
            let row: Vec<String> = header
                .iter()
                .map(|col| match col.as_str() {
                    "condition" => a.condition.clone(),
                    "run" => "mean".into(),
                    "steps" => String::new(),
                    _ => a.mean.get(col).map(|&v| num(v)).unwrap_or_default(),
                })
                .collect();
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Run rows of a CSV written by [`RunReport::to_csv`]; `mean` rows are skipped.
    pub fn runs_from_csv(text: &str) -> Result<Vec<RunRecord>> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header = rd.headers().map_err(csv_err)?.clone();
        if header.iter().collect::<Vec<_>>() != csv_header() {
            return Err(Error::Parse {
                file: "report.csv".into(),
                line: 1,
                msg: "unexpected columns".into(),
            });
        }
        let mut runs = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if &rec[1] == "mean" {
                continue;
            }
            let bad = |msg: String| Error::Parse {
                file: "report.csv".into(),
                line: i + 2,
                msg,
            };
            let f = |k: usize| {
                rec[k]
                    .parse::<f64>()
                    .map_err(|e| bad(format!("column {}: {e}", header[k].to_string())))
            };
            let u = |k: usize| {
                rec[k]
                    .parse::<u64>()
                    .map_err(|e| bad(format!("column {}: {e}", header[k].to_string())))
            };
            let det = |at: usize| -> Result<Option<DetectionMetrics>> {
                if rec[at].is_empty() {
                    return Ok(None);
                }
                Ok(Some(DetectionMetrics {
                    auroc: f(at)?,
                    aupr: f(at + 1)?,
                    fpr95: f(at + 2)?,
                    joint_f1: f(at + 3)?,
                    joint_threshold: f(at + 4)?,
                }))
            };
            runs.push(RunRecord {
                condition: rec[0].to_string(),
                run: rec[1].to_string(),
                split: u(2)? as usize,
                split_seed: u(3)?,
                seed: u(4)?,
                steps: u(5)? as usize,
                best_step: u(6)? as usize,
                accuracy: f(7)?,
                ent: det(8)?.ok_or_else(|| bad("missing entropy metrics".into()))?,
                att: det(13)?,
            });
        }
        Ok(runs)
    }

    /// Fixed-width summary table, values in percent as mean ± std.
    pub fn to_text(&self) -> String {
        let cols = [
            "accuracy",
            "ent_auroc",
            "ent_fpr95",
            "ent_joint_f1",
            "att_auroc",
            "att_fpr95",
            "att_joint_f1",
        ];
        let width = self
            .aggregates
            .iter()
            .map(|a| a.condition.len())
            .max()
            .unwrap_or(0)
            .max(9);
        let mut out = format!(
            "{} ({}), {} runs\n",
            self.experiment,
            self.version,
            self.runs.len()
        );
        let _ = write!(out, "{:<width$}", "condition");
        for c in cols {
            let _ = write!(out, " {c:>13}");
        }
        out.push('\n');
        for a in &self.aggregates {
            let _ = write!(out, "{:<width$}", a.condition);
            for c in cols {
                match (a.mean.get(c), a.std.get(c)) {
                    (Some(m), Some(s)) => {
                        let _ =
                            write!(out, " {:>13}", format!("{:.1}±{:.1}", 100.0 * m, 100.0 * s));
                    }
                    _ => {
                        let _ = write!(out, " {:>13}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    /// Writes `report.jsonl`, `report.csv` and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("report.jsonl", self.to_jsonl()),
            ("report.csv", self.to_csv()),
            ("summary.txt", self.to_text()),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Per-step history as CSV.
pub fn history_csv(records: &[StepRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let head = [
        "step",
        "ce",
        "con",
        "ent",
        "dis",
        "decay",
        "total",
        "val_accuracy",
        "val_auroc_ent",
        "val_auroc_att",
        "composite",
    ];
    w.write_record(head).expect("in-memory write");
    for r in records {
        let l = &r.loss;
        let mut row = vec![r.step.to_string()];
        row.extend(
            [
                l.ce,
                l.con,
                l.ent,
                l.dis,
                l.decay,
                l.total,
                r.val_accuracy,
                r.val_auroc_ent,
            ]
            .map(num),
        );
        row.push(r.val_auroc_att.map(num).unwrap_or_default());
        row.push(num(r.composite));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Curve points as CSV with columns `score,threshold,<x>,<y>`.
pub fn curve_csv(curves: &[(ScoreKind, Vec<CurvePoint>)], x: &str, y: &str) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["score", "threshold", y, x])
        .expect("in-memory write");
    for (kind, points) in curves {
        for p in points {
            w.write_record([
                kind.as_str().to_string(),
                num(p.threshold),
                num(p.y),
                num(p.x),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Parses a file written by [`curve_csv`] back into `(score, threshold, y, x)` rows.
pub fn parse_curve_csv(text: &str) -> Result<Vec<(String, f64, f64, f64)>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let f = |k: usize| {
            rec[k].parse::<f64>().map_err(|e| Error::Parse {
                file: "curve csv".into(),
                line: i + 2,
                msg: e.to_string(),
            })
        };
        out.push((rec[0].to_string(), f(1)?, f(2)?, f(3)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;

    fn det(x: f64) -> DetectionMetrics {
        DetectionMetrics {
            auroc: x,
            aupr: x / 2.0,
            fpr95: 1.0 - x,
            joint_f1: 0.3,
            joint_threshold: f64::INFINITY,
        }
    }

    fn record(cond: &str, i: usize, att: bool) -> RunRecord {
        RunRecord {
            condition: cond.into(),
            run: format!("split{}-seed{}", i / 3, i % 3),
            split: i / 3,
            split_seed: 1000 + (i / 3) as u64,
            seed: (i % 3) as u64,
            steps: 100 + i,
            best_step: 50,
            accuracy: 0.8 + 0.01 * i as f64,
            ent: det(0.7 + 0.013 * i as f64),
            att: att.then(|| det(0.9 - 0.007 * i as f64)),
        }
    }

    fn report(n: usize) -> RunReport {
        let runs = (0..n).map(|i| record("oodgat", i, true)).collect();
        RunReport::new(
            ExperimentSpec::new(ExperimentKind::TrainEval, Architecture::Oodgat),
            runs,
        )
    }

    #[test]
    fn aggregate_matches_recomputation() {
        let r = report(9);
        let acc: Vec<f64> = r.runs.iter().map(|x| x.accuracy).collect();
        let m = acc.iter().sum::<f64>() / 9.0;
        assert!((r.mean("oodgat", "accuracy").unwrap() - m).abs() < 1e-12);
        assert_eq!(r.aggregates[0].runs, 9);
        assert!(r.mean("oodgat", "att_auroc").is_some());
    }

    #[test]
    fn jsonl_round_trip() {
        let r = report(9);
        let back = RunReport::from_jsonl(&r.to_jsonl()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_jsonl(), r.to_jsonl());
    }

    #[test]
    fn csv_arity_and_round_trip() {
        let r = report(9);
        let text = r.to_csv();
        assert_eq!(text.lines().count(), 1 + 9 + 1);
        assert_eq!(RunReport::runs_from_csv(&text).unwrap(), r.runs);
        let empty = report(0).to_csv();
        assert_eq!(empty.lines().count(), 1);
    }

    #[test]
    fn missing_attention_is_blank() {
        let runs = vec![record("gcn", 0, false), record("gcn", 1, false)];
        let r = RunReport::new(
            ExperimentSpec::new(ExperimentKind::TrainEval, Architecture::Gcn),
            runs,
        );
        assert!(r.mean("gcn", "att_auroc").is_none());
        assert_eq!(RunReport::runs_from_csv(&r.to_csv()).unwrap(), r.runs);
        assert!(r.to_text().contains("gcn"));
    }
}
