//! Report files.
//!
//! | file | content |
//! |---|---|
//! | `metrics.json` | protocol name, task list and every metric bundle |
//! | `transfer_{method}.csv` | K×K AUPRC, header `train_task,<tasks>` |
//! | `transfer_{method}_brier.csv` | K×K Brier score, same layout |
//! | `difference.csv`, `difference_brier.csv` | K×K `100 · (signature − probe)` |
//! | `importance.csv` | L×L split gains, header `layer,0,…,L-1` |
//! | `importance_by_distance.csv` | `distance,gain` for distances `0..L` |
//! | `scores.csv` (and variants) | `id,q,u,label` per test instance |
//!
//! Numbers are written as the shortest decimal that round-trips.

use std::fs;
use std::path::Path;

use serde_json::json;

use crate::dataset::features::format_f64;
use crate::error::{Error, Result};
use crate::eval::{
    AblationResult, InDistributionResult, QuantShiftResult, ScoreRow, TransferMatrix,
    TransferResult,
};
use crate::gbdt::{importance_by_distance, ImportanceMap};

/// What [`emit_report`] writes.
#[derive(Debug, Clone)]
pub struct Report {
    pub protocol: String,
    pub tasks: Vec<String>,
    pub metrics: serde_json::Value,
    pub transfer: Option<TransferResult>,
    /// Gains and the layer count `L`.
    pub importance: Option<(ImportanceMap, usize)>,
    /// `(file stem, rows)` pairs.
    pub scores: Vec<(String, Vec<ScoreRow>)>,
}

fn to_value<T: serde::Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("results serialize")
}

impl Report {
    pub fn in_distribution(r: &InDistributionResult) -> Self {
        Self {
            protocol: "in_distribution".into(),
            tasks: vec![r.dataset.clone()],
            metrics: to_value(r),
            transfer: None,
            importance: Some((r.importance.clone(), r.n_layers)),
            scores: vec![
                ("scores".into(), r.results.signature.scores.clone()),
                ("scores_probe".into(), r.results.probe.scores.clone()),
            ],
        }
    }

    pub fn transfer(r: &TransferResult) -> Self {
        Self {
            protocol: "transfer".into(),
            tasks: r.tasks.clone(),
            metrics: to_value(r),
            transfer: Some(r.clone()),
            importance: None,
            scores: Vec::new(),
        }
    }

    pub fn quantization_shift(r: &QuantShiftResult) -> Self {
        Self {
            protocol: "quantization_shift".into(),
            tasks: vec![r.dataset.clone()],
            metrics: to_value(r),
            transfer: None,
            importance: None,
            scores: vec![
                ("scores".into(), r.shifted.signature.scores.clone()),
                ("scores_probe".into(), r.shifted.probe.scores.clone()),
            ],
        }
    }

    pub fn divergence_ablation(r: &AblationResult) -> Self {
        Self {
            protocol: "divergence_ablation".into(),
            tasks: vec![r.dataset.clone()],
            metrics: to_value(r),
            transfer: None,
            importance: None,
            scores: vec![
                ("scores".into(), r.kl.scores.clone()),
                ("scores_js".into(), r.js.scores.clone()),
            ],
        }
    }
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(row).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_matrix(path: &Path, tasks: &[String], values: &[Vec<f64>]) -> Result<()> {
    let mut header = vec!["train_task".to_string()];
    header.extend(tasks.iter().cloned());
    let rows: Vec<Vec<String>> = tasks
        .iter()
        .zip(values)
        .map(|(t, row)| std::iter::once(t.clone()).chain(row.iter().map(|&v| format_f64(v))).collect())
        .collect();
    write_csv(path, &header, &rows)
}

fn write_transfer(dir: &Path, m: &TransferMatrix) -> Result<()> {
    let name = m.method.name();
    write_matrix(&dir.join(format!("transfer_{name}.csv")), &m.tasks, &m.values(|b| b.auprc))?;
    write_matrix(&dir.join(format!("transfer_{name}_brier.csv")), &m.tasks, &m.values(|b| b.brier_score))
}

/// `id,q,u,label` rows.
pub fn write_scores(path: &Path, scores: &[ScoreRow]) -> Result<()> {
    let header = ["id", "q", "u", "label"].map(String::from);
    let rows: Vec<Vec<String>> = scores
        .iter()
        .map(|s| vec![s.id.clone(), format_f64(s.q), format_f64(s.u), s.label.to_string()])
        .collect();
    write_csv(path, &header, &rows)
}

/// `importance.csv` and `importance_by_distance.csv` in `dir`.
pub fn write_importance(dir: &Path, imp: &ImportanceMap, n_layers: usize) -> Result<()> {
    let matrix = imp.as_matrix(n_layers).ok_or(Error::DimensionMismatch {
        expected: n_layers * n_layers,
        found: imp.gains().len(),
    })?;
    let mut header = vec!["layer".to_string()];
    header.extend((0..n_layers).map(|j| j.to_string()));
    let rows: Vec<Vec<String>> = matrix
        .iter()
        .enumerate()
        .map(|(i, row)| std::iter::once(i.to_string()).chain(row.iter().map(|&g| format_f64(g))).collect())
        .collect();
    write_csv(&dir.join("importance.csv"), &header, &rows)?;

    let by_distance = importance_by_distance(imp, n_layers)?;
    let rows: Vec<Vec<String>> =
        by_distance.iter().enumerate().map(|(d, &g)| vec![d.to_string(), format_f64(g)]).collect();
    write_csv(&dir.join("importance_by_distance.csv"), &["distance".into(), "gain".into()], &rows)
}

/// Writes every file `report` has content for into `out_dir`, creating it.
pub fn emit_report(report: &Report, out_dir: &Path) -> Result<()> {
    if report.tasks.is_empty() {
        return Err(Error::EmptyInput("report has no tasks".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let doc = json!({
        "protocol": report.protocol,
        "tasks": report.tasks,
        "results": report.metrics,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
    text.push('\n');
    let path = out_dir.join("metrics.json");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

    if let Some(t) = &report.transfer {
        write_transfer(out_dir, &t.signature)?;
        write_transfer(out_dir, &t.probe)?;
        write_matrix(&out_dir.join("difference.csv"), &t.tasks, &t.auprc_difference.values_pp)?;
        write_matrix(&out_dir.join("difference_brier.csv"), &t.tasks, &t.brier_difference.values_pp)?;
    }
    if let Some((imp, n_layers)) = &report.importance {
        write_importance(out_dir, imp, *n_layers)?;
    }
    for (stem, rows) in &report.scores {
        write_scores(&out_dir.join(format!("{stem}.csv")), rows)?;
    }
    Ok(())
}
