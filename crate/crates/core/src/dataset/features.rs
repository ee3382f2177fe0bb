//! Per-instance feature tables and their CSV cache.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::manifest::DatasetManifest;
use crate::dataset::sigact::read_activation_file;
use crate::divergence::instance_features;
use crate::error::{Error, Result};
use crate::seed::hex_digest;
use crate::types::{ActivationStack, FeatureVector, SignatureConfig, Split};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub label: u8,
    pub split: Split,
    pub features: FeatureVector,
}

/// Labelled feature vectors for every record of one dataset, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub dataset_name: String,
    /// Identifies the extraction settings the rows were computed with.
    pub fingerprint: String,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn feature_dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.features.len())
    }

    pub fn rows_in(&self, split: Split) -> impl Iterator<Item = &FeatureRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// Copy holding only the rows of `split`.
    pub fn subset(&self, split: Split) -> FeatureTable {
        FeatureTable {
            dataset_name: self.dataset_name.clone(),
            fingerprint: self.fingerprint.clone(),
            rows: self.rows_in(split).cloned().collect(),
        }
    }
}

/// Stable fingerprint of a signature configuration.
pub fn config_fingerprint(cfg: &SignatureConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    hex_digest(&bytes)[..32].to_string()
}

/// Reads every record's stack and maps it through `extract`, in parallel.
///
/// Rows are assembled in manifest order whatever the completion order.
pub fn build_table_with<F>(
    manifest: &DatasetManifest,
    fingerprint: String,
    extract: F,
) -> Result<FeatureTable>
where
    F: Fn(&ActivationStack) -> Result<FeatureVector> + Sync,
{
    let rows = manifest
        .records
        .par_iter()
        .map(|record| {
            let path = manifest.resolve(record);
            let stack = read_activation_file(&path)?;
            let g = stack.geometry();
            if g != manifest.geometry {
                return Err(Error::GeometryMismatch {
                    context: format!("record {:?}", record.id),
                    expected_layers: manifest.geometry.n_layers(),
                    expected_dim: manifest.geometry.d_model(),
                    found_layers: g.n_layers(),
                    found_dim: g.d_model(),
                });
            }
            if stack.token_count() != record.token_count {
                return Err(Error::TokenCountMismatch {
                    id: record.id.clone(),
                    declared: record.token_count,
                    found: stack.token_count(),
                });
            }
            Ok(FeatureRow {
                id: record.id.clone(),
                label: record.label,
                split: record.split,
                features: extract(&stack)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureTable { dataset_name: manifest.dataset_name.clone(), fingerprint, rows })
}

/// Signature features for every record of `manifest`.
pub fn build_feature_table(manifest: &DatasetManifest, cfg: &SignatureConfig) -> Result<FeatureTable> {
    cfg.validate()?;
    build_table_with(manifest, config_fingerprint(cfg), |stack| instance_features(stack, cfg))
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
        Split::Unsplit => "unsplit",
    }
}

fn parse_split(text: &str) -> Result<Split> {
    match text {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        "unsplit" => Ok(Split::Unsplit),
        other => Err(Error::FeatureTableParse(format!("unknown split {other:?}"))),
    }
}

/// Shortest decimal string that parses back to the same `f64`.
pub fn format_f64(value: f64) -> String {
    ryu::Buffer::new().format(value).to_string()
}

#[derive(Debug, Serialize, Deserialize)]
struct TableMeta {
    dataset_name: String,
    fingerprint: String,
    feature_dim: usize,
}

/// Sidecar file carrying the dataset name and fingerprint of a cached table.
pub fn meta_path(csv_path: &Path) -> PathBuf {
    let mut name = csv_path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// CSV with header `id,label,split,f0,…,f{n-1}` plus a JSON sidecar.
pub fn write_feature_table(table: &FeatureTable, path: &Path) -> Result<()> {
    let dim = table.feature_dim();
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "label".into(), "split".into()];
    header.extend((0..dim).map(|f| format!("f{f}")));
    let csv_err = |e: csv::Error| Error::FeatureTableParse(e.to_string());
    writer.write_record(&header).map_err(csv_err)?;
    for row in &table.rows {
        let mut fields = vec![row.id.clone(), row.label.to_string(), split_name(row.split).into()];
        fields.extend(row.features.as_slice().iter().map(|v| format_f64(*v)));
        writer.write_record(&fields).map_err(csv_err)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::FeatureTableParse(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;

    let meta = TableMeta {
        dataset_name: table.dataset_name.clone(),
        fingerprint: table.fingerprint.clone(),
        feature_dim: dim,
    };
    let meta_file = meta_path(path);
    let mut text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    text.push('\n');
    fs::write(&meta_file, text).map_err(|e| Error::io(&meta_file, e))
}

/// Loads a cached table; with `expected_fingerprint` set, a stale cache is an error.
pub fn read_feature_table(path: &Path, expected_fingerprint: Option<&str>) -> Result<FeatureTable> {
    let meta_file = meta_path(path);
    let meta_text = fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
    let meta: TableMeta =
        serde_json::from_str(&meta_text).map_err(|e| Error::FeatureTableParse(e.to_string()))?;
    if let Some(expected) = expected_fingerprint {
        if expected != meta.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: expected.to_string(),
                found: meta.fingerprint,
            });
        }
    }
    let parse_err = |msg: String| Error::FeatureTableParse(msg);
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(e.to_string()))?;
    let header = reader.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    if header.len() != 3 + meta.feature_dim {
        return Err(parse_err(format!(
            "header has {} columns, expected {}",
            header.len(),
            3 + meta.feature_dim
        )));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let label = match &record[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(parse_err(format!("bad label {other:?}"))),
        };
        let features = record
            .iter()
            .skip(3)
            .map(|v| v.parse::<f64>().map_err(|e| parse_err(format!("{v:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(FeatureRow {
            id: record[0].to_string(),
            label,
            split: parse_split(&record[2])?,
            features: FeatureVector(features),
        });
    }
    Ok(FeatureTable { dataset_name: meta.dataset_name, fingerprint: meta.fingerprint, rows })
}
