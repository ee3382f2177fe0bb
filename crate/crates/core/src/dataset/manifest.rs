//! Dataset manifests: a JSON index of labelled activation dumps.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::sigact::read_activation_header;
use crate::error::{Error, Result};
use crate::types::{InstanceRecord, ModelGeometry, Split};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordJson {
    id: String,
    label: i64,
    split: Split,
    activation_path: String,
    token_count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestJson {
    dataset_name: String,
    model_name: String,
    n_layers: usize,
    d_model: usize,
    precision_tag: String,
    records: Vec<RecordJson>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub model_name: String,
    pub geometry: ModelGeometry,
    /// e.g. `fp16`, `int4-weightonly`.
    pub precision_tag: String,
    pub records: Vec<InstanceRecord>,
    /// Directory relative activation paths resolve against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, record: &InstanceRecord) -> PathBuf {
        self.base_dir.join(&record.activation_path)
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &InstanceRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn to_json(&self) -> Result<String> {
        let json = ManifestJson {
            dataset_name: self.dataset_name.clone(),
            model_name: self.model_name.clone(),
            n_layers: self.geometry.n_layers(),
            d_model: self.geometry.d_model(),
            precision_tag: self.precision_tag.clone(),
            records: self
                .records
                .iter()
                .map(|r| RecordJson {
                    id: r.id.clone(),
                    label: i64::from(r.label),
                    split: r.split,
                    activation_path: r.activation_path.to_string_lossy().into_owned(),
                    token_count: r.token_count,
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&json)
            .map_err(|e| Error::ManifestParse(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }
}

/// Parses manifest JSON. Labels and geometry are checked; files are not touched.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<DatasetManifest> {
    let json: ManifestJson =
        serde_json::from_str(text).map_err(|e| Error::ManifestParse(e.to_string()))?;
    let geometry = ModelGeometry::new(json.n_layers, json.d_model)?;
    let records = json
        .records
        .into_iter()
        .map(|r| {
            let label = match r.label {
                0 => 0,
                1 => 1,
                other => return Err(Error::BadLabel { id: r.id, label: other }),
            };
            Ok(InstanceRecord {
                id: r.id,
                label,
                split: r.split,
                activation_path: PathBuf::from(r.activation_path),
                token_count: r.token_count,
            })
        })
        .collect::<Result<_>>()?;
    Ok(DatasetManifest {
        dataset_name: json.dataset_name,
        model_name: json.model_name,
        geometry,
        precision_tag: json.precision_tag,
        records,
        base_dir: base_dir.to_path_buf(),
    })
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(&text, base)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    fs::write(path, manifest.to_json()?).map_err(|e| Error::io(path, e))
}

/// Checks a manifest against the files it references.
///
/// Ids must be unique, every file must exist, and every file header must
/// agree with the first record's geometry (and with the manifest's declared
/// geometry) and with the record's `token_count`. Records come back in
/// manifest order.
pub fn validate_manifest(manifest: &DatasetManifest) -> Result<Vec<InstanceRecord>> {
    if manifest.records.is_empty() {
        return Err(Error::EmptyInput(format!(
            "manifest {:?} has no records",
            manifest.dataset_name
        )));
    }
    let mut seen = HashSet::new();
    let mut first: Option<(usize, usize)> = None;
    for record in &manifest.records {
        if !seen.insert(record.id.as_str()) {
            return Err(Error::DuplicateId(record.id.clone()));
        }
        if record.token_count == 0 {
            return Err(Error::InvalidGeometry(format!("record {:?} has token_count 0", record.id)));
        }
        let path = manifest.resolve(record);
        if !path.is_file() {
            return Err(Error::MissingFile(path));
        }
        let header = read_activation_header(&path)?;
        let found = (header.n_layers, header.d_model);
        let expected = *first.get_or_insert(found);
        if found != expected {
            return Err(Error::GeometryMismatch {
                context: format!("record {:?}", record.id),
                expected_layers: expected.0,
                expected_dim: expected.1,
                found_layers: found.0,
                found_dim: found.1,
            });
        }
        if header.token_count != record.token_count {
            return Err(Error::TokenCountMismatch {
                id: record.id.clone(),
                declared: record.token_count,
                found: header.token_count,
            });
        }
    }
    let declared = (manifest.geometry.n_layers(), manifest.geometry.d_model());
    if let Some(found) = first.filter(|f| *f != declared) {
        return Err(Error::GeometryMismatch {
            context: format!("manifest {:?} header", manifest.dataset_name),
            expected_layers: declared.0,
            expected_dim: declared.1,
            found_layers: found.0,
            found_dim: found.1,
        });
    }
    Ok(manifest.records.clone())
}

/// [`load_manifest`] followed by [`validate_manifest`].
pub fn open_manifest(path: &Path) -> Result<DatasetManifest> {
    let manifest = load_manifest(path)?;
    validate_manifest(&manifest)?;
    Ok(manifest)
}
