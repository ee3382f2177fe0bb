//! Metrics, experiment protocols and report emission.

pub mod metrics;
pub mod report;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::features::{build_feature_table, build_table_with, FeatureTable};
use crate::dataset::manifest::{validate_manifest, DatasetManifest};
use crate::dataset::split::split_dataset;
use crate::error::{Error, Result};
use crate::gbdt::{self, feature_importance, ImportanceMap, TrainConfig, TreeEnsemble};
use crate::probe::{extract_probe_features, predict_probe, train_probe, ProbeConfig, ProbeFit};
use crate::seed::{derive_seed, hex_digest};
use crate::types::{ConfidenceScore, DivergenceKind, FeatureVector, SignatureConfig, Split};

pub use metrics::{auc, auprc, brier_score, evaluate, MetricBundle};
pub use report::{emit_report, write_importance, write_scores, Report};

pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

/// Everything a protocol needs besides the manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub signature: SignatureConfig,
    pub gbdt: TrainConfig,
    pub probe: ProbeConfig,
    /// Root seed; the split and boosting streams are derived from it.
    pub seed: u64,
    /// Used only for manifests whose records are all `unsplit`.
    pub test_fraction: f64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            signature: SignatureConfig::default(),
            gbdt: TrainConfig::default(),
            probe: ProbeConfig::default(),
            seed: 0,
            test_fraction: DEFAULT_TEST_FRACTION,
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<()> {
        self.signature.validate()?;
        self.gbdt.validate()?;
        self.probe.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, "split")
    }

    /// Boosting settings with the seed replaced by the derived `gbdt` stream.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: derive_seed(self.seed, "gbdt"), ..self.gbdt }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Signature,
    Probe,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Signature => "signature",
            Method::Probe => "probe",
        }
    }
}

/// Per-instance output of a scored test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub q: f64,
    pub u: f64,
    /// Correctness label `c`.
    pub label: u8,
}

/// Metrics plus the scores they were computed from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodResult {
    pub metrics: MetricBundle,
    #[serde(skip)]
    pub scores: Vec<ScoreRow>,
}

impl MethodResult {
    pub fn from_scores(scores: Vec<ScoreRow>) -> Result<Self> {
        let conf: Vec<ConfidenceScore> =
            scores.iter().map(|s| ConfidenceScore::from_probability(s.q)).collect();
        let labels: Vec<u8> = scores.iter().map(|s| s.label).collect();
        Ok(Self { metrics: evaluate(&conf, &labels)?, scores })
    }
}

/// Returns the manifest unchanged if it is already split, or a seeded split
/// if every record is `unsplit`.
pub fn ensure_split(manifest: &DatasetManifest, cfg: &HarnessConfig) -> Result<DatasetManifest> {
    let unsplit = manifest.records_in(Split::Unsplit).count();
    if unsplit == 0 {
        Ok(manifest.clone())
    } else if unsplit == manifest.records.len() {
        split_dataset(manifest, cfg.test_fraction, cfg.split_seed())
    } else {
        Err(Error::InvalidConfig(format!(
            "manifest {:?} mixes split and unsplit records",
            manifest.dataset_name
        )))
    }
}

fn probe_fingerprint(layer: usize, cfg: &SignatureConfig) -> String {
    let tag = format!("probe:{layer}:{:?}", cfg.aggregation);
    hex_digest(tag.as_bytes())[..32].to_string()
}

/// Raw hidden states of `layer` for every record.
pub fn build_probe_table(
    manifest: &DatasetManifest,
    layer: usize,
    sig: &SignatureConfig,
) -> Result<FeatureTable> {
    build_table_with(manifest, probe_fingerprint(layer, sig), |stack| {
        extract_probe_features(stack, layer, sig.aggregation).map(FeatureVector)
    })
}

/// A split manifest with both feature tables built.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub manifest: DatasetManifest,
    pub signature: FeatureTable,
    pub probe: FeatureTable,
    pub probe_layer: usize,
}

impl PreparedTask {
    pub fn name(&self) -> &str {
        &self.manifest.dataset_name
    }

    pub fn n_train(&self) -> usize {
        self.manifest.records_in(Split::Train).count()
    }

    pub fn n_test(&self) -> usize {
        self.manifest.records_in(Split::Test).count()
    }
}

pub fn prepare_task(manifest: &DatasetManifest, cfg: &HarnessConfig) -> Result<PreparedTask> {
    cfg.validate()?;
    validate_manifest(manifest)?;
    let manifest = ensure_split(manifest, cfg)?;
    let probe_layer = cfg.probe.resolve_layer(manifest.geometry.n_layers())?;
    let signature = build_feature_table(&manifest, &cfg.signature)?;
    let probe = build_probe_table(&manifest, probe_layer, &cfg.signature)?;
    Ok(PreparedTask { manifest, signature, probe, probe_layer })
}

/// Both estimators fit on one task's train split.
#[derive(Debug, Clone)]
pub struct TrainedPair {
    pub signature: TreeEnsemble,
    pub probe: ProbeFit,
}

pub fn train_pair(task: &PreparedTask, cfg: &HarnessConfig) -> Result<TrainedPair> {
    let mut signature = gbdt::train(&task.signature, &cfg.train_config())?;
    signature.signature = Some(cfg.signature);
    let probe = train_probe_on(&task.probe, task.probe_layer, &cfg.probe)?;
    Ok(TrainedPair { signature, probe })
}

/// Fits the probe on the `Train` rows of a probe feature table.
pub fn train_probe_on(table: &FeatureTable, layer: usize, cfg: &ProbeConfig) -> Result<ProbeFit> {
    let rows: Vec<_> = table.rows_in(Split::Train).collect();
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| r.features.0.clone()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| f64::from(r.label)).collect();
    train_probe(&xs, &ys, layer, cfg)
}

/// Scores the test rows of `table` with a signature model.
pub fn score_signature(model: &TreeEnsemble, table: &FeatureTable) -> Result<Vec<ScoreRow>> {
    table
        .rows_in(Split::Test)
        .map(|r| {
            let s = model.predict(r.features.as_slice())?;
            Ok(ScoreRow { id: r.id.clone(), q: s.q(), u: s.u(), label: r.label })
        })
        .collect()
}

pub fn score_probe(fit: &ProbeFit, table: &FeatureTable) -> Result<Vec<ScoreRow>> {
    table
        .rows_in(Split::Test)
        .map(|r| {
            let s = predict_probe(&fit.model, r.features.as_slice())?;
            Ok(ScoreRow { id: r.id.clone(), q: s.q(), u: s.u(), label: r.label })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedResult {
    pub signature: MethodResult,
    pub probe: MethodResult,
}

fn evaluate_pair(models: &TrainedPair, task: &PreparedTask) -> Result<PairedResult> {
    Ok(PairedResult {
        signature: MethodResult::from_scores(score_signature(&models.signature, &task.signature)?)?,
        probe: MethodResult::from_scores(score_probe(&models.probe, &task.probe)?)?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct InDistributionResult {
    pub dataset: String,
    pub n_train: usize,
    pub probe_layer: usize,
    pub probe_converged: bool,
    #[serde(flatten)]
    pub results: PairedResult,
    #[serde(skip)]
    pub models: TrainedPair,
    #[serde(skip)]
    pub importance: ImportanceMap,
    #[serde(skip)]
    pub n_layers: usize,
}

/// Trains both estimators on the train split and evaluates them on the test
/// split of the same dataset.
pub fn run_in_distribution(manifest: &DatasetManifest, cfg: &HarnessConfig) -> Result<InDistributionResult> {
    let task = prepare_task(manifest, cfg)?;
    let models = train_pair(&task, cfg)?;
    let results = evaluate_pair(&models, &task)?;
    Ok(InDistributionResult {
        dataset: task.name().to_string(),
        n_train: task.n_train(),
        probe_layer: task.probe_layer,
        probe_converged: models.probe.converged,
        results,
        importance: feature_importance(&models.signature),
        n_layers: task.manifest.geometry.n_layers(),
        models,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferCell {
    pub train_task: String,
    pub test_task: String,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: MetricBundle,
}

/// Row `a`, column `b`: trained on task `a`, tested on task `b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferMatrix {
    pub method: Method,
    pub tasks: Vec<String>,
    pub cells: Vec<Vec<TransferCell>>,
}

impl TransferMatrix {
    pub fn values(&self, metric: impl Fn(&MetricBundle) -> f64) -> Vec<Vec<f64>> {
        self.cells.iter().map(|row| row.iter().map(|c| metric(&c.metrics)).collect()).collect()
    }
}

/// `100 · (signature − probe)` per cell, with its diagonal and off-diagonal
/// means. The off-diagonal mean is absent for a single task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DifferenceSummary {
    pub metric: String,
    pub values_pp: Vec<Vec<f64>>,
    pub diagonal_mean_pp: f64,
    pub off_diagonal_mean_pp: Option<f64>,
}

/// Diagonal and off-diagonal means of a square matrix, summing in row-major
/// order.
pub fn diagonal_means(values: &[Vec<f64>]) -> (f64, Option<f64>) {
    let k = values.len();
    let (mut diag, mut off) = (0.0, 0.0);
    for (i, row) in values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i == j {
                diag += v;
            } else {
                off += v;
            }
        }
    }
    let off_count = k * k - k;
    (diag / k as f64, (off_count > 0).then(|| off / off_count as f64))
}

pub fn difference_summary(metric: &str, signature: &[Vec<f64>], probe: &[Vec<f64>]) -> DifferenceSummary {
    let values_pp: Vec<Vec<f64>> = signature
        .iter()
        .zip(probe)
        .map(|(s, p)| s.iter().zip(p).map(|(a, b)| 100.0 * (a - b)).collect())
        .collect();
    let (diagonal_mean_pp, off_diagonal_mean_pp) = diagonal_means(&values_pp);
    DifferenceSummary { metric: metric.to_string(), values_pp, diagonal_mean_pp, off_diagonal_mean_pp }
}

#[derive(Debug, Clone, Serialize)]
pub struct TransferResult {
    pub tasks: Vec<String>,
    pub signature: TransferMatrix,
    pub probe: TransferMatrix,
    pub auprc_difference: DifferenceSummary,
    pub brier_difference: DifferenceSummary,
}

fn check_same_geometry(reference: &DatasetManifest, other: &DatasetManifest) -> Result<()> {
    if other.geometry != reference.geometry {
        return Err(Error::GeometryMismatch {
            context: format!("dataset {:?}", other.dataset_name),
            expected_layers: reference.geometry.n_layers(),
            expected_dim: reference.geometry.d_model(),
            found_layers: other.geometry.n_layers(),
            found_dim: other.geometry.d_model(),
        });
    }
    Ok(())
}

/// Every ordered (train task, test task) pair, for both methods.
pub fn run_transfer(manifests: &[DatasetManifest], cfg: &HarnessConfig) -> Result<TransferResult> {
    let first = manifests
        .first()
        .ok_or_else(|| Error::EmptyInput("transfer needs at least one task".into()))?;
    for m in &manifests[1..] {
        check_same_geometry(first, m)?;
        if m.precision_tag != first.precision_tag {
            return Err(Error::InvalidConfig(format!(
                "precision tag {:?} of {:?} differs from {:?}",
                m.precision_tag, m.dataset_name, first.precision_tag
            )));
        }
    }
    let tasks: Vec<PreparedTask> =
        manifests.par_iter().map(|m| prepare_task(m, cfg)).collect::<Result<_>>()?;
    let models: Vec<TrainedPair> =
        tasks.par_iter().map(|t| train_pair(t, cfg)).collect::<Result<_>>()?;

    let names: Vec<String> = tasks.iter().map(|t| t.name().to_string()).collect();
    let mut sig_cells = Vec::with_capacity(tasks.len());
    let mut probe_cells = Vec::with_capacity(tasks.len());
    for (a, pair) in models.iter().enumerate() {
        let row: Vec<PairedResult> =
            tasks.par_iter().map(|test| evaluate_pair(pair, test)).collect::<Result<_>>()?;
        let cell = |b: usize, m: MetricBundle| TransferCell {
            train_task: names[a].clone(),
            test_task: names[b].clone(),
            n_train: tasks[a].n_train(),
            n_test: tasks[b].n_test(),
            metrics: m,
        };
        sig_cells.push(row.iter().enumerate().map(|(b, r)| cell(b, r.signature.metrics)).collect());
        probe_cells.push(row.iter().enumerate().map(|(b, r)| cell(b, r.probe.metrics)).collect());
    }
    let signature = TransferMatrix { method: Method::Signature, tasks: names.clone(), cells: sig_cells };
    let probe = TransferMatrix { method: Method::Probe, tasks: names.clone(), cells: probe_cells };
    let auprc_difference =
        difference_summary("auprc", &signature.values(|m| m.auprc), &probe.values(|m| m.auprc));
    let brier_difference = difference_summary(
        "brier_score",
        &signature.values(|m| m.brier_score),
        &probe.values(|m| m.brier_score),
    );
    Ok(TransferResult { tasks: names, signature, probe, auprc_difference, brier_difference })
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantShiftResult {
    pub dataset: String,
    pub train_precision: String,
    pub shifted_precision: String,
    /// Both methods on the unshifted test split.
    pub reference: PairedResult,
    /// Both methods on the same test ids read from the shifted manifest.
    pub shifted: PairedResult,
}

/// Train on `fp`, then score the test ids of `fp` using the activations
/// recorded in `shifted`.
pub fn run_quantization_shift(
    fp: &DatasetManifest,
    shifted: &DatasetManifest,
    cfg: &HarnessConfig,
) -> Result<QuantShiftResult> {
    check_same_geometry(fp, shifted)?;
    let task = prepare_task(fp, cfg)?;
    let models = train_pair(&task, cfg)?;
    let reference = evaluate_pair(&models, &task)?;

    let by_id: HashMap<&str, _> = shifted.records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut test_manifest = shifted.clone();
    test_manifest.records = task
        .manifest
        .records_in(Split::Test)
        .map(|r| {
            let mut q = (*by_id.get(r.id.as_str()).ok_or_else(|| Error::IdMismatch(r.id.clone()))?).clone();
            if q.label != r.label {
                return Err(Error::InvalidConfig(format!("label of {:?} differs between manifests", r.id)));
            }
            q.split = Split::Test;
            Ok(q)
        })
        .collect::<Result<_>>()?;
    validate_manifest(&test_manifest)?;
    let shifted_task = PreparedTask {
        signature: build_feature_table(&test_manifest, &cfg.signature)?,
        probe: build_probe_table(&test_manifest, task.probe_layer, &cfg.signature)?,
        probe_layer: task.probe_layer,
        manifest: test_manifest,
    };
    Ok(QuantShiftResult {
        dataset: fp.dataset_name.clone(),
        train_precision: fp.precision_tag.clone(),
        shifted_precision: shifted.precision_tag.clone(),
        reference,
        shifted: evaluate_pair(&models, &shifted_task)?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationResult {
    pub dataset: String,
    pub kl: MethodResult,
    pub js: MethodResult,
}

/// The signature pipeline twice, once per divergence.
pub fn run_divergence_ablation(manifest: &DatasetManifest, cfg: &HarnessConfig) -> Result<AblationResult> {
    cfg.validate()?;
    validate_manifest(manifest)?;
    let split = ensure_split(manifest, cfg)?;
    let run = |kind: DivergenceKind| -> Result<MethodResult> {
        let sig = SignatureConfig { divergence: kind, ..cfg.signature };
        let table = build_feature_table(&split, &sig)?;
        let model = gbdt::train(&table, &cfg.train_config())?;
        MethodResult::from_scores(score_signature(&model, &table)?)
    };
    Ok(AblationResult {
        dataset: manifest.dataset_name.clone(),
        kl: run(DivergenceKind::Kl)?,
        js: run(DivergenceKind::Js)?,
    })
}
