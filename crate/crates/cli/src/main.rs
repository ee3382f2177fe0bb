//! `sigmap`: build signature features, train and evaluate correctness
//! estimators, and run the comparison protocols.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage or configuration error.
//! Failures print one JSON line `{"error": kind, "message": text}` on stderr.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sigmap::dataset::{
    build_feature_table, config_fingerprint, load_manifest, read_feature_table, validate_manifest,
    write_feature_table, write_manifest, DatasetManifest, FeatureTable,
};
use sigmap::eval::{
    build_probe_table, emit_report, ensure_split, run_divergence_ablation, run_in_distribution,
    run_quantization_shift, run_transfer, score_signature, train_probe_on, write_importance,
    MethodResult, Report,
};
use sigmap::gbdt::{self, feature_importance, TreeEnsemble};
use sigmap::synth::{generate_planted, perturb_dataset, shuffle_labels, PlantedSignal};
use sigmap::SignatureConfig;

use crate::config::{parse_file, resolve, thread_count, RunConfig, THREADS_ENV};

#[derive(Parser, Debug)]
#[command(name = "sigmap", version, about = "Cross-layer divergence signatures for answer-correctness estimation")]
struct Cli {
    /// TOML or JSON run configuration (format chosen by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; falls back to SIGMAP_THREADS, then the config file.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Root seed for every random stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the resolved configuration and where each value came from.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DivergenceArg {
    Kl,
    Js,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AggregationArg {
    PerTokenMean,
    LastSelected,
}

#[derive(Args, Debug)]
struct Overrides {
    #[arg(long, global = true, help_heading = "Signature")]
    temperature: Option<f64>,
    /// Contrast transform strength.
    #[arg(long, global = true, help_heading = "Signature", conflicts_with = "no_contrast")]
    alpha: Option<f64>,
    /// Use raw divergences without the contrast transform.
    #[arg(long, global = true, help_heading = "Signature")]
    no_contrast: bool,
    #[arg(long, global = true, value_enum, help_heading = "Signature")]
    divergence: Option<DivergenceArg>,
    #[arg(long, global = true, value_enum, help_heading = "Signature")]
    aggregation: Option<AggregationArg>,

    #[arg(long, global = true, help_heading = "Boosting")]
    n_trees: Option<usize>,
    #[arg(long, global = true, help_heading = "Boosting")]
    learning_rate: Option<f64>,
    #[arg(long, global = true, help_heading = "Boosting")]
    max_leaves: Option<usize>,
    #[arg(long, global = true, help_heading = "Boosting")]
    min_samples_leaf: Option<usize>,
    #[arg(long, global = true, help_heading = "Boosting")]
    l2_lambda: Option<f64>,
    #[arg(long, global = true, help_heading = "Boosting")]
    n_bins: Option<usize>,
    #[arg(long, global = true, help_heading = "Boosting")]
    bagging_fraction: Option<f64>,

    #[arg(long, global = true, help_heading = "Probe")]
    probe_layer: Option<usize>,
    #[arg(long, global = true, help_heading = "Probe")]
    probe_l2: Option<f64>,
    #[arg(long, global = true, help_heading = "Probe")]
    probe_max_iterations: Option<usize>,

    /// Test share when a manifest has no split assignment.
    #[arg(long, global = true)]
    test_fraction: Option<f64>,
}

impl Overrides {
    fn pairs(&self, seed: Option<u64>) -> Vec<(String, Value)> {
        let mut out: Vec<(String, Value)> = Vec::new();
        let mut put = |key: &str, v: Option<Value>| {
            if let Some(v) = v {
                out.push((key.to_string(), v));
            }
        };
        put("seed", seed.map(Value::from));
        put("signature.temperature", self.temperature.map(Value::from));
        put("signature.contrast_alpha", self.alpha.map(Value::from));
        put("signature.contrast_alpha", self.no_contrast.then_some(Value::Null));
        put(
            "signature.divergence",
            self.divergence.map(|d| {
                Value::from(match d {
                    DivergenceArg::Kl => "kl",
                    DivergenceArg::Js => "js",
                })
            }),
        );
        put(
            "signature.aggregation",
            self.aggregation.map(|a| {
                Value::from(match a {
                    AggregationArg::PerTokenMean => "per_token_mean",
                    AggregationArg::LastSelected => "last_selected",
                })
            }),
        );
        put("gbdt.n_trees", self.n_trees.map(Value::from));
        put("gbdt.learning_rate", self.learning_rate.map(Value::from));
        put("gbdt.max_leaves", self.max_leaves.map(Value::from));
        put("gbdt.min_samples_leaf", self.min_samples_leaf.map(Value::from));
        put("gbdt.l2_lambda", self.l2_lambda.map(Value::from));
        put("gbdt.n_bins", self.n_bins.map(Value::from));
        put("gbdt.bagging_fraction", self.bagging_fraction.map(Value::from));
        put("probe.layer_index", self.probe_layer.map(Value::from));
        put("probe.l2_strength", self.probe_l2.map(Value::from));
        put("probe.max_iterations", self.probe_max_iterations.map(Value::from));
        put("test_fraction", self.test_fraction.map(Value::from));
        out
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the signature feature table of a manifest and cache it as CSV.
    Features {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the signature classifier (and optionally the probe).
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
        /// Also fit the linear probe and save it here.
        #[arg(long)]
        probe_out: Option<PathBuf>,
        /// Reuse a cached feature table instead of recomputing it.
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Score the test split of a manifest with a trained model.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and test both methods on one dataset.
    InDistribution {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-task transfer matrix over every ordered pair of manifests.
    Transfer {
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on full-precision activations, test on quantized ones.
    Quantshift {
        #[arg(long)]
        fp: PathBuf,
        #[arg(long)]
        q4: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Signature pipeline with KL and with JS divergence.
    AblateDivergence {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split-gain importance map of a trained model.
    Importance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset with a planted signal.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "planted")]
        name: String,
        #[arg(long, default_value_t = 1000)]
        n_instances: usize,
        #[arg(long, default_value_t = 8)]
        n_layers: usize,
        #[arg(long, default_value_t = 32)]
        d_model: usize,
        #[arg(long, default_value_t = 0.4)]
        margin: f64,
        #[arg(long, default_value_t = 0.3)]
        error_rate: f64,
        /// Also write `manifest_shuffled.json` with permuted labels.
        #[arg(long)]
        shuffled: bool,
    },
    /// Copy a dataset with uniform noise of ±relative·std added per row.
    Perturb {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        relative: f64,
        #[arg(long, default_value = "q4")]
        tag: String,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    ConfigParse(String),
    Domain(sigmap::Error),
}

impl From<sigmap::Error> for Failure {
    fn from(e: sigmap::Error) -> Self {
        Failure::Domain(e)
    }
}

impl Failure {
    fn report(&self) -> ExitCode {
        let (kind, message, code) = match self {
            Failure::Usage(m) => ("Usage", m.clone(), 2),
            Failure::ConfigParse(m) => ("ConfigParse", m.clone(), 2),
            Failure::Domain(e) => (e.kind(), e.to_string(), 1),
        };
        eprintln!("{}", json!({ "error": kind, "message": message }));
        ExitCode::from(code)
    }
}

fn warn(kind: &str, message: String) {
    eprintln!("{}", json!({ "warning": kind, "message": message }));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return Failure::Usage(e.to_string().trim().to_string()).report(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = cli.config.as_deref().map(parse_file).transpose().map_err(Failure::ConfigParse)?;
    let resolved = resolve(file.as_ref(), &cli.overrides.pairs(cli.seed)).map_err(Failure::ConfigParse)?;
    let threads = thread_count(cli.threads, std::env::var(THREADS_ENV).ok(), resolved.config.threads)
        .map_err(Failure::ConfigParse)?;
    if cli.verbose {
        eprintln!("configuration (flag > file > default):");
        for (key, value, source) in &resolved.provenance {
            eprintln!("  {key} = {value} ({source})");
        }
        match threads {
            Some(n) => eprintln!("  threads = {n}"),
            None => eprintln!("  threads = {} (hardware)", rayon::current_num_threads()),
        }
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Failure::Domain(sigmap::Error::InvalidConfig(e.to_string())))?;
    let config = resolved.config;
    pool.install(|| dispatch(cli.command, &config))
}

fn dispatch(command: Command, cfg: &RunConfig) -> Result<(), Failure> {
    let harness = cfg.harness();
    harness.validate()?;
    match command {
        Command::Features { manifest, out } => {
            let m = ensure_split(&load_manifest(&manifest)?, &harness)?;
            validate_manifest(&m)?;
            let table = build_feature_table(&m, &cfg.signature)?;
            create_parent(&out)?;
            write_feature_table(&table, &out)?;
        }
        Command::Train { manifest, model_out, probe_out, features } => {
            let m = ensure_split(&load_manifest(&manifest)?, &harness)?;
            validate_manifest(&m)?;
            let table = match features {
                Some(path) => cached_table(&path, &m, &cfg.signature)?,
                None => build_feature_table(&m, &cfg.signature)?,
            };
            let mut model = gbdt::train(&table, &harness.train_config())?;
            model.signature = Some(cfg.signature);
            create_parent(&model_out)?;
            model.save(&model_out)?;
            if let Some(path) = probe_out {
                let layer = cfg.probe.resolve_layer(m.geometry.n_layers())?;
                let probe_table = build_probe_table(&m, layer, &cfg.signature)?;
                let fit = train_probe_on(&probe_table, layer, &cfg.probe)?;
                if let Some(w) = fit.warning() {
                    warn(w.kind(), w.to_string());
                }
                create_parent(&path)?;
                fit.model.save(&path)?;
            }
        }
        Command::Eval { manifest, model, out } => {
            let m = load_manifest(&manifest)?;
            validate_manifest(&m)?;
            let model = TreeEnsemble::load(&model)?;
            let sig = model.signature.unwrap_or(cfg.signature);
            let m = ensure_split(&m, &harness)?;
            let table = build_feature_table(&m, &sig)?;
            let result = MethodResult::from_scores(score_signature(&model, &table)?)?;
            let report = Report {
                protocol: "eval".into(),
                tasks: vec![m.dataset_name.clone()],
                metrics: json!({ "signature": result }),
                transfer: None,
                importance: None,
                scores: vec![("scores".into(), result.scores.clone())],
            };
            emit_report(&report, &out)?;
        }
        Command::InDistribution { manifest, out } => {
            let r = run_in_distribution(&load_manifest(&manifest)?, &harness)?;
            if let Some(w) = r.models.probe.warning() {
                warn(w.kind(), w.to_string());
            }
            emit_report(&Report::in_distribution(&r), &out)?;
            r.models.signature.save(&out.join("model.json"))?;
            r.models.probe.model.save(&out.join("probe.json"))?;
        }
        Command::Transfer { manifests, out } => {
            let ms = manifests.iter().map(|p| load_manifest(p)).collect::<Result<Vec<_>, _>>()?;
            let r = run_transfer(&ms, &harness)?;
            emit_report(&Report::transfer(&r), &out)?;
        }
        Command::Quantshift { fp, q4, out } => {
            let r = run_quantization_shift(&load_manifest(&fp)?, &load_manifest(&q4)?, &harness)?;
            emit_report(&Report::quantization_shift(&r), &out)?;
        }
        Command::AblateDivergence { manifest, out } => {
            let r = run_divergence_ablation(&load_manifest(&manifest)?, &harness)?;
            emit_report(&Report::divergence_ablation(&r), &out)?;
        }
        Command::Importance { model, out } => {
            let model = TreeEnsemble::load(&model)?;
            let n_layers = (model.feature_dim as f64).sqrt().round() as usize;
            if n_layers * n_layers != model.feature_dim {
                return Err(sigmap::Error::DimensionMismatch {
                    expected: n_layers * n_layers,
                    found: model.feature_dim,
                }
                .into());
            }
            std::fs::create_dir_all(&out).map_err(|e| sigmap::Error::IoFailure { path: out.clone(), source: e })?;
            write_importance(&out, &feature_importance(&model), n_layers)?;
        }
        Command::Synth { out, name, n_instances, n_layers, d_model, margin, error_rate, shuffled } => {
            let spec = PlantedSignal {
                n_layers,
                d_model,
                n_instances,
                margin,
                error_rate,
                seed: cfg.seed,
                ..Default::default()
            };
            let m = generate_planted(&spec, &name, &out)?;
            if shuffled {
                write_manifest(&shuffle_labels(&m, cfg.seed), &out.join("manifest_shuffled.json"))?;
            }
        }
        Command::Perturb { manifest, relative, tag, out } => {
            perturb_dataset(&load_manifest(&manifest)?, relative, cfg.seed, &tag, &out)?;
        }
    }
    Ok(())
}

/// Loads a cached table, checking its fingerprint and that it holds the
/// manifest's records in order with the same split assignment.
fn cached_table(path: &Path, manifest: &DatasetManifest, sig: &SignatureConfig) -> Result<FeatureTable, Failure> {
    let table = read_feature_table(path, Some(&config_fingerprint(sig)))?;
    let same_rows = table.rows.len() == manifest.records.len()
        && table.rows.iter().zip(&manifest.records).all(|(a, b)| a.id == b.id && a.split == b.split && a.label == b.label);
    if !same_rows {
        return Err(sigmap::Error::FeatureTableParse(format!(
            "{} does not match the manifest's records or split",
            path.display()
        ))
        .into());
    }
    Ok(table)
}

fn create_parent(path: &Path) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| sigmap::Error::IoFailure { path: dir.to_path_buf(), source: e })?;
    }
    Ok(())
}
