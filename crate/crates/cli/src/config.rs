//! Run configuration: built-in defaults, overlaid by a TOML/JSON file,
//! overlaid by command-line flags.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sigmap::eval::HarnessConfig;
use sigmap::gbdt::TrainConfig;
use sigmap::probe::ProbeConfig;
use sigmap::SignatureConfig;

pub const THREADS_ENV: &str = "SIGMAP_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub signature: SignatureConfig,
    pub gbdt: TrainConfig,
    pub probe: ProbeConfig,
    pub seed: u64,
    pub test_fraction: f64,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let h = HarnessConfig::default();
        Self {
            signature: h.signature,
            gbdt: h.gbdt,
            probe: h.probe,
            seed: h.seed,
            test_fraction: h.test_fraction,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn harness(&self) -> HarnessConfig {
        HarnessConfig {
            signature: self.signature,
            gbdt: self.gbdt,
            probe: self.probe,
            seed: self.seed,
            test_fraction: self.test_fraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Flag => "flag",
        })
    }
}

/// Final configuration plus where each setting came from, as
/// `(dotted key, value, source)` in key order.
pub struct Resolved {
    pub config: RunConfig,
    pub provenance: Vec<(String, String, Source)>,
}

pub fn parse_file(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let value: Value = if is_toml {
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
    } else {
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
    };
    if !value.is_object() {
        return Err(format!("{}: top level must be a table", path.display()));
    }
    Ok(value)
}

fn leaves(value: &Value, prefix: &str, out: &mut Vec<(String, Value)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaves(v, &key, out);
            }
        }
        other => out.push((prefix.to_string(), other.clone())),
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) {
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        if !node.is_object() {
            *node = Value::Object(Map::new());
        }
        let map = node.as_object_mut().expect("object");
        if parts.peek().is_none() {
            map.insert(part.to_string(), value);
            return;
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
}

/// Merges `file` and `flags` over the defaults. Errors are config-parse
/// failures.
pub fn resolve(file: Option<&Value>, flags: &[(String, Value)]) -> Result<Resolved, String> {
    let mut merged = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    let mut sources: Vec<(String, Source)> = Vec::new();
    if let Some(file) = file {
        let mut items = Vec::new();
        leaves(file, "", &mut items);
        for (key, value) in items {
            if key == "gbdt.seed" {
                return Err("gbdt.seed is derived from the top-level seed; set `seed` instead".into());
            }
            set_path(&mut merged, &key, value);
            sources.push((key, Source::File));
        }
    }
    for (key, value) in flags {
        set_path(&mut merged, key, value.clone());
        sources.push((key.clone(), Source::Flag));
    }
    let config: RunConfig = serde_json::from_value(merged.clone()).map_err(|e| e.to_string())?;
    if config.threads == Some(0) {
        return Err("threads must be positive".into());
    }

    let mut all = Vec::new();
    leaves(&serde_json::to_value(config).expect("config serializes"), "", &mut all);
    let provenance = all
        .into_iter()
        .filter(|(key, _)| key != "gbdt.seed")
        .map(|(key, value)| {
            let source = sources
                .iter()
                .rev()
                .find(|(k, _)| *k == key || key.starts_with(&format!("{k}.")))
                .map_or(Source::Default, |(_, s)| *s);
            (key, value.to_string(), source)
        })
        .collect();
    Ok(Resolved { config, provenance })
}

/// `--threads`, then `SIGMAP_THREADS`, then the config file, then the
/// hardware default (`None`).
pub fn thread_count(flag: Option<usize>, env: Option<String>, file: Option<usize>) -> Result<Option<usize>, String> {
    if let Some(n) = flag {
        return if n == 0 { Err("--threads must be positive".into()) } else { Ok(Some(n)) };
    }
    if let Some(text) = env {
        return match text.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("{THREADS_ENV} must be a positive integer, got {text:?}")),
        };
    }
    Ok(file)
}
