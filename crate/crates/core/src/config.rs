//! File-backed run configuration (TOML) with `key=value` overrides.
//!
//! ```toml
//! experiment = "permuted_mnist_slnid_h128"
//!
//! [dataset]
//! kind = "permuted-mnist"
//! n_tasks = 5
//!
//! [training]
//! regularizer = "slnid"
//! lambda_ssl = 5e-4
//! hidden = [128, 128]
//! ```
//!
//! Overrides address keys by dotted path (`training.lambda_ssl=0`) or by a
//! bare key when it is unambiguous (`lambda_ssl=0`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::OverlapSpec;
use crate::error::{Error, Result};
use crate::metrics::{ReportFormat, DEFAULT_FREE_THRESHOLD};
use crate::regularizers::RegularizerKind;
use crate::trainer::SequenceConfig;

/// Environment variable consulted when the config gives no dataset path.
pub const DATA_DIR_ENV: &str = "SELFLESS_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data/mnist";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    #[default]
    PermutedMnist,
    SyntheticOverlap,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Hard task boundaries.
    #[default]
    Tasks,
    /// Gradually shifting class distribution over the merged synthetic tasks.
    SoftBoundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// MNIST directory; falls back to `$SELFLESS_DATA_DIR`, then `data/mnist`.
    pub path: Option<PathBuf>,
    pub n_tasks: usize,
    /// Seed of the permutations and synthetic draws; defaults to the training seed.
    pub data_seed: Option<u64>,
    /// Use only the first `train_limit` training examples.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub synthetic: OverlapSpec,
    pub schedule: Schedule,
    pub steps_per_phase: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::PermutedMnist,
            path: None,
            n_tasks: 5,
            data_seed: None,
            train_limit: None,
            test_limit: None,
            synthetic: OverlapSpec::default(),
            schedule: Schedule::Tasks,
            steps_per_phase: 200,
        }
    }
}

impl DatasetConfig {
    pub fn resolved_path(&self) -> PathBuf {
        self.path
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub formats: Vec<ReportFormat>,
    pub histogram_layer: usize,
    pub free_threshold: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            formats: vec![ReportFormat::Json, ReportFormat::Csv],
            histogram_layer: 0,
            free_threshold: DEFAULT_FREE_THRESHOLD,
        }
    }
}

/// Lists expanded into one run per combination; empty lists keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub regularizer: Vec<RegularizerKind>,
    pub lambda_ssl: Vec<f64>,
    pub hidden: Vec<Vec<usize>>,
    pub seed: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: String,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub training: SequenceConfig,
    pub report: ReportConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: "experiment".into(),
            output_dir: PathBuf::from("runs"),
            dataset: DatasetConfig::default(),
            training: SequenceConfig::default(),
            report: ReportConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.message()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
            let message = e.message().to_string();
            let field = unknown_field(&message).unwrap_or_else(|| "<file>".into());
            Error::config(field, message)
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.is_empty() || self.experiment.contains(['/', '\\']) {
            return Err(Error::config(
                "experiment",
                "must be a non-empty name without path separators",
            ));
        }
        self.training.validate()?;
        if self.dataset.n_tasks == 0 {
            return Err(Error::config("dataset.n_tasks", "must be ≥ 1"));
        }
        if self.dataset.train_limit == Some(0) || self.dataset.test_limit == Some(0) {
            return Err(Error::config("dataset.train_limit", "limits must be ≥ 1"));
        }
        if !(0.0..=1.0).contains(&self.dataset.synthetic.overlap) {
            return Err(Error::config("dataset.synthetic.overlap", "must lie in [0, 1]"));
        }
        if self.dataset.schedule == Schedule::SoftBoundary {
            if self.dataset.kind != DatasetKind::SyntheticOverlap {
                return Err(Error::config(
                    "dataset.schedule",
                    "soft boundaries need the synthetic dataset",
                ));
            }
            if self.dataset.steps_per_phase == 0 {
                return Err(Error::config("dataset.steps_per_phase", "must be ≥ 1"));
            }
        }
        if !(self.report.free_threshold > 0.0) {
            return Err(Error::config("report.free_threshold", "must be > 0"));
        }
        if self.report.histogram_layer >= self.training.hidden.len() {
            return Err(Error::config("report.histogram_layer", "no such hidden layer"));
        }
        for v in self.variants() {
            v.training.validate()?;
        }
        Ok(())
    }

    /// The effective configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::config("<report>", e.to_string()))
    }

    /// One config per sweep combination, sweep lists cleared.
    pub fn variants(&self) -> Vec<RunConfig> {
        let s = &self.sweep;
        let or_base = |v: &[RegularizerKind]| {
            if v.is_empty() {
                vec![self.training.regularizer]
            } else {
                v.to_vec()
            }
        };
        let regularizers = or_base(&s.regularizer);
        let lambdas = if s.lambda_ssl.is_empty() {
            vec![self.training.lambda_ssl]
        } else {
            s.lambda_ssl.clone()
        };
        let hiddens = if s.hidden.is_empty() {
            vec![self.training.hidden.clone()]
        } else {
            s.hidden.clone()
        };
        let seeds = if s.seed.is_empty() {
            vec![self.training.seed]
        } else {
            s.seed.clone()
        };
        let mut out = Vec::new();
        for &seed in &seeds {
            for hidden in &hiddens {
                for &regularizer in &regularizers {
                    for &lambda_ssl in &lambdas {
                        let mut c = self.clone();
                        c.sweep = SweepConfig::default();
                        c.training.seed = seed;
                        c.training.hidden = hidden.clone();
                        c.training.regularizer = regularizer;
                        c.training.lambda_ssl = lambda_ssl;
                        out.push(c);
                    }
                }
            }
        }
        out
    }

    /// Directory of this run: `<output_dir>/<experiment>-<seed>`.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir
            .join(format!("{}-{}", self.experiment, self.training.seed))
    }

    /// Short label identifying a sweep variant.
    pub fn variant_label(&self) -> String {
        let hidden: Vec<String> = self.training.hidden.iter().map(usize::to_string).collect();
        format!(
            "{}-h{}-l{}",
            self.training.regularizer.name(),
            hidden.join("x"),
            self.training.lambda_ssl
        )
    }

    pub fn data_seed(&self) -> u64 {
        self.dataset.data_seed.unwrap_or(self.training.seed)
    }
}

fn unknown_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

/// Every dotted key path of a fully populated default config.
fn known_paths() -> Vec<String> {
    fn walk(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
        if let toml::Value::Table(t) = value {
            for (k, v) in t {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                out.push(path.clone());
                walk(&path, v, out);
            }
        }
    }
    let mut out = Vec::new();
    walk(
        "",
        &toml::Value::try_from(RunConfig::default()).expect("config serializes"),
        &mut out,
    );
    // optional fields are absent from the default
    out.extend(
        [
            "dataset.path",
            "dataset.data_seed",
            "dataset.train_limit",
            "dataset.test_limit",
        ]
        .map(String::from),
    );
    out
}

fn resolve_key(key: &str) -> Result<Vec<String>> {
    let paths = known_paths();
    if key.contains('.') || paths.iter().any(|p| p == key) {
        return Ok(key.split('.').map(String::from).collect());
    }
    // sweep lists shadow training keys, so they are only reachable by full path
    let matches: Vec<&String> = paths
        .iter()
        .filter(|p| !p.starts_with("sweep.") && p.rsplit('.').next() == Some(key))
        .collect();
    // prefer the shallowest path, so `n_tasks` means `dataset.n_tasks`
    let depth = |p: &String| p.matches('.').count();
    let shallowest = matches.iter().map(|p| depth(p)).min().unwrap_or(0);
    let matches: Vec<&String> = matches.into_iter().filter(|p| depth(p) == shallowest).collect();
    match matches.as_slice() {
        [one] => Ok(one.split('.').map(String::from).collect()),
        [] => Err(Error::config(key, "unknown key")),
        many => Err(Error::config(
            key,
            format!(
                "ambiguous key; use one of {}",
                many.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            ),
        )),
    }
}

/// Applies one `key=value` override; the value is read as a TOML literal,
/// or as a plain string when it is not one.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let path = resolve_key(key.trim())?;
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let (last, parents) = path.split_last().expect("non-empty path");
    let mut current = table;
    for part in parents {
        let entry = current
            .entry(part.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{part}` is not a section")))?;
    }
    current.insert(last.clone(), value);
    Ok(())
}
