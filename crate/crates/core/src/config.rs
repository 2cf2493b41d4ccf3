//! Experiment configuration: an INI-style file with `[experiment]`,
//! `[classifier]` and one `[dataset.<name>]` section per corpus.
//!
//! ```text
//! [experiment]
//! seed = 42
//! procedures = all
//!
//! [dataset.eng]
//! path = data/eng.tsv
//!
//! [dataset.toy]
//! synthetic = drift
//! n = 25000
//! seed = 7
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.
//! Any key can be overridden with `section.key=value`.

use std::path::{Path, PathBuf};

use ini::Ini;
use serde::Serialize;
use thiserror::Error;

use crate::classify::TrainParams;
use crate::corpus::DEFAULT_BLOCK_SIZE;
use crate::metrics::Metric;
use crate::resample::{Aggregation, ProcedureId};
use crate::synthetic::SyntheticKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax error: {0}")]
    Parse(String),
    #[error("unknown config section [{0}]")]
    UnknownSection(String),
    #[error("unknown key {key:?} in [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("invalid value {value:?} for {section}.{key}: {reason}")]
    Invalid {
        section: String,
        key: String,
        value: String,
        reason: String,
    },
    #[error("missing required key {section}.{key}")]
    Missing { section: String, key: String },
    #[error("dataset {dataset}: file {path} does not exist")]
    MissingPath { dataset: String, path: PathBuf },
    #[error("dataset {0} needs exactly one of `path` or `synthetic`")]
    AmbiguousSource(String),
    #[error("no [dataset.<name>] sections configured")]
    NoDatasets,
    #[error("malformed override {0:?} (expected section.key=value)")]
    BadOverride(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// The built-in two-plane classifier.
    Builtin,
    /// Fixed per-position predictions read from files.
    External,
    /// Majority-class baseline.
    Majority,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DatasetSource {
    File {
        path: String,
        #[serde(skip)]
        resolved: PathBuf,
    },
    Synthetic { kind: SyntheticKind, n: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSpec {
    pub name: String,
    pub source: DatasetSource,
    /// Predictions file for external mode; `{k}` expands to the in-set index.
    pub predictions: Option<String>,
    #[serde(skip)]
    pub predictions_base: PathBuf,
}

impl DatasetSpec {
    /// Predictions path for in-set `k`.
    pub fn predictions_path(&self, k: usize) -> Option<PathBuf> {
        self.predictions
            .as_ref()
            .map(|p| self.predictions_base.join(p.replace("{k}", &k.to_string())))
    }
}

/// Everything needed to reproduce an experiment.
///
/// The output directory and thread count are left out of the serialized
/// echo: neither changes any result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub block_size: usize,
    pub procedures: Vec<ProcedureId>,
    pub metrics: Vec<Metric>,
    #[serde(skip)]
    pub output_dir: PathBuf,
    #[serde(skip)]
    pub threads: usize,
    pub mode: Mode,
    pub aggregation: Aggregation,
    pub window_fraction: f64,
    pub export_plans: bool,
    pub timings: bool,
    pub classifier: TrainParams,
    pub datasets: Vec<DatasetSpec>,
}

impl ExperimentConfig {
    /// Reads a config file, applying `section.key=value` overrides.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base, overrides)
    }

    pub fn parse(text: &str, base: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut ini = Ini::load_from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            let (lhs, value) = o.split_once('=').ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
            let (section, key) = lhs
                .trim()
                .rsplit_once('.')
                .ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
            if section.is_empty() || key.is_empty() {
                return Err(ConfigError::BadOverride(o.clone()));
            }
            ini.with_section(Some(section)).set(key, value.trim());
        }
        build(&ini, base)
    }

    /// Whether any configured procedure draws random numbers.
    pub fn needs_seed(&self) -> bool {
        self.mode == Mode::Builtin
            || self
                .procedures
                .iter()
                .any(|p| matches!(p, ProcedureId::XvalStratRand | ProcedureId::Seq2to1x10Semi))
    }
}

struct Section<'a> {
    name: &'a str,
    props: &'a ini::Properties,
    allowed: &'static [&'static str],
}

impl<'a> Section<'a> {
    fn check_keys(&self) -> Result<(), ConfigError> {
        for (k, _) in self.props.iter() {
            if !self.allowed.contains(&k) {
                return Err(ConfigError::UnknownKey {
                    section: self.name.to_string(),
                    key: k.to_string(),
                });
            }
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<&'a str> {
        self.props.get(key).map(str::trim)
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| ConfigError::Invalid {
                    section: self.name.to_string(),
                    key: key.to_string(),
                    value: v.to_string(),
                    reason: e.to_string(),
                })
            })
            .transpose()
    }

    fn invalid(&self, key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            section: self.name.to_string(),
            key: key.to_string(),
            value: value.to_string(),
            reason: reason.into(),
        }
    }
}

const EXPERIMENT_KEYS: &[&str] = &[
    "seed",
    "block_size",
    "procedures",
    "metrics",
    "output_dir",
    "threads",
    "mode",
    "aggregation",
    "window_fraction",
    "export_plans",
    "timings",
];
const CLASSIFIER_KEYS: &[&str] = &["lambda", "epochs", "bins_per_axis", "min_df", "max_ngram", "unit_normalize"];
const DATASET_KEYS: &[&str] = &["path", "synthetic", "n", "seed", "predictions"];

fn parse_list<T: std::str::FromStr<Err = String>>(
    section: &Section<'_>,
    key: &str,
    all: &[T],
) -> Result<Option<Vec<T>>, ConfigError>
where
    T: Clone + PartialEq,
{
    let Some(raw) = section.raw(key) else {
        return Ok(None);
    };
    if raw == "all" {
        return Ok(Some(all.to_vec()));
    }
    let mut out: Vec<T> = Vec::new();
    for item in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let v = item.parse::<T>().map_err(|e| section.invalid(key, raw, e))?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(section.invalid(key, raw, "empty list"));
    }
    Ok(Some(out))
}

fn build(ini: &Ini, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    let empty = ini::Properties::new();
    let mut experiment = Section {
        name: "experiment",
        props: &empty,
        allowed: EXPERIMENT_KEYS,
    };
    let mut classifier = Section {
        name: "classifier",
        props: &empty,
        allowed: CLASSIFIER_KEYS,
    };
    let mut dataset_sections = Vec::new();
    for (name, props) in ini.iter() {
        match name {
            None if props.is_empty() => {}
            None => {
                let key = props.iter().next().map(|(k, _)| k).unwrap_or_default();
                return Err(ConfigError::UnknownKey {
                    section: String::new(),
                    key: key.to_string(),
                });
            }
            Some("experiment") => experiment.props = props,
            Some("classifier") => classifier.props = props,
            Some(other) => match other.strip_prefix("dataset.") {
                Some(ds) if !ds.is_empty() => dataset_sections.push(Section {
                    name: other,
                    props,
                    allowed: DATASET_KEYS,
                }),
                _ => return Err(ConfigError::UnknownSection(other.to_string())),
            },
        }
    }
    experiment.check_keys()?;
    classifier.check_keys()?;

    let defaults = TrainParams::default();
    let classifier_params = TrainParams {
        lambda: classifier.get("lambda")?.unwrap_or(defaults.lambda),
        epochs: classifier.get("epochs")?.unwrap_or(defaults.epochs),
        bins_per_axis: classifier.get("bins_per_axis")?.unwrap_or(defaults.bins_per_axis),
        min_df: classifier.get("min_df")?.unwrap_or(defaults.min_df),
        max_ngram: classifier.get("max_ngram")?.unwrap_or(defaults.max_ngram),
        unit_normalize: classifier.get("unit_normalize")?.unwrap_or(defaults.unit_normalize),
    };
    if !(classifier_params.lambda > 0.0) {
        return Err(classifier.invalid("lambda", &classifier_params.lambda.to_string(), "must be positive"));
    }
    if classifier_params.bins_per_axis == 0 || classifier_params.epochs == 0 {
        return Err(classifier.invalid("bins_per_axis/epochs", "0", "must be at least 1"));
    }
    if !(1..=2).contains(&classifier_params.max_ngram) {
        return Err(classifier.invalid("max_ngram", &classifier_params.max_ngram.to_string(), "must be 1 or 2"));
    }

    let mode = match experiment.raw("mode").unwrap_or("builtin") {
        "builtin" => Mode::Builtin,
        "external" => Mode::External,
        "majority" => Mode::Majority,
        other => return Err(experiment.invalid("mode", other, "expected builtin, external or majority")),
    };
    let block_size: usize = experiment.get("block_size")?.unwrap_or(DEFAULT_BLOCK_SIZE);
    if block_size == 0 {
        return Err(experiment.invalid("block_size", "0", "must be positive"));
    }
    let window_fraction: f64 = experiment.get("window_fraction")?.unwrap_or(0.5);
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(experiment.invalid("window_fraction", &window_fraction.to_string(), "must be in (0, 1]"));
    }
    let output_dir = match std::env::var_os("ESTPROC_OUTPUT_DIR") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => base.join(experiment.raw("output_dir").unwrap_or("out")),
    };

    let mut datasets = Vec::new();
    for section in &dataset_sections {
        section.check_keys()?;
        let name = section.name["dataset.".len()..].to_string();
        let source = match (section.raw("path"), section.raw("synthetic")) {
            (Some(path), None) => {
                let resolved = base.join(path);
                if !resolved.is_file() {
                    return Err(ConfigError::MissingPath { dataset: name, path: resolved });
                }
                DatasetSource::File {
                    path: path.to_string(),
                    resolved,
                }
            }
            (None, Some(kind)) => DatasetSource::Synthetic {
                kind: kind.parse().map_err(|e: String| section.invalid("synthetic", kind, e))?,
                n: section.get("n")?.ok_or_else(|| ConfigError::Missing {
                    section: section.name.to_string(),
                    key: "n".into(),
                })?,
                seed: section.get("seed")?.unwrap_or(0),
            },
            _ => return Err(ConfigError::AmbiguousSource(name)),
        };
        let predictions = section.raw("predictions").map(str::to_string);
        if mode == Mode::External && predictions.is_none() {
            return Err(ConfigError::Missing {
                section: section.name.to_string(),
                key: "predictions".into(),
            });
        }
        datasets.push(DatasetSpec {
            name,
            source,
            predictions,
            predictions_base: base.to_path_buf(),
        });
    }
    if datasets.is_empty() {
        return Err(ConfigError::NoDatasets);
    }

    let config = ExperimentConfig {
        seed: experiment.get("seed")?.unwrap_or(0),
        block_size,
        procedures: parse_list(&experiment, "procedures", &ProcedureId::ALL)?.unwrap_or(ProcedureId::ALL.to_vec()),
        metrics: parse_list(&experiment, "metrics", &Metric::ALL)?.unwrap_or(Metric::ALL.to_vec()),
        output_dir,
        threads: experiment.get("threads")?.unwrap_or(0),
        mode,
        aggregation: experiment.get("aggregation")?.unwrap_or_default(),
        window_fraction,
        export_plans: experiment.get("export_plans")?.unwrap_or(false),
        timings: experiment.get("timings")?.unwrap_or(false),
        classifier: classifier_params,
        datasets,
    };
    if config.needs_seed() && experiment.raw("seed").is_none() {
        return Err(ConfigError::Missing {
            section: "experiment".into(),
            key: "seed".into(),
        });
    }
    let mut procedures = config.procedures.clone();
    procedures.sort();
    Ok(ExperimentConfig { procedures, ..config })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[experiment]\nseed = 3\n\n[dataset.toy]\nsynthetic = drift\nn = 25000\n";

    fn parse(text: &str, overrides: &[&str]) -> Result<ExperimentConfig, ConfigError> {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        ExperimentConfig::parse(text, Path::new("."), &o)
    }

    #[test]
    fn defaults_fill_in() {
        let c = parse(MINIMAL, &[]).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.block_size, 10_000);
        assert_eq!(c.procedures, ProcedureId::ALL.to_vec());
        assert_eq!(c.metrics, Metric::ALL.to_vec());
        assert_eq!(c.mode, Mode::Builtin);
        assert_eq!(c.classifier, TrainParams::default());
        assert_eq!(
            c.datasets[0].source,
            DatasetSource::Synthetic {
                kind: SyntheticKind::Drift,
                n: 25000,
                seed: 0
            }
        );
    }

    #[test]
    fn overrides_replace_and_add_keys() {
        let c = parse(
            MINIMAL,
            &["experiment.seed=9", "dataset.toy.n=1000", "classifier.epochs = 3", "experiment.procedures=seq_9_1_10,xval_strat_block"],
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.classifier.epochs, 3);
        assert_eq!(c.procedures, vec![ProcedureId::XvalStratBlock, ProcedureId::Seq9to1x10]);
        assert!(matches!(c.datasets[0].source, DatasetSource::Synthetic { n: 1000, .. }));
        assert!(matches!(parse(MINIMAL, &["seed=1"]), Err(ConfigError::BadOverride(_))));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(parse("[experiment]\nseed=1\n", &[]), Err(ConfigError::NoDatasets)));
        assert!(matches!(parse(MINIMAL, &["experiment.colour=red"]), Err(ConfigError::UnknownKey { .. })));
        assert!(matches!(parse(MINIMAL, &["bogus.key=1"]), Err(ConfigError::UnknownSection(_))));
        assert!(matches!(parse(MINIMAL, &["experiment.seed=minus one"]), Err(ConfigError::Invalid { .. })));
        assert!(matches!(parse(MINIMAL, &["experiment.metrics=accuracy"]), Err(ConfigError::Invalid { .. })));
        assert!(matches!(
            parse("[dataset.x]\npath = /definitely/not/here.tsv\n", &["experiment.seed=1"]),
            Err(ConfigError::MissingPath { .. })
        ));
        assert!(matches!(parse(MINIMAL, &["dataset.toy.path=x.tsv"]), Err(ConfigError::AmbiguousSource(_))));
    }

    #[test]
    fn seed_required_for_randomized_runs() {
        let no_seed = "[dataset.toy]\nsynthetic = iid\nn = 100\n";
        assert!(matches!(parse(no_seed, &[]), Err(ConfigError::Missing { .. })));
        let c = parse(no_seed, &["experiment.mode=majority", "experiment.procedures=xval_strat_block"]).unwrap();
        assert!(!c.needs_seed());
    }

    #[test]
    fn predictions_placeholder_expands() {
        let c = parse(MINIMAL, &["dataset.toy.predictions=preds/toy_{k}.csv"]).unwrap();
        assert_eq!(c.datasets[0].predictions_path(2), Some(PathBuf::from("./preds/toy_2.csv")));
    }
}
