//! Experiment stages and their on-disk artifacts.
//!
//! Each stage reads what earlier stages wrote into the output directory, so a
//! run can be resumed or repeated one stage at a time:
//!
//! | stage       | reads                          | writes |
//! |-------------|--------------------------------|--------|
//! | `partition` | corpora                        | `partitions.csv` |
//! | `gold`      | `partitions.csv`               | `gold.csv` |
//! | `estimate`  | `partitions.csv`, `gold.csv`   | `estimates.csv`, `errors.csv`, optional `plans/` |
//! | `analyze`   | `errors.csv`                   | `medians.csv`, `quartiles.csv`, `relerr.csv`, `friedman.json`, `wilcoxon.csv` |
//! | `report`    | `medians.csv`, `friedman.json` | `report.md` |
//!
//! All tables are comma-separated with a header row and six-decimal numbers;
//! rows are ordered by dataset (config order), in-set, procedure and metric, so
//! reruns are byte-identical regardless of thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::classify::{predict_from_file, ClassifyError, ExternalPredictions, Learner, MajorityLearner, TwoPlaneLearner};
use crate::config::{ConfigError, DatasetSource, DatasetSpec, ExperimentConfig, Mode};
use crate::corpus::{load_corpus, partition, CorpusError, InOutPair, TimeOrderedCorpus};
use crate::metrics::Metric;
use crate::resample::{estimate, gold, EstimateOptions, PlanError, ProcedureId};
use crate::seed::derive_seed;
use crate::stats::{
    self, friedman, median_errors, nemenyi_cd, relative_error_classes, significant_pairs, wilcoxon, Direction,
    EvaluationRecord, StatsError,
};
use crate::synthetic::{generate, SyntheticParams};

pub const PARTITIONS_FILE: &str = "partitions.csv";
pub const GOLD_FILE: &str = "gold.csv";
pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const ERRORS_FILE: &str = "errors.csv";
pub const MEDIANS_FILE: &str = "medians.csv";
pub const QUARTILES_FILE: &str = "quartiles.csv";
pub const RELERR_FILE: &str = "relerr.csv";
pub const FRIEDMAN_FILE: &str = "friedman.json";
pub const WILCOXON_FILE: &str = "wilcoxon.csv";
pub const REPORT_FILE: &str = "report.md";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PLANS_DIR: &str = "plans";

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Predictions(#[from] ClassifyError),
    #[error("required input {0} is missing; run the upstream stage first")]
    MissingArtifact(PathBuf),
    #[error("{path}:{line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("dataset {dataset}, in-set {inset}: {source}")]
    Plan {
        dataset: String,
        inset: usize,
        #[source]
        source: PlanError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Data(String),
}

impl StageError {
    /// Process exit code: 2 for configuration, 3 for input data, 4 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            StageError::Config(_) => 2,
            StageError::Corpus(_) | StageError::Predictions(_) | StageError::Data(_) => 3,
            _ => 4,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StageError + '_ {
    move |source| StageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Partition,
    Gold,
    Estimate,
    Analyze,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Partition, Stage::Gold, Stage::Estimate, Stage::Analyze, Stage::Report];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Partition => "partition",
            Stage::Gold => "gold",
            Stage::Estimate => "estimate",
            Stage::Analyze => "analyze",
            Stage::Report => "report",
        }
    }
}

/// Six-decimal rendering with negative zero folded to zero.
pub fn fmt6(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), fmt6)
}

/// Rounds to six decimals for JSON output; non-finite values become `null`.
fn json6(x: f64) -> Value {
    if x.is_finite() {
        json!(fmt6(x).parse::<f64>().unwrap())
    } else {
        Value::Null
    }
}

/// Stable per-dataset key for seed derivation (FNV-1a of the name).
fn name_key(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

const GOLD_STREAM: u64 = 0;
const PLAN_STREAM: u64 = 1;

fn write_file(path: &Path, contents: &str) -> Result<(), StageError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn read_required(path: &Path) -> Result<String, StageError> {
    if !path.is_file() {
        return Err(StageError::MissingArtifact(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(io_err(path))
}

/// Header-checked CSV rows as string fields.
fn read_table(path: &Path, expected_header: &[&str]) -> Result<Vec<(usize, Vec<String>)>, StageError> {
    let text = read_required(path)?;
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, h)| h).unwrap_or_default();
    let got: Vec<&str> = header.split(',').collect();
    if got != expected_header {
        return Err(StageError::Malformed {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("expected header {:?}", expected_header.join(",")),
        });
    }
    Ok(lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split(',').map(str::to_string).collect()))
        .collect())
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, fields: &[String], i: usize, what: &str) -> Result<T, StageError> {
    fields
        .get(i)
        .and_then(|f| f.trim().parse().ok())
        .ok_or_else(|| StageError::Malformed {
            path: path.to_path_buf(),
            line,
            reason: format!("bad or missing {what}"),
        })
}

fn opt_field(path: &Path, line: usize, fields: &[String], i: usize, what: &str) -> Result<Option<f64>, StageError> {
    match fields.get(i).map(|s| s.trim()) {
        Some("NA") => Ok(None),
        _ => field(path, line, fields, i, what).map(Some),
    }
}

const PARTITIONS_HEADER: &[&str] = &["dataset", "inset_index", "in_start", "in_end", "out_start", "out_end"];
const GOLD_HEADER: &[&str] = &["dataset", "inset_index", "alpha", "f1bar"];
const ESTIMATES_HEADER: &[&str] = &["procedure", "dataset", "inset_index", "metric", "est", "n_elements", "n_undefined"];
const ERRORS_HEADER: &[&str] = &[
    "procedure",
    "dataset",
    "inset_index",
    "metric",
    "est",
    "gold",
    "err",
    "abs_err",
    "rel_err",
];

/// Gold values keyed by (dataset, in-set index).
type GoldTable = BTreeMap<(String, usize), (Option<f64>, Option<f64>)>;

/// One stage's entry in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Drives the stages of one configured experiment.
pub struct Pipeline {
    config: ExperimentConfig,
    pool: rayon::ThreadPool,
    warnings: std::sync::Mutex<Vec<String>>,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig) -> Result<Self, StageError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| StageError::Data(format!("cannot start worker pool: {e}")))?;
        Ok(Self {
            config,
            pool,
            warnings: Default::default(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn output_dir(&self) -> &Path {
        &self.config.output_dir
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    /// Non-fatal problems collected so far (e.g. a refused Friedman test).
    pub fn take_warnings(&self) -> Vec<String> {
        std::mem::take(&mut self.warnings.lock().unwrap())
    }

    fn warn(&self, msg: String) {
        self.warnings.lock().unwrap().push(msg);
    }

    /// Runs every stage in order, recording the outcome in the manifest.
    pub fn run_all(&self) -> Result<(), StageError> {
        self.run_stages(&Stage::ALL)
    }

    /// Runs the given stages, updating the manifest after each one.
    pub fn run_stages(&self, stages: &[Stage]) -> Result<(), StageError> {
        fs::create_dir_all(self.output_dir()).map_err(io_err(self.output_dir()))?;
        let mut records = self.previous_stage_records();
        for &stage in stages {
            let start = Instant::now();
            let result = self.pool.install(|| self.run_stage(stage));
            let seconds = self.config.timings.then(|| start.elapsed().as_secs_f64());
            records.retain(|r| r.stage != stage);
            records.push(StageRecord {
                stage,
                status: if result.is_ok() { "OK" } else { "FAILED" }.into(),
                seconds,
                error: result.as_ref().err().map(|e| e.to_string()),
            });
            records.sort_by_key(|r| r.stage);
            self.write_manifest(&records)?;
            result?;
        }
        Ok(())
    }

    fn previous_stage_records(&self) -> Vec<StageRecord> {
        fs::read_to_string(self.out(MANIFEST_FILE))
            .ok()
            .and_then(|s| serde_json::from_str::<Value>(&s).ok())
            .filter(|m| m.get("config") == Some(&serde_json::to_value(&self.config).unwrap_or_default()))
            .and_then(|m| serde_json::from_value(m.get("stages")?.clone()).ok())
            .unwrap_or_default()
    }

    fn write_manifest(&self, records: &[StageRecord]) -> Result<(), StageError> {
        let failed = records.iter().find(|r| r.status == "FAILED");
        let manifest = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.config.seed,
            "status": if failed.is_some() { "FAILED" } else { "OK" },
            "failed_stage": failed.map(|r| r.stage.as_str()),
            "stages": records,
            "config": self.config,
        });
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        write_file(&self.out(MANIFEST_FILE), &text)
    }

    pub fn run_stage(&self, stage: Stage) -> Result<(), StageError> {
        match stage {
            Stage::Partition => self.partition_stage(),
            Stage::Gold => self.gold_stage(),
            Stage::Estimate => self.estimate_stage(),
            Stage::Analyze => self.analyze_stage(),
            Stage::Report => self.report_stage(),
        }
    }

    fn load_dataset(&self, spec: &DatasetSpec) -> Result<TimeOrderedCorpus, StageError> {
        let corpus = match &spec.source {
            DatasetSource::File { resolved, .. } => load_corpus(resolved)?,
            DatasetSource::Synthetic { kind, n, seed } => generate(&spec.name, &SyntheticParams::of_kind(*kind, *n), *seed),
        };
        Ok(corpus)
    }

    fn learner<'a>(
        &self,
        spec: &DatasetSpec,
        corpus: &'a TimeOrderedCorpus,
        inset: usize,
    ) -> Result<Box<dyn Learner + 'a>, StageError> {
        Ok(match self.config.mode {
            Mode::Builtin => Box::new(TwoPlaneLearner::new(corpus, self.config.classifier.clone())),
            Mode::Majority => Box::new(MajorityLearner::new(corpus)),
            Mode::External => {
                let path = spec.predictions_path(inset).expect("validated in config");
                Box::new(predict_from_file(path, corpus.len())?)
            }
        })
    }

    fn partition_stage(&self) -> Result<(), StageError> {
        let mut out = PARTITIONS_HEADER.join(",") + "\n";
        for spec in &self.config.datasets {
            let corpus = self.load_dataset(spec)?;
            let pairs = partition(&corpus, self.config.block_size);
            if pairs.is_empty() {
                self.warn(format!(
                    "dataset {} has {} instances, fewer than two blocks of {}; it yields no in-sets",
                    spec.name,
                    corpus.len(),
                    self.config.block_size
                ));
            }
            for p in pairs {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    spec.name, p.inset_index, p.in_range.start, p.in_range.end, p.out_range.start, p.out_range.end
                )
                .unwrap();
            }
        }
        write_file(&self.out(PARTITIONS_FILE), &out)
    }

    /// Pairs per configured dataset, as recorded by the partition stage.
    fn read_partitions(&self) -> Result<BTreeMap<String, Vec<InOutPair>>, StageError> {
        let path = self.out(PARTITIONS_FILE);
        let mut map: BTreeMap<String, Vec<InOutPair>> = BTreeMap::new();
        for (line, f) in read_table(&path, PARTITIONS_HEADER)? {
            let get = |i, what| field::<usize>(&path, line, &f, i, what);
            let pair = InOutPair {
                inset_index: get(1, "inset_index")?,
                in_range: get(2, "in_start")?..get(3, "in_end")?,
                out_range: get(4, "out_start")?..get(5, "out_end")?,
            };
            map.entry(f[0].clone()).or_default().push(pair);
        }
        Ok(map)
    }

    fn pairs_for(
        &self,
        partitions: &BTreeMap<String, Vec<InOutPair>>,
        spec: &DatasetSpec,
        corpus: &TimeOrderedCorpus,
    ) -> Result<Vec<InOutPair>, StageError> {
        let pairs = partitions.get(&spec.name).cloned().unwrap_or_default();
        if let Some(bad) = pairs.iter().find(|p| p.out_range.end > corpus.len() || p.in_range.start != 0) {
            return Err(StageError::Data(format!(
                "{}: in-set {} of dataset {} does not fit a corpus of {} instances",
                PARTITIONS_FILE,
                bad.inset_index,
                spec.name,
                corpus.len()
            )));
        }
        Ok(pairs)
    }

    fn gold_stage(&self) -> Result<(), StageError> {
        let partitions = self.read_partitions()?;
        let mut out = GOLD_HEADER.join(",") + "\n";
        for spec in &self.config.datasets {
            let corpus = self.load_dataset(spec)?;
            let pairs = self.pairs_for(&partitions, spec, &corpus)?;
            let shared = self.shared_learner(spec, &corpus)?;
            let rows: Vec<Result<String, StageError>> = pairs
                .par_iter()
                .map(|pair| {
                    let own;
                    let learner: &dyn Learner = match &shared {
                        Some(l) => l.as_ref(),
                        None => {
                            own = self.learner(spec, &corpus, pair.inset_index)?;
                            own.as_ref()
                        }
                    };
                    let seed = derive_seed(self.config.seed, &[GOLD_STREAM, name_key(&spec.name), pair.inset_index as u64]);
                    let g = gold(&corpus, pair, learner, seed);
                    Ok(format!(
                        "{},{},{},{}\n",
                        spec.name,
                        pair.inset_index,
                        fmt_opt(g.metric(Metric::Alpha)),
                        fmt_opt(g.metric(Metric::F1Bar))
                    ))
                })
                .collect();
            for r in rows {
                out.push_str(&r?);
            }
        }
        write_file(&self.out(GOLD_FILE), &out)
    }

    /// A learner reused across in-sets, unless predictions differ per in-set.
    fn shared_learner<'a>(
        &self,
        spec: &DatasetSpec,
        corpus: &'a TimeOrderedCorpus,
    ) -> Result<Option<Box<dyn Learner + 'a>>, StageError> {
        let per_inset = self.config.mode == Mode::External && spec.predictions.as_deref().is_some_and(|p| p.contains("{k}"));
        if per_inset {
            Ok(None)
        } else {
            self.learner(spec, corpus, 0).map(Some)
        }
    }

    fn read_gold(&self) -> Result<GoldTable, StageError> {
        let path = self.out(GOLD_FILE);
        let mut table = GoldTable::new();
        for (line, f) in read_table(&path, GOLD_HEADER)? {
            let k: usize = field(&path, line, &f, 1, "inset_index")?;
            let alpha = opt_field(&path, line, &f, 2, "alpha")?;
            let f1 = opt_field(&path, line, &f, 3, "f1bar")?;
            table.insert((f[0].clone(), k), (alpha, f1));
        }
        Ok(table)
    }

    fn estimate_stage(&self) -> Result<(), StageError> {
        let partitions = self.read_partitions()?;
        let gold_table = self.read_gold()?;
        let mut estimates = ESTIMATES_HEADER.join(",") + "\n";
        let mut errors = ERRORS_HEADER.join(",") + "\n";
        let options = EstimateOptions {
            aggregation: self.config.aggregation,
            parallel: true,
        };
        for spec in &self.config.datasets {
            let corpus = self.load_dataset(spec)?;
            let pairs = self.pairs_for(&partitions, spec, &corpus)?;
            let shared = self.shared_learner(spec, &corpus)?;
            let tasks: Vec<(&InOutPair, ProcedureId)> = pairs
                .iter()
                .flat_map(|p| self.config.procedures.iter().map(move |&proc_| (p, proc_)))
                .collect();
            let results: Vec<Result<_, StageError>> = tasks
                .par_iter()
                .map(|&(pair, procedure)| {
                    let own;
                    let learner: &dyn Learner = match &shared {
                        Some(l) => l.as_ref(),
                        None => {
                            own = self.learner(spec, &corpus, pair.inset_index)?;
                            own.as_ref()
                        }
                    };
                    let plan_err = |source| StageError::Plan {
                        dataset: spec.name.clone(),
                        inset: pair.inset_index,
                        source,
                    };
                    let seed = derive_seed(
                        self.config.seed,
                        &[PLAN_STREAM, name_key(&spec.name), procedure.ordinal(), pair.inset_index as u64],
                    );
                    let labels = corpus.labels_in(pair.in_range.clone());
                    let plan = procedure.plan(&labels, seed, self.config.window_fraction).map_err(plan_err)?;
                    let est = estimate(&corpus, pair, &plan, learner, options).map_err(plan_err)?;
                    Ok((pair, procedure, plan, est))
                })
                .collect();
            for r in results {
                let (pair, procedure, plan, est) = r?;
                if self.config.export_plans {
                    let mut buf = Vec::new();
                    plan.write_csv(&mut buf, true).expect("in-memory write");
                    let name = format!("{}/{}_{}_{}.csv", PLANS_DIR, spec.name, pair.inset_index, procedure);
                    write_file(&self.out(&name), &String::from_utf8(buf).expect("ascii plan"))?;
                }
                let gold_row = gold_table.get(&(spec.name.clone(), pair.inset_index)).ok_or_else(|| {
                    StageError::Data(format!(
                        "{GOLD_FILE} has no row for dataset {} in-set {}",
                        spec.name, pair.inset_index
                    ))
                })?;
                for &metric in &self.config.metrics {
                    let value = est.value(metric);
                    writeln!(
                        estimates,
                        "{},{},{},{},{},{},{}",
                        procedure,
                        spec.name,
                        pair.inset_index,
                        metric,
                        fmt_opt(value),
                        est.elements.len(),
                        est.undefined(metric)
                    )
                    .unwrap();
                    let g = match metric {
                        Metric::Alpha => gold_row.0,
                        Metric::F1Bar => gold_row.1,
                    };
                    if let (Some(est), Some(gold)) = (value, g) {
                        let rec = EvaluationRecord {
                            procedure,
                            dataset: spec.name.clone(),
                            inset_index: pair.inset_index,
                            metric,
                            est,
                            gold,
                        };
                        writeln!(
                            errors,
                            "{},{},{},{},{},{},{},{},{}",
                            procedure,
                            rec.dataset,
                            rec.inset_index,
                            metric,
                            fmt6(rec.est),
                            fmt6(rec.gold),
                            fmt6(rec.err()),
                            fmt6(rec.abs_err()),
                            fmt_opt(rec.rel_err())
                        )
                        .unwrap();
                    }
                }
            }
        }
        write_file(&self.out(ESTIMATES_FILE), &estimates)?;
        write_file(&self.out(ERRORS_FILE), &errors)
    }

    fn analyze_stage(&self) -> Result<(), StageError> {
        let records = read_errors(&self.out(ERRORS_FILE))?;
        let analysis = analyze(&records, &self.config.metrics);
        for w in &analysis.warnings {
            self.warn(w.clone());
        }
        write_file(&self.out(MEDIANS_FILE), &analysis.medians_csv)?;
        write_file(&self.out(QUARTILES_FILE), &analysis.quartiles_csv)?;
        write_file(&self.out(RELERR_FILE), &analysis.relerr_csv)?;
        write_file(&self.out(FRIEDMAN_FILE), &analysis.friedman_json)?;
        write_file(&self.out(WILCOXON_FILE), &analysis.wilcoxon_csv)
    }

    fn report_stage(&self) -> Result<(), StageError> {
        let medians = read_required(&self.out(MEDIANS_FILE))?;
        let friedman = fs::read_to_string(self.out(FRIEDMAN_FILE)).ok();
        let report = render_report(&medians, friedman.as_deref()).map_err(|reason| StageError::Malformed {
            path: self.out(MEDIANS_FILE),
            line: 1,
            reason,
        })?;
        write_file(&self.out(REPORT_FILE), &report)
    }
}

/// Parses an `errors.csv` file back into evaluation records.
pub fn read_errors(path: &Path) -> Result<Vec<EvaluationRecord>, StageError> {
    let mut out = Vec::new();
    for (line, f) in read_table(path, ERRORS_HEADER)? {
        let procedure: ProcedureId = field(path, line, &f, 0, "procedure")?;
        out.push(EvaluationRecord {
            procedure,
            dataset: f[1].clone(),
            inset_index: field(path, line, &f, 2, "inset_index")?,
            metric: field(path, line, &f, 3, "metric")?,
            est: field(path, line, &f, 4, "est")?,
            gold: field(path, line, &f, 5, "gold")?,
        });
    }
    Ok(out)
}

/// Rendered outputs of the analysis stage.
#[derive(Debug, Clone, Default)]
pub struct Analysis {
    pub medians_csv: String,
    pub quartiles_csv: String,
    pub relerr_csv: String,
    pub friedman_json: String,
    pub wilcoxon_csv: String,
    pub warnings: Vec<String>,
}

/// Per-dataset mean absolute error, one row per dataset with every procedure present.
fn avg_abs_err(
    records: &[EvaluationRecord],
    metric: Metric,
    procedures: &[ProcedureId],
    datasets: &[String],
) -> (Vec<String>, Vec<Vec<f64>>, Vec<String>) {
    let mut sums: BTreeMap<(&str, ProcedureId), (f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.metric == metric) {
        let e = sums.entry((r.dataset.as_str(), r.procedure)).or_default();
        e.0 += r.abs_err();
        e.1 += 1;
    }
    let mut kept = Vec::new();
    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    for d in datasets {
        let row: Option<Vec<f64>> = procedures
            .iter()
            .map(|&p| sums.get(&(d.as_str(), p)).map(|(s, n)| s / *n as f64))
            .collect();
        match row {
            Some(r) => {
                kept.push(d.clone());
                rows.push(r);
            }
            None => dropped.push(d.clone()),
        }
    }
    (kept, rows, dropped)
}

fn tier(p: f64) -> &'static str {
    if p < 0.01 {
        "1%"
    } else if p < 0.05 {
        "5%"
    } else {
        "ns"
    }
}

/// Median, relative-error, Friedman-Nemenyi and Wilcoxon analyses of the records.
pub fn analyze(records: &[EvaluationRecord], metrics: &[Metric]) -> Analysis {
    let mut a = Analysis::default();
    let mut procedures: Vec<ProcedureId> = records.iter().map(|r| r.procedure).collect();
    procedures.sort();
    procedures.dedup();
    let mut datasets: Vec<String> = Vec::new();
    for r in records {
        if !datasets.contains(&r.dataset) {
            datasets.push(r.dataset.clone());
        }
    }
    let proc_cols: Vec<&str> = procedures.iter().map(|p| p.as_str()).collect();

    a.medians_csv = format!("metric,dataset,{}\n", proc_cols.join(","));
    a.quartiles_csv = "metric,procedure,dataset,n,min,q1,median,q3,max\n".into();
    a.relerr_csv = "metric,procedure,dataset,included,excluded,small,moderate,large\n".into();
    a.wilcoxon_csv = "metric,procedure_a,procedure_b,n,w_plus,w_minus,w,p_one_sided,p_two_sided,exact,better,tier_one_sided,tier_two_sided,status\n".into();
    let mut friedman_out = Vec::new();

    for &metric in metrics {
        let table = median_errors(records, metric);
        for d in &datasets {
            let cells: Vec<String> = procedures.iter().map(|&p| fmt_opt(table.median(p, d))).collect();
            writeln!(a.medians_csv, "{metric},{d},{}", cells.join(",")).unwrap();
        }
        let cells: Vec<String> = procedures
            .iter()
            .map(|p| fmt_opt(table.median_of_medians.get(p).copied()))
            .collect();
        writeln!(a.medians_csv, "{metric},Median,{}", cells.join(",")).unwrap();

        for &p in &procedures {
            let mut rows: Vec<(String, stats::Summary)> = datasets
                .iter()
                .filter_map(|d| table.cells.get(&(p, d.clone())).map(|s| (d.clone(), *s)))
                .collect();
            if let Some(s) = table.pooled.get(&p) {
                rows.push(("ALL".into(), *s));
            }
            for (d, s) in rows {
                writeln!(
                    a.quartiles_csv,
                    "{metric},{p},{d},{},{},{},{},{},{}",
                    s.n,
                    fmt6(s.min),
                    fmt6(s.q1),
                    fmt6(s.median),
                    fmt6(s.q3),
                    fmt6(s.max)
                )
                .unwrap();
            }
        }

        let rel = relative_error_classes(records, metric, stats::SMALL_REL_ERR, stats::LARGE_REL_ERR);
        for &p in &procedures {
            let keys = std::iter::once(None).chain(datasets.iter().map(|d| Some(d.clone())));
            for key in keys {
                if let Some(r) = rel.get(&(p, key.clone())) {
                    writeln!(
                        a.relerr_csv,
                        "{metric},{p},{},{},{},{},{},{}",
                        key.as_deref().unwrap_or("ALL"),
                        r.included,
                        r.excluded,
                        fmt6(r.small),
                        fmt6(r.moderate),
                        fmt6(r.large)
                    )
                    .unwrap();
                }
            }
        }

        let (kept, matrix, dropped) = avg_abs_err(records, metric, &procedures, &datasets);
        let mut entry = json!({
            "metric": metric,
            "procedures": proc_cols,
            "datasets": kept,
            "dropped_datasets": dropped,
        });
        match friedman(&matrix) {
            Ok(f) => {
                let cd = |level| nemenyi_cd(f.k, f.n_datasets, level).ok();
                let pairs = |cd: Option<f64>| -> Value {
                    cd.map_or(Value::Null, |cd| {
                        significant_pairs(&f.average_ranks, cd)
                            .into_iter()
                            .map(|(i, j)| json!([proc_cols[i], proc_cols[j]]))
                            .collect()
                    })
                };
                let (cd05, cd01) = (cd(0.05), cd(0.01));
                let extra = json!({
                    "status": "ok",
                    "average_ranks": f.average_ranks.iter().map(|&r| json6(r)).collect::<Vec<_>>(),
                    "chi_square": json6(f.chi_square),
                    "chi_square_p": json6(f.chi_square_p),
                    "iman_davenport_f": json6(f.iman_davenport_f),
                    "iman_davenport_p": json6(f.iman_davenport_p),
                    "critical_difference_05": cd05.map(json6),
                    "critical_difference_01": cd01.map(json6),
                    "significant_pairs_05": pairs(cd05),
                    "significant_pairs_01": pairs(cd01),
                });
                entry.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
            }
            Err(e) => {
                let msg = refusal_message(&e);
                a.warnings.push(format!("friedman test for {metric} refused: {msg}"));
                entry.as_object_mut().unwrap().extend([
                    ("status".to_string(), json!("refused")),
                    ("message".to_string(), json!(msg)),
                ]);
            }
        }
        friedman_out.push(entry);

        for i in 0..procedures.len() {
            for j in i + 1..procedures.len() {
                let col = |k: usize| matrix.iter().map(|row| row[k]).collect::<Vec<f64>>();
                let (pa, pb) = (procedures[i], procedures[j]);
                match wilcoxon(&col(i), &col(j)) {
                    Ok(w) => {
                        let better = match w.direction {
                            Direction::FirstBetter => pa.as_str(),
                            Direction::SecondBetter => pb.as_str(),
                            Direction::None => "none",
                        };
                        writeln!(
                            a.wilcoxon_csv,
                            "{metric},{pa},{pb},{},{},{},{},{},{},{},{better},{},{},ok",
                            w.n,
                            fmt6(w.w_plus),
                            fmt6(w.w_minus),
                            fmt6(w.w),
                            fmt6(w.p_one_sided),
                            fmt6(w.p_two_sided),
                            w.exact,
                            tier(w.p_one_sided),
                            tier(w.p_two_sided)
                        )
                        .unwrap();
                    }
                    Err(e) => {
                        let status = match e {
                            StatsError::TooFewDifferences { .. } => "too_few_differences",
                            _ => "refused",
                        };
                        writeln!(a.wilcoxon_csv, "{metric},{pa},{pb},NA,NA,NA,NA,NA,NA,NA,NA,NA,NA,{status}").unwrap();
                    }
                }
            }
        }
    }
    a.friedman_json = serde_json::to_string_pretty(&Value::Array(friedman_out)).expect("json") + "\n";
    a
}

fn refusal_message(e: &StatsError) -> String {
    match e {
        StatsError::TooFewProcedures(k) => {
            format!("needs at least 2 procedures to rank, errors cover {k}")
        }
        StatsError::TooFewDatasets(n) => format!("needs at least 2 datasets with complete results, got {n}"),
        other => other.to_string(),
    }
}

/// Markdown summary: one median-error table per metric, with a Median row.
pub fn render_report(medians_csv: &str, friedman_json: Option<&str>) -> Result<String, String> {
    let mut lines = medians_csv.lines();
    let header: Vec<&str> = lines.next().ok_or("empty medians table")?.split(',').collect();
    if header.len() < 3 || header[0] != "metric" || header[1] != "dataset" {
        return Err("unexpected medians header".into());
    }
    let procedures: Vec<ProcedureId> = header[2..]
        .iter()
        .map(|p| p.parse())
        .collect::<Result<_, String>>()?;
    let mut by_metric: Vec<(String, Vec<Vec<&str>>)> = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() {
            return Err(format!("row {line:?} has {} fields, expected {}", f.len(), header.len()));
        }
        match by_metric.last_mut() {
            Some((m, rows)) if m == f[0] => rows.push(f[1..].to_vec()),
            _ => by_metric.push((f[0].to_string(), vec![f[1..].to_vec()])),
        }
    }
    let ranks: BTreeMap<String, Value> = friedman_json
        .and_then(|s| serde_json::from_str::<Vec<Value>>(s).ok())
        .unwrap_or_default()
        .into_iter()
        .filter_map(|v| Some((v.get("metric")?.as_str()?.to_string(), v)))
        .collect();

    let mut out = String::from("# Estimation errors\n\nMedian of Est - Gold per dataset and procedure.\n");
    for (metric, rows) in &by_metric {
        let title = match metric.as_str() {
            "alpha" => "Alpha",
            "f1bar" => "F1-bar",
            other => other,
        };
        write!(out, "\n## {title}\n\n| Dataset |").unwrap();
        for p in &procedures {
            write!(out, " {} |", p.display_name()).unwrap();
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(procedures.len()));
        out.push('\n');
        for row in rows {
            let name = if row[0] == "Median" { "**Median**" } else { row[0] };
            writeln!(out, "| {name} | {} |", row[1..].join(" | ")).unwrap();
        }
        if let Some(f) = ranks.get(metric) {
            if f.get("status").and_then(Value::as_str) == Some("ok") {
                let avg: Vec<String> = f["average_ranks"]
                    .as_array()
                    .map(|a| a.iter().map(|v| v.as_f64().map_or("NA".into(), |x| format!("{x:.2}"))).collect())
                    .unwrap_or_default();
                write!(
                    out,
                    "\nFriedman average ranks (lower is better): {}. Iman-Davenport p = {}, Nemenyi CD (5%) = {}.\n",
                    avg.join(", "),
                    f["iman_davenport_p"],
                    f["critical_difference_05"]
                )
                .unwrap();
            } else if let Some(msg) = f.get("message").and_then(Value::as_str) {
                writeln!(out, "\nFriedman test not applicable: {msg}.").unwrap();
            }
        }
    }
    Ok(out)
}

/// Writes predictions in the `position,label` format read by external mode.
pub fn write_predictions(labels: &ExternalPredictions, mut out: impl Write) -> io::Result<()> {
    writeln!(out, "position,label")?;
    for (i, l) in labels.labels().iter().enumerate() {
        writeln!(out, "{i},{l}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(p: ProcedureId, d: &str, k: usize, est: f64, gold: f64) -> EvaluationRecord {
        EvaluationRecord {
            procedure: p,
            dataset: d.into(),
            inset_index: k,
            metric: Metric::Alpha,
            est,
            gold,
        }
    }

    #[test]
    fn six_decimals_without_negative_zero() {
        assert_eq!(fmt6(-0.0000001), "0.000000");
        assert_eq!(fmt6(0.1234567), "0.123457");
        assert_eq!(fmt6(-0.25), "-0.250000");
        assert_eq!(fmt_opt(None), "NA");
    }

    #[test]
    fn single_procedure_friedman_is_refused() {
        let records: Vec<_> = (0..3).map(|d| rec(ProcedureId::Seq9to1x10, &format!("d{d}"), 1, 0.5, 0.4)).collect();
        let a = analyze(&records, &[Metric::Alpha]);
        assert!(a.friedman_json.contains("\"refused\""));
        assert!(a.warnings[0].contains("at least 2 procedures"));
    }

    #[test]
    fn report_has_dataset_rows_and_median() {
        let mut records = Vec::new();
        for d in 0..13 {
            for (i, p) in ProcedureId::ALL.iter().enumerate() {
                records.push(rec(*p, &format!("lang{d:02}"), 1, 0.5 + 0.001 * (d + i) as f64, 0.5));
            }
        }
        let a = analyze(&records, &[Metric::Alpha]);
        assert_eq!(a.medians_csv.lines().count(), 1 + 13 + 1);
        let report = render_report(&a.medians_csv, Some(&a.friedman_json)).unwrap();
        let table_rows = report.lines().filter(|l| l.starts_with("| lang")).count();
        assert_eq!(table_rows, 13);
        assert!(report.contains("| **Median** |"));
        assert!(report.contains("Friedman average ranks"));
        assert_eq!(report.lines().find(|l| l.starts_with("| Dataset")).unwrap().matches('|').count(), 8);
    }

    #[test]
    fn name_keys_differ() {
        assert_ne!(name_key("eng"), name_key("ger"));
        assert_eq!(name_key("eng"), name_key("eng"));
    }
}
