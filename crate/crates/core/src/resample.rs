//! Split plans for cross-validation and sequential validation, and the
//! train/score loop that turns a plan into a performance estimate.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::Learner;
use crate::corpus::{InOutPair, Label, TimeOrderedCorpus};
use crate::metrics::{self, ConfusionMatrix, Metric, MetricError};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("in-set of {n} instances is smaller than the {folds} folds requested")]
    TooFewForFolds { n: usize, folds: usize },
    #[error("sequential validation needs at least {min} instances, got {n}")]
    TooFewForWindow { n: usize, min: usize },
    #[error("sample window of {window} instances does not fit an in-set of {n}")]
    WindowTooLong { window: usize, n: usize },
    #[error("invalid plan parameter: {0}")]
    Invalid(String),
    #[error("plan index {index} is outside the in-set [0, {len})")]
    OutOfInset { index: usize, len: usize },
}

/// The six estimation procedures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProcedureId {
    #[serde(rename = "xval_strat_block")]
    XvalStratBlock,
    #[serde(rename = "xval_nostrat_block")]
    XvalNostratBlock,
    #[serde(rename = "xval_strat_rand")]
    XvalStratRand,
    #[serde(rename = "seq_9_1_20")]
    Seq9to1x20,
    #[serde(rename = "seq_9_1_10")]
    Seq9to1x10,
    #[serde(rename = "seq_2_1_10semi")]
    Seq2to1x10Semi,
}

impl ProcedureId {
    pub const ALL: [ProcedureId; 6] = [
        ProcedureId::XvalStratBlock,
        ProcedureId::XvalNostratBlock,
        ProcedureId::XvalStratRand,
        ProcedureId::Seq9to1x20,
        ProcedureId::Seq9to1x10,
        ProcedureId::Seq2to1x10Semi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProcedureId::XvalStratBlock => "xval_strat_block",
            ProcedureId::XvalNostratBlock => "xval_nostrat_block",
            ProcedureId::XvalStratRand => "xval_strat_rand",
            ProcedureId::Seq9to1x20 => "seq_9_1_20",
            ProcedureId::Seq9to1x10 => "seq_9_1_10",
            ProcedureId::Seq2to1x10Semi => "seq_2_1_10semi",
        }
    }

    /// Human-readable label used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            ProcedureId::XvalStratBlock => "xval(9:1, strat, block)",
            ProcedureId::XvalNostratBlock => "xval(9:1, no-strat, block)",
            ProcedureId::XvalStratRand => "xval(9:1, strat, rand)",
            ProcedureId::Seq9to1x20 => "seq(9:1, 20, equi)",
            ProcedureId::Seq9to1x10 => "seq(9:1, 10, equi)",
            ProcedureId::Seq2to1x10Semi => "seq(2:1, 10, semi-equi)",
        }
    }

    pub fn is_xval(self) -> bool {
        matches!(
            self,
            ProcedureId::XvalStratBlock | ProcedureId::XvalNostratBlock | ProcedureId::XvalStratRand
        )
    }

    /// Position in [`ProcedureId::ALL`]; used as a seed-derivation counter.
    pub fn ordinal(self) -> u64 {
        ProcedureId::ALL.iter().position(|p| *p == self).unwrap() as u64
    }

    /// Builds this procedure's plan over an in-set with the given labels.
    pub fn plan(self, labels: &[Label], seed: u64, window_fraction: f64) -> Result<SplitPlan, PlanError> {
        let n = labels.len();
        let elements = match self {
            ProcedureId::XvalStratBlock => plan_xval(labels, true, false, XVAL_FOLDS, seed)?,
            ProcedureId::XvalNostratBlock => plan_xval(labels, false, false, XVAL_FOLDS, seed)?,
            ProcedureId::XvalStratRand => plan_xval(labels, true, true, XVAL_FOLDS, seed)?,
            ProcedureId::Seq9to1x20 => plan_seq(n, SeqRatio::NINE_TO_ONE, 20, false, window_fraction, seed)?,
            ProcedureId::Seq9to1x10 => plan_seq(n, SeqRatio::NINE_TO_ONE, 10, false, window_fraction, seed)?,
            ProcedureId::Seq2to1x10Semi => plan_seq(n, SeqRatio::TWO_TO_ONE, 10, true, window_fraction, seed)?,
        };
        Ok(SplitPlan {
            procedure: self,
            elements,
            seed,
        })
    }
}

impl fmt::Display for ProcedureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProcedureId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        ProcedureId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown procedure {s:?}"))
    }
}

pub const XVAL_FOLDS: usize = 10;

/// One train/test split; indices are in-set positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitElement {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub procedure: ProcedureId,
    pub elements: Vec<SplitElement>,
    pub seed: u64,
}

/// Sizes of `parts` contiguous blocks covering `n`; the first `n % parts` get one extra.
fn block_sizes(n: usize, parts: usize) -> impl Iterator<Item = usize> {
    let (base, extra) = (n / parts, n % parts);
    (0..parts).map(move |i| base + usize::from(i < extra))
}

fn folds_to_elements(folds: Vec<Vec<usize>>, n: usize) -> Vec<SplitElement> {
    let mut owner = vec![0usize; n];
    for (f, fold) in folds.iter().enumerate() {
        for &i in fold {
            owner[i] = f;
        }
    }
    folds
        .into_iter()
        .enumerate()
        .map(|(f, mut test)| {
            test.sort_unstable();
            let train = (0..n).filter(|&i| owner[i] != f).collect();
            SplitElement { train, test }
        })
        .collect()
}

/// K-fold cross-validation over an in-set of `labels.len()` instances.
///
/// * blocked, not stratified: fold `i` is the `i`-th contiguous block.
/// * blocked, stratified: each class's instances (in time order) are cut into
///   `folds` contiguous runs and fold `i` takes run `i` of every class.
/// * randomized: a seeded shuffle (within each class when stratified), then
///   round-robin assignment to folds.
pub fn plan_xval(
    labels: &[Label],
    stratified: bool,
    randomized: bool,
    folds: usize,
    seed: u64,
) -> Result<Vec<SplitElement>, PlanError> {
    let n = labels.len();
    if folds < 2 {
        return Err(PlanError::Invalid(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(PlanError::TooFewForFolds { n, folds });
    }
    let groups: Vec<Vec<usize>> = if stratified {
        Label::ALL
            .iter()
            .map(|&c| (0..n).filter(|&i| labels[i] == c).collect())
            .collect()
    } else {
        vec![(0..n).collect()]
    };
    let mut fold_sets: Vec<Vec<usize>> = vec![Vec::new(); folds];
    if randomized {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = 0usize;
        for mut group in groups {
            group.shuffle(&mut rng);
            for i in group {
                fold_sets[next % folds].push(i);
                next += 1;
            }
        }
    } else {
        for group in groups {
            let mut start = 0;
            for (f, size) in block_sizes(group.len(), folds).enumerate() {
                fold_sets[f].extend_from_slice(&group[start..start + size]);
                start += size;
            }
        }
    }
    Ok(folds_to_elements(fold_sets, n))
}

/// Training:test proportions of a sequential sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqRatio {
    pub train: usize,
    pub test: usize,
}

impl SeqRatio {
    pub const NINE_TO_ONE: SeqRatio = SeqRatio { train: 9, test: 1 };
    pub const TWO_TO_ONE: SeqRatio = SeqRatio { train: 2, test: 1 };

    /// `ceil(window * train / (train + test))`.
    pub fn train_len(self, window: usize) -> usize {
        (window * self.train).div_ceil(self.train + self.test)
    }
}

/// Smallest window and in-set a sequential plan accepts.
pub const MIN_SEQ_WINDOW: usize = 20;

/// Window length `max(20, round(fraction * n))`.
pub fn seq_window(n: usize, window_fraction: f64) -> usize {
    ((window_fraction * n as f64).round().max(0.0) as usize).max(MIN_SEQ_WINDOW)
}

/// `k` start offsets spread evenly over `[0, n - window]`, rounded half up.
pub fn equidistant_offsets(n: usize, window: usize, k: usize) -> Vec<usize> {
    let span = n - window;
    if span == 0 || k <= 1 {
        return vec![0];
    }
    let steps = k - 1;
    (0..k).map(|i| (2 * i * span + steps) / (2 * steps)).collect()
}

/// Sequential validation: overlapping windows, each a training block followed
/// immediately by its test block.
///
/// `semi_equidistant` draws `positions` offsets from `2 * positions`
/// equidistant candidates. The first and last candidates are always kept so
/// the samples still span the whole in-set; the rest are a seeded draw.
pub fn plan_seq(
    n: usize,
    ratio: SeqRatio,
    positions: usize,
    semi_equidistant: bool,
    window_fraction: f64,
    seed: u64,
) -> Result<Vec<SplitElement>, PlanError> {
    if n < MIN_SEQ_WINDOW {
        return Err(PlanError::TooFewForWindow { n, min: MIN_SEQ_WINDOW });
    }
    if positions == 0 || ratio.train == 0 || ratio.test == 0 {
        return Err(PlanError::Invalid("positions and ratio parts must be positive".into()));
    }
    if !window_fraction.is_finite() {
        return Err(PlanError::Invalid(format!("window fraction {window_fraction}")));
    }
    let window = seq_window(n, window_fraction);
    if window > n {
        return Err(PlanError::WindowTooLong { window, n });
    }
    let offsets = if semi_equidistant {
        let candidates = equidistant_offsets(n, window, 2 * positions);
        if candidates.len() <= positions {
            candidates
        } else {
            let last = candidates.len() - 1;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut chosen: Vec<usize> = index::sample(&mut rng, last - 1, positions.saturating_sub(2))
                .into_iter()
                .map(|i| i + 1)
                .collect();
            chosen.push(0);
            if positions >= 2 {
                chosen.push(last);
            }
            chosen.sort_unstable();
            chosen.into_iter().map(|i| candidates[i]).collect()
        }
    } else {
        equidistant_offsets(n, window, positions)
    };
    let train_len = ratio.train_len(window);
    Ok(offsets
        .into_iter()
        .map(|s| SplitElement {
            train: (s..s + train_len).collect(),
            test: (s + train_len..s + window).collect(),
        })
        .collect())
}

/// Contiguous `[start, end)` runs of a sorted index list.
pub fn index_runs(indices: &[usize]) -> Vec<(usize, usize)> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &i in indices {
        match runs.last_mut() {
            Some((_, end)) if *end == i => *end += 1,
            _ => runs.push((i, i + 1)),
        }
    }
    runs
}

impl SplitPlan {
    /// Writes `element,role,start,end` rows (end exclusive), one per contiguous run.
    pub fn write_csv(&self, mut out: impl Write, header: bool) -> io::Result<()> {
        if header {
            writeln!(out, "procedure,element,role,start,end")?;
        }
        for (e, el) in self.elements.iter().enumerate() {
            for (role, idx) in [("train", &el.train), ("test", &el.test)] {
                for (start, end) in index_runs(idx) {
                    writeln!(out, "{},{e},{role},{start},{end}", self.procedure)?;
                }
            }
        }
        Ok(())
    }

    pub fn check_within(&self, len: usize) -> Result<(), PlanError> {
        for el in &self.elements {
            if let Some(&index) = el.train.iter().chain(&el.test).find(|&&i| i >= len) {
                return Err(PlanError::OutOfInset { index, len });
            }
        }
        Ok(())
    }
}

/// How per-element results are combined into one estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Arithmetic mean of per-element metric values.
    #[default]
    Mean,
    /// Metric of the summed confusion matrices.
    Pooled,
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "mean" => Ok(Aggregation::Mean),
            "pooled" => Ok(Aggregation::Pooled),
            other => Err(format!("unknown aggregation {other:?} (expected mean or pooled)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementResult {
    pub train_size: usize,
    pub test_size: usize,
    pub confusion: ConfusionMatrix,
    pub alpha: Result<f64, MetricError>,
    pub f1_bar: f64,
}

impl ElementResult {
    fn from_confusion(train_size: usize, confusion: ConfusionMatrix) -> Self {
        ElementResult {
            train_size,
            test_size: confusion.total() as usize,
            alpha: metrics::alpha(&metrics::coincidence(&confusion)),
            f1_bar: metrics::f1_bar(&confusion),
            confusion,
        }
    }

    pub fn metric(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Alpha => self.alpha.ok(),
            Metric::F1Bar => Some(self.f1_bar),
        }
    }
}

/// A procedure's estimate for one in-set.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub procedure: ProcedureId,
    pub elements: Vec<ElementResult>,
    pub aggregation: Aggregation,
}

impl Estimate {
    /// Aggregate value, or `None` when no element has a defined value.
    pub fn value(&self, metric: Metric) -> Option<f64> {
        match self.aggregation {
            Aggregation::Mean => {
                let defined: Vec<f64> = self.elements.iter().filter_map(|e| e.metric(metric)).collect();
                if defined.is_empty() {
                    None
                } else {
                    Some(defined.iter().sum::<f64>() / defined.len() as f64)
                }
            }
            Aggregation::Pooled => {
                let mut pooled = ConfusionMatrix::default();
                self.elements.iter().for_each(|e| pooled.merge(&e.confusion));
                metrics::evaluate(metric, &pooled).ok()
            }
        }
    }

    /// Elements whose value of `metric` is undefined.
    pub fn undefined(&self, metric: Metric) -> usize {
        self.elements.iter().filter(|e| e.metric(metric).is_none()).count()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EstimateOptions {
    pub aggregation: Aggregation,
    pub parallel: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            aggregation: Aggregation::Mean,
            parallel: true,
        }
    }
}

fn run_element(corpus: &TimeOrderedCorpus, learner: &dyn Learner, el: &SplitElement, seed: u64) -> ElementResult {
    let model = learner.fit(&el.train, seed);
    let predicted = model.predict_positions(&el.test);
    let gold: Vec<Label> = el.test.iter().map(|&i| corpus.label(i)).collect();
    ElementResult::from_confusion(el.train.len(), ConfusionMatrix::from_pairs(&gold, &predicted))
}

/// Trains and scores the learner on every plan element.
///
/// Element `e` is trained with seed `derive_seed(plan.seed, [e])`, so the result
/// is the same whether elements run in parallel or in sequence.
pub fn estimate(
    corpus: &TimeOrderedCorpus,
    pair: &InOutPair,
    plan: &SplitPlan,
    learner: &dyn Learner,
    options: EstimateOptions,
) -> Result<Estimate, PlanError> {
    plan.check_within(pair.in_len())?;
    let job = |(e, el): (usize, &SplitElement)| run_element(corpus, learner, el, derive_seed(plan.seed, &[e as u64]));
    let elements = if options.parallel {
        plan.elements.par_iter().enumerate().map(job).collect()
    } else {
        plan.elements.iter().enumerate().map(job).collect()
    };
    Ok(Estimate {
        procedure: plan.procedure,
        elements,
        aggregation: options.aggregation,
    })
}

/// Out-of-sample performance of a model trained on the whole in-set.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldResult {
    pub confusion: ConfusionMatrix,
    pub alpha: Result<f64, MetricError>,
    pub f1_bar: f64,
}

impl GoldResult {
    pub fn metric(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Alpha => self.alpha.ok(),
            Metric::F1Bar => Some(self.f1_bar),
        }
    }
}

pub fn gold(corpus: &TimeOrderedCorpus, pair: &InOutPair, learner: &dyn Learner, seed: u64) -> GoldResult {
    let train: Vec<usize> = pair.in_range.clone().collect();
    let test: Vec<usize> = pair.out_range.clone().collect();
    let r = run_element(corpus, learner, &SplitElement { train, test }, seed);
    GoldResult {
        confusion: r.confusion,
        alpha: r.alpha,
        f1_bar: r.f1_bar,
    }
}
