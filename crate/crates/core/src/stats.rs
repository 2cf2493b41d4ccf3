//! Error analysis of estimates against gold-standard values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal};
use thiserror::Error;

use crate::metrics::Metric;
use crate::resample::ProcedureId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("friedman test needs at least 2 procedures, got {0}")]
    TooFewProcedures(usize),
    #[error("friedman test needs at least 2 datasets, got {0}")]
    TooFewDatasets(usize),
    #[error("row {row} has {got} values, expected {expected}")]
    RaggedMatrix { row: usize, got: usize, expected: usize },
    #[error("missing value for procedure {procedure} on dataset {dataset}")]
    MissingCell { dataset: String, procedure: String },
    #[error("no critical-difference constant for k = {0} (supported: 2..=20)")]
    UnsupportedK(usize),
    #[error("unsupported significance level {0} (supported: 0.05, 0.01)")]
    UnsupportedLevel(f64),
    #[error("wilcoxon test needs at least {min} non-zero differences, got {got}")]
    TooFewDifferences { got: usize, min: usize },
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// One estimate compared with its gold standard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub procedure: ProcedureId,
    pub dataset: String,
    pub inset_index: usize,
    pub metric: Metric,
    pub est: f64,
    pub gold: f64,
}

impl EvaluationRecord {
    pub fn err(&self) -> f64 {
        self.est - self.gold
    }

    pub fn abs_err(&self) -> f64 {
        self.err().abs()
    }

    /// `|Est - Gold| / Gold`, or `None` when gold is not positive.
    pub fn rel_err(&self) -> Option<f64> {
        (self.gold > 0.0).then(|| self.abs_err() / self.gold)
    }
}

/// Median with the mean of the two central values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile (the "type 7" definition).
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// Box-plot summary of a set of errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        Some(Summary {
            n: values.len(),
            min: quantile(values, 0.0)?,
            q1: quantile(values, 0.25)?,
            median: quantile(values, 0.5)?,
            q3: quantile(values, 0.75)?,
            max: quantile(values, 1.0)?,
        })
    }
}

/// Median errors per (procedure, dataset) and their per-procedure median.
#[derive(Debug, Clone, PartialEq)]
pub struct MedianTable {
    pub metric: Metric,
    pub procedures: Vec<ProcedureId>,
    pub datasets: Vec<String>,
    /// `cells[(procedure, dataset)]`; absent when there are no records.
    pub cells: BTreeMap<(ProcedureId, String), Summary>,
    /// Median over the dataset medians of each procedure.
    pub median_of_medians: BTreeMap<ProcedureId, f64>,
    /// Summary over all records of each procedure, pooled across datasets.
    pub pooled: BTreeMap<ProcedureId, Summary>,
}

impl MedianTable {
    pub fn median(&self, procedure: ProcedureId, dataset: &str) -> Option<f64> {
        self.cells.get(&(procedure, dataset.to_string())).map(|s| s.median)
    }
}

fn ordered_unique<T: Clone + PartialEq>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

/// Procedures in canonical order and datasets in first-seen order.
fn axes<'a>(records: impl Iterator<Item = &'a EvaluationRecord> + Clone) -> (Vec<ProcedureId>, Vec<String>) {
    let mut procedures = ordered_unique(records.clone().map(|r| r.procedure));
    procedures.sort();
    let datasets = ordered_unique(records.map(|r| r.dataset.clone()));
    (procedures, datasets)
}

pub fn median_errors(records: &[EvaluationRecord], metric: Metric) -> MedianTable {
    let relevant = records.iter().filter(|r| r.metric == metric);
    let (procedures, datasets) = axes(relevant.clone());
    let mut grouped: BTreeMap<(ProcedureId, String), Vec<f64>> = BTreeMap::new();
    let mut pooled_values: BTreeMap<ProcedureId, Vec<f64>> = BTreeMap::new();
    for r in relevant {
        grouped.entry((r.procedure, r.dataset.clone())).or_default().push(r.err());
        pooled_values.entry(r.procedure).or_default().push(r.err());
    }
    let cells: BTreeMap<_, _> = grouped
        .into_iter()
        .filter_map(|(k, v)| Summary::of(&v).map(|s| (k, s)))
        .collect();
    let median_of_medians = procedures
        .iter()
        .filter_map(|&p| {
            let meds: Vec<f64> = datasets
                .iter()
                .filter_map(|d| cells.get(&(p, d.clone())).map(|s| s.median))
                .collect();
            median(&meds).map(|m| (p, m))
        })
        .collect();
    let pooled = pooled_values
        .into_iter()
        .filter_map(|(p, v)| Summary::of(&v).map(|s| (p, s)))
        .collect();
    MedianTable {
        metric,
        procedures,
        datasets,
        cells,
        median_of_medians,
        pooled,
    }
}

pub const SMALL_REL_ERR: f64 = 0.05;
pub const LARGE_REL_ERR: f64 = 0.30;
/// Slack on threshold comparisons so decimal boundary cases (0.42 vs 0.40) land
/// in the inclusive class despite binary rounding.
const THRESHOLD_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelErrClass {
    Small,
    Moderate,
    Large,
}

pub fn classify_rel_err(rel: f64, small: f64, large: f64) -> RelErrClass {
    if rel < small - THRESHOLD_SLACK {
        RelErrClass::Small
    } else if rel > large + THRESHOLD_SLACK {
        RelErrClass::Large
    } else {
        RelErrClass::Moderate
    }
}

/// Shares of small, moderate and large relative errors in a group of records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RelErrProportions {
    pub included: usize,
    /// Records left out because their gold value is not positive.
    pub excluded: usize,
    pub small: f64,
    pub moderate: f64,
    pub large: f64,
}

pub fn relative_error_proportions<'a>(
    records: impl IntoIterator<Item = &'a EvaluationRecord>,
    small: f64,
    large: f64,
) -> RelErrProportions {
    let mut counts = [0usize; 3];
    let mut excluded = 0;
    for r in records {
        match r.rel_err() {
            Some(rel) => {
                let class = classify_rel_err(rel, small, large);
                counts[class as usize] += 1;
            }
            None => excluded += 1,
        }
    }
    let included: usize = counts.iter().sum();
    let share = |c: usize| if included == 0 { 0.0 } else { c as f64 / included as f64 };
    RelErrProportions {
        included,
        excluded,
        small: share(counts[0]),
        moderate: share(counts[1]),
        large: share(counts[2]),
    }
}

/// Relative-error proportions per procedure, overall (`None` dataset) and per dataset.
pub fn relative_error_classes(
    records: &[EvaluationRecord],
    metric: Metric,
    small: f64,
    large: f64,
) -> BTreeMap<(ProcedureId, Option<String>), RelErrProportions> {
    let relevant: Vec<&EvaluationRecord> = records.iter().filter(|r| r.metric == metric).collect();
    let (procedures, datasets) = axes(relevant.iter().copied());
    let mut out = BTreeMap::new();
    for &p in &procedures {
        let of_p: Vec<&EvaluationRecord> = relevant.iter().copied().filter(|r| r.procedure == p).collect();
        out.insert((p, None), relative_error_proportions(of_p.iter().copied(), small, large));
        for d in &datasets {
            let cell: Vec<&EvaluationRecord> = of_p.iter().copied().filter(|r| &r.dataset == d).collect();
            if !cell.is_empty() {
                out.insert((p, Some(d.clone())), relative_error_proportions(cell, small, large));
            }
        }
    }
    out
}

/// Ranks with ties replaced by their average rank (1-based, ascending).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub k: usize,
    pub n_datasets: usize,
    /// Per-dataset ranks, rows follow the input matrix.
    pub ranks: Vec<Vec<f64>>,
    pub average_ranks: Vec<f64>,
    pub chi_square: f64,
    pub chi_square_p: f64,
    pub iman_davenport_f: f64,
    pub iman_davenport_p: f64,
}

/// Friedman test on a datasets x procedures matrix of absolute errors (lower is better).
pub fn friedman(matrix: &[Vec<f64>]) -> Result<FriedmanResult, StatsError> {
    let n = matrix.len();
    let k = matrix.first().map_or(0, Vec::len);
    if k < 2 {
        return Err(StatsError::TooFewProcedures(k));
    }
    if n < 2 {
        return Err(StatsError::TooFewDatasets(n));
    }
    if let Some((row, r)) = matrix.iter().enumerate().find(|(_, r)| r.len() != k) {
        return Err(StatsError::RaggedMatrix {
            row,
            got: r.len(),
            expected: k,
        });
    }
    let ranks: Vec<Vec<f64>> = matrix.iter().map(|r| average_ranks(r)).collect();
    let avg: Vec<f64> = (0..k).map(|j| ranks.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let (nf, kf) = (n as f64, k as f64);
    let sum_sq: f64 = avg.iter().map(|r| r * r).sum();
    let chi = (12.0 * nf / (kf * (kf + 1.0)) * (sum_sq - kf * (kf + 1.0).powi(2) / 4.0)).max(0.0);
    let chi = if chi < 1e-12 { 0.0 } else { chi };
    let df1 = kf - 1.0;
    let df2 = (kf - 1.0) * (nf - 1.0);
    let chi_p = if chi == 0.0 {
        1.0
    } else {
        ChiSquared::new(df1).expect("positive df").sf(chi)
    };
    let denom = nf * (kf - 1.0) - chi;
    let (f, f_p) = if chi == 0.0 {
        (0.0, 1.0)
    } else if denom <= 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = (nf - 1.0) * chi / denom;
        (f, FisherSnedecor::new(df1, df2).expect("positive df").sf(f))
    };
    Ok(FriedmanResult {
        k,
        n_datasets: n,
        ranks,
        average_ranks: avg,
        chi_square: chi,
        chi_square_p: chi_p,
        iman_davenport_f: f,
        iman_davenport_p: f_p,
    })
}

/// Studentized-range based constants `q_alpha / sqrt(2)` for k = 2..=20.
const NEMENYI_Q_05: [f64; 19] = [
    1.960, 2.344, 2.569, 2.728, 2.850, 2.948, 3.031, 3.102, 3.164, 3.219, 3.268, 3.313, 3.354, 3.391,
    3.426, 3.458, 3.489, 3.517, 3.544,
];
const NEMENYI_Q_01: [f64; 19] = [
    2.576, 2.913, 3.113, 3.255, 3.364, 3.452, 3.526, 3.590, 3.646, 3.696, 3.741, 3.781, 3.818, 3.853,
    3.884, 3.914, 3.941, 3.967, 3.992,
];

pub fn nemenyi_q(k: usize, level: f64) -> Result<f64, StatsError> {
    let table = if (level - 0.05).abs() < 1e-12 {
        &NEMENYI_Q_05
    } else if (level - 0.01).abs() < 1e-12 {
        &NEMENYI_Q_01
    } else {
        return Err(StatsError::UnsupportedLevel(level));
    };
    if !(2..=20).contains(&k) {
        return Err(StatsError::UnsupportedK(k));
    }
    Ok(table[k - 2])
}

/// Nemenyi critical difference `q * sqrt(k(k+1) / (6 N))`.
pub fn nemenyi_cd(k: usize, n_datasets: usize, level: f64) -> Result<f64, StatsError> {
    if n_datasets == 0 {
        return Err(StatsError::TooFewDatasets(0));
    }
    let q = nemenyi_q(k, level)?;
    Ok(q * ((k * (k + 1)) as f64 / (6.0 * n_datasets as f64)).sqrt())
}

/// Index pairs whose average ranks differ by at least `cd`.
pub fn significant_pairs(average_ranks: &[f64], cd: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..average_ranks.len() {
        for j in i + 1..average_ranks.len() {
            if (average_ranks[i] - average_ranks[j]).abs() >= cd - 1e-12 {
                out.push((i, j));
            }
        }
    }
    out
}

/// Which member of a pair has smaller errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// The first sample has the smaller errors.
    FirstBetter,
    SecondBetter,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Non-zero differences used.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(W+, W-)`.
    pub w: f64,
    /// `P(T <= W)` under the null.
    pub p_one_sided: f64,
    pub p_two_sided: f64,
    pub exact: bool,
    pub direction: Direction,
}

/// Largest sample size for which the null distribution is computed exactly.
pub const WILCOXON_EXACT_MAX: usize = 20;
pub const WILCOXON_MIN_DIFFERENCES: usize = 5;

/// Wilcoxon signed-rank test on paired errors `(a_i, b_i)`.
///
/// Zero differences are dropped. For up to 20 remaining pairs the p-value is
/// exact, counting sign assignments over the (tie-averaged) ranks; above that a
/// normal approximation with continuity and tie correction is used.
pub fn wilcoxon(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            n: 0,
            w_plus: 0.0,
            w_minus: 0.0,
            w: 0.0,
            p_one_sided: 1.0,
            p_two_sided: 1.0,
            exact: true,
            direction: Direction::None,
        });
    }
    if n < WILCOXON_MIN_DIFFERENCES {
        return Err(StatsError::TooFewDifferences {
            got: n,
            min: WILCOXON_MIN_DIFFERENCES,
        });
    }
    Ok(signed_rank(&diffs))
}

/// Signed-rank statistics for non-zero differences (no minimum-size check).
pub fn signed_rank(diffs: &[f64]) -> WilcoxonResult {
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let w_minus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d < 0.0).map(|(_, r)| r).sum();
    let w = w_plus.min(w_minus);
    let exact = n <= WILCOXON_EXACT_MAX;
    let p_one = if exact {
        exact_lower_tail(&ranks, w)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = tie_groups(&abs).iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term).sqrt();
        let z = (w - mean + 0.5) / sd;
        Normal::standard().cdf(z).min(1.0)
    };
    let direction = if w_minus > w_plus {
        Direction::FirstBetter
    } else if w_plus > w_minus {
        Direction::SecondBetter
    } else {
        Direction::None
    };
    WilcoxonResult {
        n,
        w_plus,
        w_minus,
        w,
        p_one_sided: p_one,
        p_two_sided: (2.0 * p_one).min(1.0),
        exact,
        direction,
    }
}

fn tie_groups(values: &[f64]) -> Vec<usize> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let j = v[i..].iter().take_while(|x| **x == v[i]).count();
        if j > 1 {
            groups.push(j);
        }
        i += j;
    }
    groups
}

/// `P(W+ <= w)` under the null, counting the 2^n equally likely sign vectors.
///
/// Ranks are doubled to integers (tie averages are half-integers) and the
/// number of sign vectors per attainable sum is built up one rank at a time.
fn exact_lower_tail(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut ways = vec![0u64; total + 1];
    ways[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if ways[s] > 0 {
                ways[s + r] += ways[s];
            }
        }
        reach += r;
    }
    let limit = (w * 2.0).round() as usize;
    let hits: u64 = ways[..=limit.min(total)].iter().sum();
    hits as f64 / 2f64.powi(ranks.len() as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(procedure: ProcedureId, dataset: &str, est: f64, gold: f64) -> EvaluationRecord {
        EvaluationRecord {
            procedure,
            dataset: dataset.into(),
            inset_index: 1,
            metric: Metric::Alpha,
            est,
            gold,
        }
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[-0.02, 0.00, 0.05]), Some(0.0));
        assert_eq!(median(&[3.0, 1.0, 2.0, 4.0]), Some(2.5));
        assert_eq!(median(&[0.7; 5]), Some(0.7));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn median_table_of_published_alpha_columns() {
        // Per-language median errors by Alpha, one column per procedure, alb..swe.
        let columns: [(ProcedureId, [f64; 13], f64); 6] = [
            (ProcedureId::XvalStratBlock, [0.052, 0.009, -0.016, 0.037, 0.009, 0.011, -0.048, 0.008, -0.046, 0.018, 0.003, -0.008, 0.055], 0.009),
            (ProcedureId::XvalNostratBlock, [0.036, 0.013, -0.017, 0.049, 0.013, 0.016, -0.048, 0.008, -0.051, 0.015, -0.004, 0.031, 0.057], 0.013),
            (ProcedureId::XvalStratRand, [0.206, 0.046, -0.010, 0.059, 0.025, 0.054, -0.015, 0.029, 0.026, 0.055, 0.040, 0.070, 0.106], 0.046),
            (ProcedureId::Seq9to1x20, [0.001, -0.019, -0.040, 0.009, -0.011, -0.020, -0.040, -0.027, -0.047, -0.025, -0.029, 0.012, 0.011], -0.020),
            (ProcedureId::Seq9to1x10, [0.001, -0.025, -0.042, 0.010, -0.007, -0.017, -0.045, -0.029, -0.043, -0.023, -0.026, 0.011, 0.006], -0.023),
            (ProcedureId::Seq2to1x10Semi, [0.001, -0.043, -0.039, 0.001, -0.007, -0.031, -0.085, -0.045, -0.069, -0.039, -0.031, -0.011, -0.028], -0.031),
        ];
        let langs = ["alb", "bul", "eng", "ger", "hun", "pol", "por", "rus", "scb", "slk", "slv", "spa", "swe"];
        let mut records = Vec::new();
        for (p, col, _) in &columns {
            for (lang, err) in langs.iter().zip(col) {
                records.push(record(*p, lang, 0.5 + err, 0.5));
            }
        }
        let table = median_errors(&records, Metric::Alpha);
        assert_eq!(table.datasets.len(), 13);
        for (p, _, expected) in &columns {
            assert!((table.median_of_medians[p] - expected).abs() < 1e-9, "{p}");
        }
    }

    #[test]
    fn rel_err_boundaries() {
        assert_eq!(classify_rel_err(record(ProcedureId::Seq9to1x10, "d", 0.42, 0.40).rel_err().unwrap(), 0.05, 0.30), RelErrClass::Moderate);
        assert_eq!(classify_rel_err(0.0, 0.05, 0.30), RelErrClass::Small);
        assert_eq!(classify_rel_err(0.30, 0.05, 0.30), RelErrClass::Moderate);
        assert_eq!(classify_rel_err(0.31, 0.05, 0.30), RelErrClass::Large);
        assert_eq!(record(ProcedureId::Seq9to1x10, "d", 0.1, -0.1).rel_err(), None);
    }

    #[test]
    fn friedman_identical_columns() {
        let m = vec![vec![0.1, 0.1, 0.1]; 4];
        let r = friedman(&m).unwrap();
        assert_eq!(r.average_ranks, vec![2.0, 2.0, 2.0]);
        assert_eq!(r.chi_square, 0.0);
        assert_eq!(r.iman_davenport_p, 1.0);
        assert_eq!(r.chi_square_p, 1.0);
    }

    #[test]
    fn friedman_one_best_procedure() {
        // procedure 0 best everywhere; the others alternate 2/3.
        let m = vec![
            vec![0.01, 0.02, 0.03],
            vec![0.01, 0.03, 0.02],
            vec![0.01, 0.02, 0.03],
            vec![0.01, 0.03, 0.02],
        ];
        let r = friedman(&m).unwrap();
        assert_eq!(r.average_ranks, vec![1.0, 2.5, 2.5]);
        // hand evaluation: 12*4/(3*4) * (1 + 6.25 + 6.25 - 3*16/4) = 4 * 1.5
        assert!((r.chi_square - 6.0).abs() < 1e-12);
        // Iman-Davenport: 3 * 6 / (4*2 - 6) = 9
        assert!((r.iman_davenport_f - 9.0).abs() < 1e-12);
        for row in &r.ranks {
            assert_eq!(row.iter().sum::<f64>(), 6.0);
        }
    }

    #[test]
    fn friedman_preconditions() {
        assert_eq!(friedman(&[vec![1.0], vec![2.0]]), Err(StatsError::TooFewProcedures(1)));
        assert_eq!(friedman(&[vec![1.0, 2.0]]), Err(StatsError::TooFewDatasets(1)));
        assert!(matches!(friedman(&[vec![1.0, 2.0], vec![1.0]]), Err(StatsError::RaggedMatrix { .. })));
    }

    #[test]
    fn critical_difference() {
        let cd = nemenyi_cd(6, 13, 0.05).unwrap();
        assert!((cd - 2.09).abs() <= 0.01, "{cd}");
        let quarter = nemenyi_cd(6, 52, 0.05).unwrap();
        assert!((quarter - cd / 2.0).abs() < 1e-12);
        let k2: Vec<f64> = (2..10).map(|n| nemenyi_cd(2, n, 0.05).unwrap()).collect();
        assert!(k2.windows(2).all(|w| w[1] < w[0]));
        assert!((k2[0] - 1.960 * (0.5f64).sqrt()).abs() < 1e-12);
        assert!(nemenyi_cd(21, 13, 0.05).is_err());
        assert!(nemenyi_cd(1, 13, 0.05).is_err());
        assert!(nemenyi_cd(6, 13, 0.10).is_err());
        assert!(nemenyi_cd(6, 13, 0.01).unwrap() > cd);
    }

    #[test]
    fn ties_are_averaged() {
        assert_eq!(average_ranks(&[0.3, 0.1, 0.3, 0.2]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn wilcoxon_all_better() {
        let a: Vec<f64> = (0..13).map(|i| 0.01 * i as f64).collect();
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + 0.001 * (i + 1) as f64).collect();
        let r = wilcoxon(&a, &b).unwrap();
        assert_eq!(r.direction, Direction::FirstBetter);
        assert_eq!(r.w_plus, 0.0);
        assert!((r.p_one_sided - 1.0 / 8192.0).abs() < 1e-15);
        let swapped = wilcoxon(&b, &a).unwrap();
        assert_eq!(swapped.direction, Direction::SecondBetter);
        assert_eq!(swapped.p_one_sided, r.p_one_sided);
        assert_eq!(swapped.p_two_sided, r.p_two_sided);
    }

    #[test]
    fn wilcoxon_degenerate_inputs() {
        let r = wilcoxon(&[0.1; 6], &[0.1; 6]).unwrap();
        assert_eq!(r.p_two_sided, 1.0);
        assert_eq!(r.direction, Direction::None);
        assert!(matches!(wilcoxon(&[0.1, 0.2], &[0.2, 0.1]), Err(StatsError::TooFewDifferences { got: 2, .. })));
        assert!(matches!(wilcoxon(&[0.1], &[0.2, 0.1]), Err(StatsError::LengthMismatch(1, 2))));
    }

    #[test]
    fn wilcoxon_normal_approximation_large_n() {
        let a: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..30).map(|i| i as f64 + if i % 3 == 0 { -0.5 } else { 1.0 + i as f64 * 0.01 }).collect();
        let r = wilcoxon(&a, &b).unwrap();
        assert!(!r.exact);
        assert_eq!(r.direction, Direction::FirstBetter);
        assert!(r.p_one_sided < 0.01);
    }
}
