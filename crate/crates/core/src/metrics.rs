//! Ordinal agreement (Krippendorff's Alpha) and the extreme-class F1 average.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricError {
    /// All pairable values fall in one class, so expected disagreement is zero.
    #[error("alpha is undefined: expected disagreement is zero")]
    UndefinedAlpha,
    #[error("alpha needs at least one scored pair")]
    TooFewPairs,
}

/// Performance measure identifiers as they appear in output files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "alpha")]
    Alpha,
    #[serde(rename = "f1bar")]
    F1Bar,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Alpha, Metric::F1Bar];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Alpha => "alpha",
            Metric::F1Bar => "f1bar",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "alpha" => Ok(Metric::Alpha),
            "f1bar" | "f1_bar" => Ok(Metric::F1Bar),
            other => Err(format!("unknown metric {other:?} (expected alpha or f1bar)")),
        }
    }
}

/// Gold-by-predicted counts over the classes (-1, 0, +1).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_pairs(gold: &[Label], predicted: &[Label]) -> Self {
        assert_eq!(gold.len(), predicted.len(), "gold and predicted lengths differ");
        let mut m = Self::default();
        for (g, p) in gold.iter().zip(predicted) {
            m.add(*g, *p);
        }
        m
    }

    pub fn add(&mut self, gold: Label, predicted: Label) {
        self.counts[gold.index()][predicted.index()] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for g in 0..3 {
            for p in 0..3 {
                self.counts[g][p] += other.counts[g][p];
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, gold: Label, predicted: Label) -> u64 {
        self.counts[gold.index()][predicted.index()]
    }
}

/// Symmetric pairing table: confusion matrix plus its transpose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceMatrix {
    pub counts: [[u64; 3]; 3],
    pub marginals: [u64; 3],
    pub total: u64,
}

pub fn coincidence(conf: &ConfusionMatrix) -> CoincidenceMatrix {
    let mut counts = [[0u64; 3]; 3];
    for (c, row) in counts.iter_mut().enumerate() {
        for (k, cell) in row.iter_mut().enumerate() {
            *cell = conf.counts[c][k] + conf.counts[k][c];
        }
    }
    let marginals = counts.map(|row| row.iter().sum());
    CoincidenceMatrix {
        counts,
        marginals,
        total: marginals.iter().sum(),
    }
}

/// Exact value of Alpha as a reduced fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub numer: i128,
    pub denom: i128,
}

impl Ratio {
    fn reduced(numer: i128, denom: i128) -> Self {
        let g = gcd(numer.unsigned_abs(), denom.unsigned_abs()).max(1) as i128;
        let sign = if denom < 0 { -1 } else { 1 };
        Ratio {
            numer: sign * numer / g,
            denom: sign * denom / g,
        }
    }

    pub fn to_f64(self) -> f64 {
        self.numer as f64 / self.denom as f64
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn squared_distance(c: usize, k: usize) -> i128 {
    let d = c as i128 - k as i128;
    d * d
}

/// Alpha as an exact fraction.
///
/// `1 - D_o/D_e` with the 1/N and 1/(N(N-1)) factors cancelled:
/// `(S_e - (N-1) S_o) / S_e` where `S_o = sum N(c,c') d^2` and
/// `S_e = sum N(c) N(c') d^2`.
pub fn alpha_exact(coin: &CoincidenceMatrix) -> Result<Ratio, MetricError> {
    if coin.total < 2 {
        return Err(MetricError::TooFewPairs);
    }
    let mut observed: i128 = 0;
    let mut expected: i128 = 0;
    for c in 0..3 {
        for k in 0..3 {
            let d2 = squared_distance(c, k);
            observed += coin.counts[c][k] as i128 * d2;
            expected += coin.marginals[c] as i128 * coin.marginals[k] as i128 * d2;
        }
    }
    if expected == 0 {
        return Err(MetricError::UndefinedAlpha);
    }
    let n = coin.total as i128;
    Ok(Ratio::reduced(expected - (n - 1) * observed, expected))
}

/// Krippendorff's Alpha with the ordinal |c - c'| difference function.
pub fn alpha(coin: &CoincidenceMatrix) -> Result<f64, MetricError> {
    alpha_exact(coin).map(Ratio::to_f64)
}

/// F1 of one class; zero when the class is neither present nor predicted.
pub fn f1_class(conf: &ConfusionMatrix, class: Label) -> f64 {
    let c = class.index();
    let tp = conf.counts[c][c];
    let gold_total: u64 = conf.counts[c].iter().sum();
    let pred_total: u64 = (0..3).map(|g| conf.counts[g][c]).sum();
    let denom = gold_total + pred_total;
    if denom == 0 || tp == 0 {
        return 0.0;
    }
    (2 * tp) as f64 / denom as f64
}

/// Mean of the negative-class and positive-class F1 scores.
pub fn f1_bar(conf: &ConfusionMatrix) -> f64 {
    (f1_class(conf, Label::Negative) + f1_class(conf, Label::Positive)) / 2.0
}

/// Value of a metric on a confusion matrix.
pub fn evaluate(metric: Metric, conf: &ConfusionMatrix) -> Result<f64, MetricError> {
    match metric {
        Metric::Alpha => alpha(&coincidence(conf)),
        Metric::F1Bar => Ok(f1_bar(conf)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::*;

    fn example() -> ConfusionMatrix {
        ConfusionMatrix::from_pairs(&[Negative, Neutral, Positive, Negative], &[Negative, Neutral, Positive, Neutral])
    }

    #[test]
    fn coincidence_of_example() {
        let conf = example();
        assert_eq!(conf.counts, [[1, 1, 0], [0, 1, 0], [0, 0, 1]]);
        let coin = coincidence(&conf);
        assert_eq!(coin.counts, [[2, 1, 0], [1, 2, 0], [0, 0, 2]]);
        assert_eq!(coin.total, 8);
        assert_eq!(coin.marginals, [3, 3, 2]);
        assert_eq!(coincidence(&ConfusionMatrix::default()).total, 0);
    }

    #[test]
    fn alpha_of_example() {
        let coin = coincidence(&example());
        // 1 - (2/8) / (78/56) = 1 - 14/78
        assert_eq!(alpha_exact(&coin).unwrap(), Ratio { numer: 32, denom: 39 });
        assert!((alpha(&coin).unwrap() - 0.820_512_820_512_820_5).abs() < 1e-15);
    }

    #[test]
    fn alpha_perfect_and_degenerate() {
        let perfect = ConfusionMatrix::from_pairs(&[Negative, Neutral, Positive, Positive], &[Negative, Neutral, Positive, Positive]);
        assert_eq!(alpha(&coincidence(&perfect)).unwrap(), 1.0);
        let single = ConfusionMatrix::from_pairs(&[Neutral; 4], &[Neutral; 4]);
        assert_eq!(alpha(&coincidence(&single)), Err(MetricError::UndefinedAlpha));
        assert_eq!(alpha(&coincidence(&ConfusionMatrix::default())), Err(MetricError::TooFewPairs));
    }

    #[test]
    fn extreme_disagreement_weighs_four_times() {
        let near = ConfusionMatrix { counts: [[5, 1, 0], [0, 5, 0], [0, 0, 5]] };
        let far = ConfusionMatrix { counts: [[5, 0, 1], [0, 5, 0], [0, 0, 5]] };
        let observed = |c: &ConfusionMatrix| {
            let coin = coincidence(c);
            (0..3)
                .flat_map(|a| (0..3).map(move |b| (a, b)))
                .map(|(a, b)| coin.counts[a][b] as i128 * squared_distance(a, b))
                .sum::<i128>()
        };
        assert_eq!(observed(&far), 4 * observed(&near));
    }

    #[test]
    fn f1_bar_examples() {
        assert!((f1_bar(&example()) - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
        let perfect = ConfusionMatrix { counts: [[3, 0, 0], [0, 4, 0], [0, 0, 2]] };
        assert_eq!(f1_bar(&perfect), 1.0);
        let all_wrong = ConfusionMatrix { counts: [[0, 2, 1], [0, 4, 0], [3, 1, 0]] };
        assert_eq!(f1_bar(&all_wrong), 0.0);
        assert_eq!(f1_bar(&ConfusionMatrix::default()), 0.0);
    }

    #[test]
    fn constant_predictor_on_balanced_set() {
        // Gold balanced over 3 classes, every prediction positive.
        let gold = [Negative, Negative, Neutral, Neutral, Positive, Positive];
        let conf = ConfusionMatrix::from_pairs(&gold, &[Positive; 6]);
        // F1(+1): tp=2, gold=2, predicted=6 -> 4/8. F1(-1) = 0.
        assert_eq!(f1_bar(&conf), 0.25);
        assert!(alpha(&coincidence(&conf)).unwrap() <= 0.0);
    }

    fn conf_strategy() -> impl Strategy<Value = ConfusionMatrix> {
        prop::array::uniform3(prop::array::uniform3(0u64..20)).prop_map(|counts| ConfusionMatrix { counts })
    }

    fn reverse(conf: &ConfusionMatrix) -> ConfusionMatrix {
        let mut out = ConfusionMatrix::default();
        for g in 0..3 {
            for p in 0..3 {
                out.counts[2 - g][2 - p] = conf.counts[g][p];
            }
        }
        out
    }

    proptest! {
        #[test]
        fn coincidence_is_symmetric(conf in conf_strategy()) {
            let coin = coincidence(&conf);
            for a in 0..3 {
                for b in 0..3 {
                    prop_assert_eq!(coin.counts[a][b], coin.counts[b][a]);
                }
                prop_assert_eq!(coin.marginals[a], coin.counts[a].iter().sum::<u64>());
            }
            prop_assert_eq!(coin.total, 2 * conf.total());
        }

        #[test]
        fn alpha_bounded_and_reversal_invariant(conf in conf_strategy()) {
            let a = alpha_exact(&coincidence(&conf));
            let r = alpha_exact(&coincidence(&reverse(&conf)));
            prop_assert_eq!(a, r);
            if let Ok(v) = a {
                prop_assert!(v.to_f64() <= 1.0);
            }
        }

        #[test]
        fn f1_bar_ignores_correct_neutrals(conf in conf_strategy(), extra in 0u64..50) {
            let mut more = conf;
            more.counts[1][1] += extra;
            prop_assert_eq!(f1_bar(&conf), f1_bar(&more));
        }
    }
}
