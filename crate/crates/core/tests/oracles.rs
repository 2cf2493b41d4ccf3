//! Library results checked against independent, deliberately naive oracles.

use std::collections::{BTreeMap, BTreeSet};

use estproc::classify::{fallback_label, ConstantPredictor, ExternalPredictions, Learner, Predictor};
use estproc::corpus::{InOutPair, Label, TimeOrderedCorpus};
use estproc::features::{build_vocabulary, delta_tfidf, Plane};
use estproc::metrics::{alpha, coincidence, f1_bar, ConfusionMatrix};
use estproc::resample::{
    estimate, gold, plan_xval, Aggregation, EstimateOptions, ProcedureId, SplitElement, SplitPlan,
};
use estproc::stats::{
    average_ranks, friedman, nemenyi_cd, relative_error_proportions, wilcoxon, EvaluationRecord,
};
use estproc::metrics::Metric;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use Label::*;

/// Alpha straight from the pairable-value definition, without a coincidence matrix.
fn alpha_pairwise(gold: &[Label], pred: &[Label]) -> Option<f64> {
    let values: Vec<i64> = gold.iter().chain(pred).map(|l| l.value() as i64).collect();
    let n = values.len() as f64;
    let d2 = |a: i64, b: i64| ((a - b) * (a - b)) as f64;
    let observed: f64 = gold.iter().zip(pred).map(|(g, p)| 2.0 * d2(g.value() as i64, p.value() as i64)).sum::<f64>() / n;
    let mut expected = 0.0;
    for (i, &a) in values.iter().enumerate() {
        for (j, &b) in values.iter().enumerate() {
            if i != j {
                expected += d2(a, b);
            }
        }
    }
    expected /= n * (n - 1.0);
    (expected > 0.0).then(|| 1.0 - observed / expected)
}

/// Mean F1 of the extreme classes from precision and recall.
fn f1_bar_pr(gold: &[Label], pred: &[Label]) -> f64 {
    let f1 = |c: Label| {
        let tp = gold.iter().zip(pred).filter(|(g, p)| **g == c && **p == c).count() as f64;
        let predicted = pred.iter().filter(|p| **p == c).count() as f64;
        let actual = gold.iter().filter(|g| **g == c).count() as f64;
        if tp == 0.0 {
            return 0.0;
        }
        let (precision, recall) = (tp / predicted, tp / actual);
        2.0 * precision * recall / (precision + recall)
    };
    (f1(Negative) + f1(Positive)) / 2.0
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

#[test]
fn vocabulary_matches_brute_force_ngram_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pool = ["good", "bad", "meh", "day", "the", "very"];
    let docs: Vec<Vec<String>> = (0..20)
        .map(|_| {
            let len = rng.gen_range(0..7);
            (0..len).map(|_| pool[rng.gen_range(0..pool.len())].to_string()).collect()
        })
        .collect();
    let labels: Vec<Label> = (0..20).map(|i| Label::from_index(i % 3)).collect();
    let vocab = build_vocabulary(&docs, &labels, 5, 2);

    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for d in &docs {
        let mut seen = BTreeSet::new();
        for w in d {
            seen.insert(w.clone());
        }
        for i in 1..d.len() {
            seen.insert(format!("{}_{}", d[i - 1], d[i]));
        }
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let expected: Vec<String> = df.into_iter().filter(|(_, c)| *c >= 5).map(|(t, _)| t).collect();
    assert_eq!(vocab.terms(), expected.as_slice());
}

#[test]
fn delta_tfidf_matches_direct_formula() {
    let texts = [
        "good good day",
        "good film",
        "bad day",
        "bad bad film",
        "day film",
        "good day",
        "bad film",
        "film day",
        "good bad",
        "day day",
    ];
    let labels = [Positive, Positive, Negative, Negative, Neutral, Positive, Negative, Neutral, Neutral, Neutral];
    let docs: Vec<Vec<String>> = texts.iter().map(|t| words(t)).collect();
    let vocab = build_vocabulary(&docs, &labels, 1, 1);
    for plane in Plane::BOTH {
        let upper: Vec<bool> = labels.iter().map(|l| plane.is_upper(*l)).collect();
        let p_docs = upper.iter().filter(|u| **u).count() as f64;
        let n_docs = upper.len() as f64 - p_docs;
        for (doc, text) in docs.iter().zip(texts) {
            let v = delta_tfidf(doc, &vocab, plane);
            for term in ["good", "bad", "day", "film"] {
                let count = text.split(' ').filter(|w| *w == term).count() as f64;
                let pt = docs.iter().zip(&upper).filter(|(d, u)| **u && d.contains(&term.to_string())).count() as f64;
                let nt = docs.iter().zip(&upper).filter(|(d, u)| !**u && d.contains(&term.to_string())).count() as f64;
                let expected = count * ((p_docs * (nt + 0.5)) / (n_docs * (pt + 0.5))).log2();
                let got = v.get(vocab.index_of(term).unwrap()).unwrap_or(0.0);
                assert!((got - expected).abs() < 1e-12, "{plane:?} {text:?} {term}: {got} vs {expected}");
            }
        }
    }
}

#[test]
fn vocabulary_ignores_document_order() {
    let texts = ["a b c", "a b", "b c", "c a", "a b c d", "d a", "b b", "c c a"];
    let labels = [Negative, Neutral, Positive, Negative, Neutral, Positive, Negative, Positive];
    let docs: Vec<Vec<String>> = texts.iter().map(|t| words(t)).collect();
    let forward = build_vocabulary(&docs, &labels, 2, 2);
    let rev_docs: Vec<Vec<String>> = docs.iter().rev().cloned().collect();
    let rev_labels: Vec<Label> = labels.iter().rev().copied().collect();
    let backward = build_vocabulary(&rev_docs, &rev_labels, 2, 2);
    assert_eq!(forward.terms(), backward.terms());
    for plane in Plane::BOTH {
        assert_eq!(forward.idf_deltas(plane), backward.idf_deltas(plane));
    }
}

#[test]
fn blocked_stratified_plan_assertions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let labels: Vec<Label> = (0..537).map(|_| Label::from_index(rng.gen_range(0..3))).collect();
    let plan = plan_xval(&labels, true, false, 10, 0).unwrap();
    let total: [usize; 3] = Label::ALL.map(|c| labels.iter().filter(|l| **l == c).count());
    let mut covered = vec![0; labels.len()];
    for el in &plan {
        for &i in &el.test {
            covered[i] += 1;
        }
        for c in Label::ALL {
            // class subsequence positions of this fold's members
            let subseq: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            let ranks: Vec<usize> = el
                .test
                .iter()
                .filter(|&&i| labels[i] == c)
                .map(|i| subseq.iter().position(|j| j == i).unwrap())
                .collect();
            let expected = total[c.index()] as f64 / 10.0;
            assert!((ranks.len() as f64 - expected).abs() <= 1.0);
            assert!(ranks.windows(2).all(|w| w[1] == w[0] + 1), "class run not contiguous");
        }
        assert_eq!(el.train.len() + el.test.len(), labels.len());
    }
    assert!(covered.iter().all(|&c| c == 1));
}

fn corpus_of(labels: &[Label]) -> TimeOrderedCorpus {
    TimeOrderedCorpus::from_rows("t", labels.iter().enumerate().map(|(i, l)| (i.to_string(), *l, "")))
}

#[test]
fn estimate_is_mean_of_hand_computed_elements() {
    let gold_labels = [
        Negative, Neutral, Positive, Negative, Positive, Neutral, Neutral, Positive, Negative, Neutral,
        Positive, Positive, Negative, Neutral, Negative, Neutral, Positive, Negative, Neutral, Positive,
    ];
    let predicted = [
        Negative, Neutral, Neutral, Negative, Positive, Positive, Neutral, Positive, Neutral, Neutral,
        Positive, Negative, Negative, Neutral, Negative, Positive, Positive, Neutral, Neutral, Neutral,
    ];
    let corpus = corpus_of(&gold_labels);
    let learner = ExternalPredictions::from_labels(predicted.to_vec());
    let pair = InOutPair {
        inset_index: 1,
        in_range: 0..20,
        out_range: 20..20,
    };
    let plan = SplitPlan {
        procedure: ProcedureId::XvalNostratBlock,
        elements: vec![
            SplitElement {
                train: (10..20).collect(),
                test: (0..10).collect(),
            },
            SplitElement {
                train: (0..10).collect(),
                test: (10..20).collect(),
            },
        ],
        seed: 0,
    };
    let est = estimate(&corpus, &pair, &plan, &learner, EstimateOptions::default()).unwrap();
    let a = |r: std::ops::Range<usize>| alpha_pairwise(&gold_labels[r.clone()], &predicted[r]).unwrap();
    let f = |r: std::ops::Range<usize>| f1_bar_pr(&gold_labels[r.clone()], &predicted[r]);
    assert!((est.value(Metric::Alpha).unwrap() - (a(0..10) + a(10..20)) / 2.0).abs() < 1e-12);
    assert!((est.value(Metric::F1Bar).unwrap() - (f(0..10) + f(10..20)) / 2.0).abs() < 1e-12);

    let serial = estimate(&corpus, &pair, &plan, &learner, EstimateOptions { aggregation: Aggregation::Mean, parallel: false }).unwrap();
    assert_eq!(serial, est);
}

#[test]
fn perfect_predictions_chain() {
    let labels: Vec<Label> = (0..600).map(|i| Label::from_index((i * 7) % 3)).collect();
    let corpus = corpus_of(&labels);
    let learner = ExternalPredictions::from_labels(labels.clone());
    let pair = InOutPair {
        inset_index: 1,
        in_range: 0..400,
        out_range: 400..600,
    };
    let plan = ProcedureId::Seq9to1x10.plan(&labels[..400], 0, 0.5).unwrap();
    let est = estimate(&corpus, &pair, &plan, &learner, EstimateOptions::default()).unwrap();
    assert_eq!(est.value(Metric::Alpha), Some(1.0));
    assert_eq!(est.value(Metric::F1Bar), Some(1.0));
    let g = gold(&corpus, &pair, &learner, 0);
    assert_eq!((g.metric(Metric::Alpha), g.metric(Metric::F1Bar)), (Some(1.0), Some(1.0)));
}

struct Constant(Label);

impl Learner for Constant {
    fn fit(&self, _train: &[usize], _seed: u64) -> Box<dyn Predictor + '_> {
        Box::new(ConstantPredictor(self.0))
    }
}

#[test]
fn constant_predictor_gold_on_balanced_out_set() {
    let labels: Vec<Label> = (0..30).map(|i| Label::from_index(i % 3)).collect();
    let corpus = corpus_of(&labels);
    let pair = InOutPair {
        inset_index: 1,
        in_range: 0..15,
        out_range: 15..30,
    };
    let g = gold(&corpus, &pair, &Constant(Positive), 0);
    let out_gold = &labels[15..30];
    let pred = vec![Positive; 15];
    let oracle_alpha = alpha_pairwise(out_gold, &pred).unwrap();
    assert!((g.metric(Metric::Alpha).unwrap() - oracle_alpha).abs() < 1e-12);
    assert!(oracle_alpha <= 0.0);
    let f1_pos = 2.0 * 5.0 / (5.0 + 15.0);
    assert!((g.metric(Metric::F1Bar).unwrap() - f1_pos / 2.0).abs() < 1e-12);
    assert!((g.metric(Metric::F1Bar).unwrap() - f1_bar_pr(out_gold, &pred)).abs() < 1e-12);
}

#[test]
fn relative_error_classes_match_filter_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let records: Vec<EvaluationRecord> = (0..20)
        .map(|k| EvaluationRecord {
            procedure: ProcedureId::Seq9to1x20,
            dataset: "d".into(),
            inset_index: k,
            metric: Metric::Alpha,
            est: rng.gen_range(0.0..0.8),
            gold: rng.gen_range(-0.1..0.7),
        })
        .collect();
    let got = relative_error_proportions(&records, 0.05, 0.30);
    let rel: Vec<f64> = records.iter().filter(|r| r.gold > 0.0).map(|r| (r.est - r.gold).abs() / r.gold).collect();
    let n = rel.len() as f64;
    assert_eq!(got.included, rel.len());
    assert_eq!(got.excluded, 20 - rel.len());
    assert_eq!(got.small, rel.iter().filter(|r| **r < 0.05).count() as f64 / n);
    assert_eq!(got.large, rel.iter().filter(|r| **r > 0.30).count() as f64 / n);
    assert!((got.small + got.moderate + got.large - 1.0).abs() < 1e-12);

    let doubled: Vec<EvaluationRecord> = records.iter().chain(&records).cloned().collect();
    let twice = relative_error_proportions(&doubled, 0.05, 0.30);
    assert_eq!((twice.small, twice.moderate, twice.large), (got.small, got.moderate, got.large));
}

/// `P(W+ <= w)` by listing every sign vector.
fn enumerate_lower_tail(abs_diffs: &[f64], w: f64) -> f64 {
    let ranks = average_ranks(abs_diffs);
    let n = ranks.len();
    let hits = (0u32..1 << n)
        .filter(|mask| {
            let w_plus: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
            w_plus <= w + 1e-9
        })
        .count();
    hits as f64 / (1u64 << n) as f64
}

#[test]
fn wilcoxon_six_pairs_by_enumeration() {
    let a = [0.12, 0.30, 0.25, 0.08, 0.40, 0.22];
    let b = [0.10, 0.35, 0.31, 0.15, 0.52, 0.20];
    let r = wilcoxon(&a, &b).unwrap();
    let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let expected = enumerate_lower_tail(&abs, r.w);
    assert!((r.p_one_sided - expected).abs() < 1e-12);
    assert!((r.p_two_sided - (2.0 * expected).min(1.0)).abs() < 1e-12);
}

#[test]
fn nemenyi_cd_scales_with_root_n() {
    for k in 2..=20 {
        for level in [0.05, 0.01] {
            let base = nemenyi_cd(k, 1, level).unwrap();
            for n in [2, 5, 13, 52, 100] {
                assert!((nemenyi_cd(k, n, level).unwrap() * (n as f64).sqrt() - base).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #[test]
    fn friedman_rows_are_tie_averaged_permutations(
        rows in prop::collection::vec(prop::collection::vec(0u8..4, 6), 2..15)
    ) {
        let matrix: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| v as f64 / 10.0).collect()).collect();
        let f = friedman(&matrix).unwrap();
        for r in &f.ranks {
            prop_assert!((r.iter().sum::<f64>() - 21.0).abs() < 1e-12);
        }
        prop_assert!((f.average_ranks.iter().sum::<f64>() - 21.0).abs() < 1e-9);
        prop_assert!(f.chi_square >= 0.0);
    }

    #[test]
    fn fallback_is_monotone_in_first_distance(d2 in -5.0f64..5.0, a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(fallback_label(lo, d2).value() <= fallback_label(hi, d2).value());
    }

    #[test]
    fn metrics_agree_with_oracles(pairs in prop::collection::vec((0usize..3, 0usize..3), 3..40)) {
        let gold: Vec<Label> = pairs.iter().map(|p| Label::from_index(p.0)).collect();
        let pred: Vec<Label> = pairs.iter().map(|p| Label::from_index(p.1)).collect();
        let conf = ConfusionMatrix::from_pairs(&gold, &pred);
        match (alpha(&coincidence(&conf)), alpha_pairwise(&gold, &pred)) {
            (Ok(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (Err(_), None) => {}
            (a, b) => prop_assert!(false, "library {a:?} vs oracle {b:?}"),
        }
        prop_assert!((f1_bar(&conf) - f1_bar_pr(&gold, &pred)).abs() < 1e-12);
    }
}
