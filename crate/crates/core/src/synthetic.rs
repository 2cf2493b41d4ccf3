//! Seeded synthetic time-ordered corpora.
//!
//! Each document mixes neutral filler with sentiment-bearing words from three
//! sources:
//!
//! * a stable, Zipf-weighted vocabulary per class (more training data reveals
//!   more of its tail),
//! * a per-segment vocabulary that is replaced every `period` instances (drift),
//! * short topic bursts with their own class-specific words.
//!
//! The i.i.d. variant keeps only the stable vocabulary, so labels and words do
//! not depend on position.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, TimeOrderedCorpus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Drift,
    Iid,
}

impl std::str::FromStr for SyntheticKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "drift" => Ok(SyntheticKind::Drift),
            "iid" => Ok(SyntheticKind::Iid),
            other => Err(format!("unknown synthetic kind {other:?} (expected drift or iid)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub n: usize,
    pub kind: SyntheticKind,
    /// Probabilities of negative, neutral and positive labels.
    pub class_probs: [f64; 3],
    pub filler_vocab: usize,
    pub filler_per_doc: usize,
    pub stable_vocab: usize,
    pub stable_per_doc: usize,
    pub zipf_exponent: f64,
    /// Chance that a sentiment word comes from the document's own class.
    pub signal: f64,
    /// Instances per drift segment.
    pub period: usize,
    pub drift_vocab: usize,
    pub drift_per_doc: usize,
    pub burst_len: (usize, usize),
    /// Expected share of positions covered by a burst.
    pub burst_coverage: f64,
    pub burst_vocab: usize,
    pub burst_per_doc: usize,
}

impl SyntheticParams {
    pub fn drift(n: usize) -> Self {
        SyntheticParams {
            n,
            kind: SyntheticKind::Drift,
            class_probs: [0.3, 0.4, 0.3],
            filler_vocab: 400,
            filler_per_doc: 5,
            stable_vocab: 3000,
            stable_per_doc: 3,
            zipf_exponent: 1.0,
            signal: 0.6,
            period: 5000,
            drift_vocab: 250,
            drift_per_doc: 1,
            burst_len: (200, 500),
            burst_coverage: 0.5,
            burst_vocab: 20,
            burst_per_doc: 1,
        }
    }

    pub fn iid(n: usize) -> Self {
        SyntheticParams {
            kind: SyntheticKind::Iid,
            ..Self::drift(n)
        }
    }

    pub fn of_kind(kind: SyntheticKind, n: usize) -> Self {
        match kind {
            SyntheticKind::Drift => Self::drift(n),
            SyntheticKind::Iid => Self::iid(n),
        }
    }
}

const CLASS_TAG: [char; 3] = ['n', 'z', 'p'];

/// Picks the class whose vocabulary supplies a sentiment word.
fn word_class(rng: &mut ChaCha8Rng, own: usize, signal: f64) -> usize {
    if rng.gen::<f64>() < signal {
        own
    } else {
        rng.gen_range(0..3)
    }
}

/// Topic bursts as `(start, end)` ranges, in position order.
fn bursts(rng: &mut ChaCha8Rng, params: &SyntheticParams) -> Vec<(usize, usize)> {
    let (lo, hi) = params.burst_len;
    if params.burst_coverage <= 0.0 || hi == 0 {
        return Vec::new();
    }
    let mean_len = (lo + hi) as f64 / 2.0;
    let mean_gap = mean_len * (1.0 - params.burst_coverage) / params.burst_coverage;
    let mut out = Vec::new();
    let mut pos = 0usize;
    loop {
        pos += (rng.gen::<f64>() * 2.0 * mean_gap).round() as usize;
        if pos >= params.n {
            break;
        }
        let len = rng.gen_range(lo..=hi.max(lo));
        let end = (pos + len).min(params.n);
        out.push((pos, end));
        pos = end;
    }
    out
}

/// Generates a corpus with ids `0..n` and whitespace-separated texts.
pub fn generate(name: &str, params: &SyntheticParams, seed: u64) -> TimeOrderedCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drifting = params.kind == SyntheticKind::Drift;
    let class_dist = WeightedIndex::new(params.class_probs).expect("class probabilities must be positive");
    let zipf = WeightedIndex::new((1..=params.stable_vocab.max(1)).map(|r| (r as f64).powf(-params.zipf_exponent)))
        .expect("stable vocabulary weights");
    let topics = if drifting { bursts(&mut rng, params) } else { Vec::new() };
    let mut topic_iter = topics.iter().enumerate().peekable();

    let mut rows = Vec::with_capacity(params.n);
    let mut words: Vec<String> = Vec::new();
    for i in 0..params.n {
        let class = class_dist.sample(&mut rng);
        words.clear();
        for _ in 0..params.filler_per_doc {
            words.push(format!("f{}", rng.gen_range(0..params.filler_vocab.max(1))));
        }
        for _ in 0..params.stable_per_doc {
            let c = word_class(&mut rng, class, params.signal);
            words.push(format!("s{}{}", CLASS_TAG[c], zipf.sample(&mut rng)));
        }
        if drifting {
            let segment = i / params.period.max(1);
            for _ in 0..params.drift_per_doc {
                let c = word_class(&mut rng, class, params.signal);
                words.push(format!("d{segment}{}{}", CLASS_TAG[c], rng.gen_range(0..params.drift_vocab.max(1))));
            }
            while topic_iter.peek().is_some_and(|(_, &(_, end))| end <= i) {
                topic_iter.next();
            }
            if let Some(&(t, &(start, _))) = topic_iter.peek() {
                if start <= i {
                    for _ in 0..params.burst_per_doc {
                        let c = word_class(&mut rng, class, params.signal);
                        words.push(format!("t{t}{}{}", CLASS_TAG[c], rng.gen_range(0..params.burst_vocab.max(1))));
                    }
                }
            }
        }
        words.shuffle(&mut rng);
        rows.push((i.to_string(), Label::from_index(class), words.join(" ")));
    }
    TimeOrderedCorpus::from_rows(name, rows)
}
