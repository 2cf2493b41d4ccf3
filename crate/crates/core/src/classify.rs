//! Ordinal three-class classification with two linear separators and a bin lookup.
//!
//! One hinge-loss linear model separates negatives from the rest, a second one
//! separates positives from the rest. The signed distances of every training
//! example to both planes are cut into an equal-frequency grid and each grid
//! cell predicts the majority class of the training examples that fell into it.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, TimeOrderedCorpus};
use crate::features::{
    self, delta_tfidf_encoded, EncodedCorpus, Plane, SparseVector, TermCounts, TermMap, Vocabulary,
};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Malformed { path: String, line: usize, reason: String },
    #[error("{path}: no prediction for position {position}")]
    MissingPosition { path: String, position: usize },
    #[error("{path}:{line}: position {position} is outside the corpus (length {len})")]
    PositionOutOfRange {
        path: String,
        line: usize,
        position: usize,
        len: usize,
    },
    #[error("{path}:{line}: duplicate prediction for position {position}")]
    DuplicatePosition { path: String, line: usize, position: usize },
    #[error("model format: {0}")]
    Format(String),
}

/// Classifier hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    /// L2 regularization strength.
    pub lambda: f64,
    pub epochs: usize,
    pub bins_per_axis: usize,
    pub min_df: u32,
    pub max_ngram: usize,
    /// Scale feature vectors to unit length before the linear models see them.
    pub unit_normalize: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            epochs: 10,
            bins_per_axis: 7,
            min_df: features::DEFAULT_MIN_DF,
            max_ngram: 2,
            unit_normalize: true,
        }
    }
}

/// A hyperplane `w.x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPlane {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearPlane {
    pub fn distance(&self, x: &SparseVector) -> f64 {
        x.dot(&self.weights) + self.bias
    }
}

/// Stochastic subgradient descent on the L2-regularized hinge loss.
///
/// Step size is `1/(lambda t)`; the bias is treated as a weight on a constant
/// feature. `targets` are +1 / -1.
pub fn train_hinge(xs: &[SparseVector], targets: &[f64], dim: usize, lambda: f64, epochs: usize, seed: u64) -> LinearPlane {
    assert_eq!(xs.len(), targets.len());
    let mut w = vec![0.0f64; dim + 1];
    let bias = dim;
    let mut scale = 1.0f64;
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0u64;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let x = &xs[i];
            let y = targets[i];
            let margin = y * scale * (x.dot(&w) + w[bias]);
            let shrink = 1.0 - eta * lambda;
            if shrink <= 0.0 {
                w.iter_mut().for_each(|v| *v = 0.0);
                scale = 1.0;
            } else {
                scale *= shrink;
            }
            if margin < 1.0 {
                let step = eta * y / scale;
                for (j, v) in x.iter() {
                    w[j as usize] += step * v;
                }
                w[bias] += step;
            }
            if scale < 1e-9 {
                w.iter_mut().for_each(|v| *v *= scale);
                scale = 1.0;
            }
        }
    }
    let bias_value = w.pop().unwrap_or(0.0) * scale;
    w.iter_mut().for_each(|v| *v *= scale);
    LinearPlane {
        weights: w,
        bias: bias_value,
    }
}

/// Equal-frequency grid over the two signed distances with per-cell class counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    pub axis1_cuts: Vec<f64>,
    pub axis2_cuts: Vec<f64>,
    /// Row-major over (axis1 bin, axis2 bin); counts of (-1, 0, +1).
    pub cells: Vec<[u32; 3]>,
    pub majority: Vec<Option<Label>>,
}

fn equal_frequency_cuts(values: &mut [f64], bins: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    let mut cuts: Vec<f64> = Vec::new();
    if m == 0 {
        return cuts;
    }
    for i in 1..bins {
        let c = values[(i * m / bins).min(m - 1)];
        if cuts.last().is_none_or(|last| c > *last) && c > values[0] {
            cuts.push(c);
        }
    }
    cuts
}

fn bin_of(cuts: &[f64], d: f64) -> usize {
    cuts.partition_point(|c| *c <= d)
}

/// Argmax of `hist`; ties go to neutral, then to the globally more frequent class,
/// then to the lower class.
pub fn majority_with_ties(hist: &[u32; 3], global: &[u32; 3]) -> Option<Label> {
    let best = *hist.iter().max()?;
    if best == 0 {
        return None;
    }
    let tied: Vec<usize> = (0..3).filter(|&c| hist[c] == best).collect();
    if tied.len() == 1 {
        return Some(Label::from_index(tied[0]));
    }
    if tied.contains(&Label::Neutral.index()) {
        return Some(Label::Neutral);
    }
    let winner = tied.into_iter().max_by(|a, b| global[*a].cmp(&global[*b]).then(b.cmp(a)))?;
    Some(Label::from_index(winner))
}

/// Ordinal reading of the two planes, used for cells without training examples.
pub fn fallback_label(d1: f64, d2: f64) -> Label {
    if d1 < 0.0 {
        Label::Negative
    } else if d2 > 0.0 {
        Label::Positive
    } else {
        Label::Neutral
    }
}

impl BinGrid {
    pub fn build(points: &[(f64, f64, Label)], bins_per_axis: usize, global: &[u32; 3]) -> Self {
        let bins = bins_per_axis.max(1);
        let mut a1: Vec<f64> = points.iter().map(|p| p.0).collect();
        let mut a2: Vec<f64> = points.iter().map(|p| p.1).collect();
        let axis1_cuts = equal_frequency_cuts(&mut a1, bins);
        let axis2_cuts = equal_frequency_cuts(&mut a2, bins);
        let mut grid = BinGrid {
            cells: vec![[0; 3]; (axis1_cuts.len() + 1) * (axis2_cuts.len() + 1)],
            majority: Vec::new(),
            axis1_cuts,
            axis2_cuts,
        };
        for &(d1, d2, label) in points {
            let cell = grid.cell_of(d1, d2);
            grid.cells[cell][label.index()] += 1;
        }
        grid.majority = grid.cells.iter().map(|h| majority_with_ties(h, global)).collect();
        grid
    }

    pub fn cell_of(&self, d1: f64, d2: f64) -> usize {
        bin_of(&self.axis1_cuts, d1) * (self.axis2_cuts.len() + 1) + bin_of(&self.axis2_cuts, d2)
    }

    pub fn predict(&self, d1: f64, d2: f64) -> Label {
        self.majority[self.cell_of(d1, d2)].unwrap_or_else(|| fallback_label(d1, d2))
    }
}

const MODEL_FORMAT_VERSION: u32 = 1;

/// The trained ordinal classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPlaneModel {
    format_version: u32,
    pub vocabulary: Vocabulary,
    pub plane_neg_vs_rest: LinearPlane,
    pub plane_negneut_vs_pos: LinearPlane,
    pub grid: BinGrid,
    pub majority_label: Label,
    /// Set when training data cannot support the planes (single class or no features).
    pub constant: Option<Label>,
    pub unit_normalize: bool,
    #[serde(skip)]
    idf: [Vec<f64>; 2],
}

fn class_counts(labels: impl IntoIterator<Item = Label>) -> [u32; 3] {
    let mut counts = [0u32; 3];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}

impl TwoPlaneModel {
    fn plane(&self, plane: Plane) -> &LinearPlane {
        match plane {
            Plane::NegVsRest => &self.plane_neg_vs_rest,
            Plane::NegNeutVsPos => &self.plane_negneut_vs_pos,
        }
    }

    fn finish(&mut self) {
        self.vocabulary.rebuild_index();
        self.idf = Plane::BOTH.map(|p| self.vocabulary.idf_deltas(p));
    }

    fn constant_model(vocabulary: Vocabulary, label: Label, unit_normalize: bool) -> Self {
        let empty = LinearPlane {
            weights: vec![0.0; vocabulary.len()],
            bias: 0.0,
        };
        let mut m = TwoPlaneModel {
            format_version: MODEL_FORMAT_VERSION,
            vocabulary,
            plane_neg_vs_rest: empty.clone(),
            plane_negneut_vs_pos: empty,
            grid: BinGrid::build(&[], 1, &[0; 3]),
            majority_label: label,
            constant: Some(label),
            unit_normalize,
            idf: Default::default(),
        };
        m.finish();
        m
    }

    fn plane_vector(&self, doc: &TermCounts, map: &TermMap, plane: Plane) -> SparseVector {
        let v = delta_tfidf_encoded(doc, map, &self.idf[plane.index()]);
        if self.unit_normalize {
            v.normalized()
        } else {
            v
        }
    }

    fn text_vector(&self, grams: &[String], plane: Plane) -> SparseVector {
        let idf = &self.idf[plane.index()];
        let pairs = grams
            .iter()
            .filter_map(|g| self.vocabulary.index_of(g))
            .map(|i| (i, idf[i as usize]))
            .collect();
        let v = SparseVector::from_pairs(pairs);
        if self.unit_normalize {
            v.normalized()
        } else {
            v
        }
    }

    /// Signed distances of a text to both planes.
    pub fn distances(&self, text: &str) -> (f64, f64) {
        let grams = features::ngrams(&features::normalize(text), self.vocabulary.max_ngram());
        let [d1, d2] = Plane::BOTH.map(|p| self.plane(p).distance(&self.text_vector(&grams, p)));
        (d1, d2)
    }

    pub fn predict(&self, text: &str) -> Label {
        if let Some(label) = self.constant {
            return label;
        }
        let (d1, d2) = self.distances(text);
        self.grid.predict(d1, d2)
    }

    fn predict_encoded(&self, doc: &TermCounts, map: &TermMap) -> Label {
        if let Some(label) = self.constant {
            return label;
        }
        let [d1, d2] = Plane::BOTH.map(|p| self.plane(p).distance(&self.plane_vector(doc, map, p)));
        self.grid.predict(d1, d2)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ClassifyError> {
        let mut m: TwoPlaneModel = serde_json::from_str(s).map_err(|e| ClassifyError::Format(e.to_string()))?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(ClassifyError::Format(format!(
                "unsupported model version {} (expected {MODEL_FORMAT_VERSION})",
                m.format_version
            )));
        }
        m.finish();
        Ok(m)
    }
}

/// Trains on the given positions of an encoded corpus.
///
/// Returns the model with the corpus-to-vocabulary term map needed to score
/// other documents of the same encoded corpus.
pub fn train_encoded(
    encoded: &EncodedCorpus,
    labels: &[Label],
    positions: &[usize],
    params: &TrainParams,
    seed: u64,
) -> (TwoPlaneModel, TermMap) {
    let docs: Vec<&TermCounts> = positions.iter().map(|&p| encoded.doc(p)).collect();
    let train_labels: Vec<Label> = positions.iter().map(|&p| labels[p]).collect();
    let (vocabulary, map) = Vocabulary::from_counts(
        encoded.interner(),
        &docs,
        &train_labels,
        params.min_df,
        encoded.max_ngram(),
    );
    let global = class_counts(train_labels.iter().copied());
    let majority_label = majority_with_ties(&global, &global).unwrap_or(Label::Neutral);
    let distinct = global.iter().filter(|&&c| c > 0).count();
    if distinct < 2 || vocabulary.is_empty() {
        return (
            TwoPlaneModel::constant_model(vocabulary, majority_label, params.unit_normalize),
            map,
        );
    }

    let mut model = TwoPlaneModel {
        format_version: MODEL_FORMAT_VERSION,
        plane_neg_vs_rest: LinearPlane { weights: Vec::new(), bias: 0.0 },
        plane_negneut_vs_pos: LinearPlane { weights: Vec::new(), bias: 0.0 },
        grid: BinGrid::build(&[], 1, &global),
        majority_label,
        constant: None,
        unit_normalize: params.unit_normalize,
        idf: Plane::BOTH.map(|p| vocabulary.idf_deltas(p)),
        vocabulary,
    };
    let dim = model.vocabulary.len();
    let fit_plane = |plane: Plane| {
        let xs: Vec<SparseVector> = docs.iter().map(|d| model.plane_vector(d, &map, plane)).collect();
        let ys: Vec<f64> = train_labels
            .iter()
            .map(|&l| if plane.is_upper(l) { 1.0 } else { -1.0 })
            .collect();
        let plane_seed = derive_seed(seed, &[plane.index() as u64]);
        let fitted = train_hinge(&xs, &ys, dim, params.lambda, params.epochs, plane_seed);
        let distances: Vec<f64> = xs.iter().map(|x| fitted.distance(x)).collect();
        (fitted, distances)
    };
    let ((p1, d1), (p2, d2)) = rayon::join(|| fit_plane(Plane::NegVsRest), || fit_plane(Plane::NegNeutVsPos));
    let points: Vec<(f64, f64, Label)> = d1
        .into_iter()
        .zip(d2)
        .zip(&train_labels)
        .map(|((a, b), &l)| (a, b, l))
        .collect();
    model.grid = BinGrid::build(&points, params.bins_per_axis, &global);
    model.plane_neg_vs_rest = p1;
    model.plane_negneut_vs_pos = p2;
    (model, map)
}

/// Trains from raw texts.
pub fn train(texts: &[&str], labels: &[Label], params: &TrainParams, seed: u64) -> TwoPlaneModel {
    assert_eq!(texts.len(), labels.len(), "one label per text");
    let corpus = TimeOrderedCorpus::from_rows(
        "train",
        texts.iter().zip(labels).enumerate().map(|(i, (t, l))| (i.to_string(), *l, *t)),
    );
    let encoded = EncodedCorpus::new(&corpus, params.max_ngram);
    let positions: Vec<usize> = (0..texts.len()).collect();
    train_encoded(&encoded, labels, &positions, params, seed).0
}

/// Something that labels corpus positions.
pub trait Predictor: Send + Sync {
    fn predict_positions(&self, positions: &[usize]) -> Vec<Label>;
}

/// Fits a predictor on a subset of corpus positions.
pub trait Learner: Send + Sync {
    fn fit(&self, train: &[usize], seed: u64) -> Box<dyn Predictor + '_>;
}

/// The two-plane classifier bound to one corpus.
pub struct TwoPlaneLearner {
    encoded: EncodedCorpus,
    labels: Vec<Label>,
    params: TrainParams,
}

impl TwoPlaneLearner {
    pub fn new(corpus: &TimeOrderedCorpus, params: TrainParams) -> Self {
        Self {
            encoded: EncodedCorpus::new(corpus, params.max_ngram),
            labels: corpus.labels(),
            params,
        }
    }
}

struct BoundModel<'a> {
    model: TwoPlaneModel,
    map: TermMap,
    encoded: &'a EncodedCorpus,
}

impl Predictor for BoundModel<'_> {
    fn predict_positions(&self, positions: &[usize]) -> Vec<Label> {
        positions
            .iter()
            .map(|&p| self.model.predict_encoded(self.encoded.doc(p), &self.map))
            .collect()
    }
}

impl Learner for TwoPlaneLearner {
    fn fit(&self, train: &[usize], seed: u64) -> Box<dyn Predictor + '_> {
        let (model, map) = train_encoded(&self.encoded, &self.labels, train, &self.params, seed);
        Box::new(BoundModel {
            model,
            map,
            encoded: &self.encoded,
        })
    }
}

/// Always answers with one label.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor(pub Label);

impl Predictor for ConstantPredictor {
    fn predict_positions(&self, positions: &[usize]) -> Vec<Label> {
        vec![self.0; positions.len()]
    }
}

/// Baseline that predicts the majority class of its training positions.
pub struct MajorityLearner {
    labels: Vec<Label>,
}

impl MajorityLearner {
    pub fn new(corpus: &TimeOrderedCorpus) -> Self {
        Self { labels: corpus.labels() }
    }
}

impl Learner for MajorityLearner {
    fn fit(&self, train: &[usize], _seed: u64) -> Box<dyn Predictor + '_> {
        let counts = class_counts(train.iter().map(|&p| self.labels[p]));
        Box::new(ConstantPredictor(
            majority_with_ties(&counts, &counts).unwrap_or(Label::Neutral),
        ))
    }
}

/// Predictions produced elsewhere, one label per corpus position.
///
/// Acts as a learner that ignores its training set, so third-party
/// classifiers can be pushed through the same estimation harness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalPredictions {
    labels: Vec<Label>,
}

impl ExternalPredictions {
    pub fn from_labels(labels: Vec<Label>) -> Self {
        Self { labels }
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    /// Parses `position,label` rows covering positions `0..corpus_len`.
    pub fn parse(content: &str, corpus_len: usize, origin: &str) -> Result<Self, ClassifyError> {
        let malformed = |line: usize, reason: String| ClassifyError::Malformed {
            path: origin.to_string(),
            line,
            reason,
        };
        let mut slots: Vec<Option<Label>> = vec![None; corpus_len];
        let mut lines = content.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
        match lines.next() {
            Some((_, header)) if header.trim().to_ascii_lowercase().replace(' ', "") == "position,label" => {}
            Some((n, header)) => return Err(malformed(n, format!("expected header `position,label`, found {header:?}"))),
            None => return Err(malformed(1, "empty file".into())),
        }
        for (line, row) in lines {
            if row.trim().is_empty() {
                continue;
            }
            let (pos, label) = row
                .split_once(',')
                .ok_or_else(|| malformed(line, "expected two comma-separated fields".into()))?;
            let position: usize = pos
                .trim()
                .parse()
                .map_err(|_| malformed(line, format!("bad position {:?}", pos.trim())))?;
            let label: Label = label.parse().map_err(|e: crate::corpus::CorpusError| malformed(line, e.to_string()))?;
            let slot = slots.get_mut(position).ok_or(ClassifyError::PositionOutOfRange {
                path: origin.to_string(),
                line,
                position,
                len: corpus_len,
            })?;
            if slot.is_some() {
                return Err(ClassifyError::DuplicatePosition {
                    path: origin.to_string(),
                    line,
                    position,
                });
            }
            *slot = Some(label);
        }
        let labels = slots
            .into_iter()
            .enumerate()
            .map(|(position, l)| {
                l.ok_or(ClassifyError::MissingPosition {
                    path: origin.to_string(),
                    position,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { labels })
    }
}

/// Loads external predictions aligned to a corpus of `corpus_len` instances.
pub fn predict_from_file(path: impl AsRef<Path>, corpus_len: usize) -> Result<ExternalPredictions, ClassifyError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let content = fs::read_to_string(path).map_err(|source| ClassifyError::Io {
        path: shown.clone(),
        source,
    })?;
    ExternalPredictions::parse(&content, corpus_len, &shown)
}

impl Predictor for ExternalPredictions {
    fn predict_positions(&self, positions: &[usize]) -> Vec<Label> {
        positions.iter().map(|&p| self.labels[p]).collect()
    }
}

impl Learner for ExternalPredictions {
    fn fit(&self, _train: &[usize], _seed: u64) -> Box<dyn Predictor + '_> {
        Box::new(self.clone())
    }
}
