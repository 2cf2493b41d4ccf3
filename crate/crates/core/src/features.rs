//! Tweet normalization, n-gram extraction, vocabulary pruning and Delta TF-IDF weighting.
//!
//! Normalization replaces URLs, user mentions and hashtags with placeholder
//! tokens, maps emoticons to two sentiment classes and squeezes letter runs.
//! Documents are then turned into unigram+bigram counts. Term weights are
//! computed per hyperplane from that plane's binary split of the training
//! documents.

use std::collections::HashMap;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, TimeOrderedCorpus};

pub const URL_TOKEN: &str = "__url__";
pub const USER_TOKEN: &str = "__user__";
pub const HASH_TOKEN: &str = "__hash__";
pub const POS_EMO_TOKEN: &str = "__pos_emo__";
pub const NEG_EMO_TOKEN: &str = "__neg_emo__";

const SPECIAL_TOKENS: [&str; 5] = [URL_TOKEN, USER_TOKEN, HASH_TOKEN, POS_EMO_TOKEN, NEG_EMO_TOKEN];

const POSITIVE_EMOTICONS: &[&str] = &[
    ":)", ":-)", ":D", ":-D", ";)", ";-)", ":]", "=)", "=]", ":P", ":-P", ":p", "xD", "XD", "<3",
    ":o)", "^_^", "^^", ":')", "(:", ":*", ":-*",
];
const NEGATIVE_EMOTICONS: &[&str] = &[
    ":(", ":-(", ":'(", ":[", "=(", ":/", ":-/", ":\\", "D:", ">:(", ":@", ":|", "</3", "):", ":S",
    ":-S",
];

/// Sentiment class of an emoticon token, if it is one.
///
/// Trailing repetitions of the final character are ignored, so `:)))` counts as `:)`.
pub fn emoticon_class(token: &str) -> Option<&'static str> {
    let lookup = |t: &str| {
        if POSITIVE_EMOTICONS.contains(&t) {
            Some(POS_EMO_TOKEN)
        } else if NEGATIVE_EMOTICONS.contains(&t) {
            Some(NEG_EMO_TOKEN)
        } else {
            None
        }
    };
    if let Some(class) = lookup(token) {
        return Some(class);
    }
    let last = token.chars().last()?;
    let squeezed = token.trim_end_matches(last);
    if squeezed.is_empty() {
        return None;
    }
    let mut candidate = squeezed.to_string();
    candidate.push(last);
    lookup(&candidate)
}

/// Word-level stemmer or lemmatizer applied after normalization.
pub trait Stemmer: Send + Sync {
    fn stem(&self, word: &str) -> String;
}

/// Leaves words unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoStemmer;

impl Stemmer for NoStemmer {
    fn stem(&self, word: &str) -> String {
        word.to_string()
    }
}

/// Normalizes a tweet into tokens with the default (identity) stemmer.
pub fn normalize(text: &str) -> Vec<String> {
    normalize_with(text, &NoStemmer)
}

pub fn normalize_with(text: &str, stemmer: &dyn Stemmer) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        if SPECIAL_TOKENS.contains(&raw) {
            out.push(raw.to_string());
            continue;
        }
        if let Some(class) = emoticon_class(raw) {
            out.push(class.to_string());
            continue;
        }
        let lower = raw.to_lowercase();
        if lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.") {
            out.push(URL_TOKEN.to_string());
        } else if let Some(handle) = lower.strip_prefix('@') {
            if handle.chars().next().is_some_and(|c| c.is_alphanumeric() || c == '_') {
                out.push(USER_TOKEN.to_string());
            } else {
                push_words(handle, stemmer, &mut out);
            }
        } else if let Some(tag) = lower.strip_prefix('#') {
            let mark = out.len();
            out.push(HASH_TOKEN.to_string());
            push_words(tag, stemmer, &mut out);
            if out.len() == mark + 1 {
                out.pop();
            }
        } else {
            push_words(&lower, stemmer, &mut out);
        }
    }
    out
}

/// Squeezes letter runs, drops apostrophes and splits on any other non-alphanumeric character.
fn push_words(lower: &str, stemmer: &dyn Stemmer, out: &mut Vec<String>) {
    let squeezed = squeeze_letters(lower);
    let mut word = String::new();
    for c in squeezed.chars() {
        if c.is_alphanumeric() {
            word.push(c);
        } else if c == '\'' || c == '\u{2019}' {
            continue;
        } else if !word.is_empty() {
            out.push(stemmer.stem(&word));
            word.clear();
        }
    }
    if !word.is_empty() {
        out.push(stemmer.stem(&word));
    }
}

/// Collapses runs of three or more identical letters to two.
fn squeeze_letters(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut prev: Option<char> = None;
    let mut run = 0;
    for c in s.chars() {
        if Some(c) == prev {
            run += 1;
        } else {
            prev = Some(c);
            run = 1;
        }
        if run <= 2 || !c.is_alphabetic() {
            out.push(c);
        }
    }
    out
}

/// Unigrams followed by `_`-joined n-grams up to `max_n` (1 or 2 in practice).
pub fn ngrams(tokens: &[String], max_n: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(tokens.len() * max_n.max(1));
    for n in 1..=max_n.max(1) {
        for window in tokens.windows(n) {
            out.push(window.join("_"));
        }
    }
    out
}

/// One of the two binary problems of the ordinal classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Plane {
    /// Negative vs. neutral-or-positive.
    NegVsRest,
    /// Negative-or-neutral vs. positive.
    NegNeutVsPos,
}

impl Plane {
    pub const BOTH: [Plane; 2] = [Plane::NegVsRest, Plane::NegNeutVsPos];

    pub fn index(self) -> usize {
        match self {
            Plane::NegVsRest => 0,
            Plane::NegNeutVsPos => 1,
        }
    }

    /// Whether `label` falls on the upper (positive, "P") side of this plane.
    pub fn is_upper(self, label: Label) -> bool {
        match self {
            Plane::NegVsRest => label != Label::Negative,
            Plane::NegNeutVsPos => label == Label::Positive,
        }
    }
}

/// Sparse vector with strictly increasing indices and no zero entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVector {
    /// Builds from unsorted pairs; duplicate indices are summed and zeros dropped.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_unstable_by_key(|p| p.0);
        let mut indices = Vec::with_capacity(pairs.len());
        let mut values: Vec<f64> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            if indices.last() == Some(&i) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(i);
                values.push(v);
            }
        }
        let mut out = Self { indices, values };
        out.drop_zeros();
        out
    }

    fn drop_zeros(&mut self) {
        if self.values.iter().all(|v| *v != 0.0) {
            return;
        }
        let (indices, values) = self
            .indices
            .iter()
            .zip(&self.values)
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (*i, *v))
            .unzip();
        self.indices = indices;
        self.values = values;
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn get(&self, index: u32) -> Option<f64> {
        self.indices.binary_search(&index).ok().map(|p| self.values[p])
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i as usize]).sum()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scales to unit Euclidean length; empty vectors stay empty.
    pub fn normalized(mut self) -> Self {
        let norm = self.norm();
        if norm > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= norm);
        }
        self
    }
}

/// Maps n-gram strings to dense ids for a whole corpus.
#[derive(Debug, Clone, Default)]
pub struct TermInterner {
    ids: HashMap<String, u32>,
    terms: Vec<String>,
}

impl TermInterner {
    pub fn intern(&mut self, term: &str) -> u32 {
        if let Some(&id) = self.ids.get(term) {
            return id;
        }
        let id = self.terms.len() as u32;
        self.terms.push(term.to_string());
        self.ids.insert(term.to_string(), id);
        id
    }

    pub fn get(&self, term: &str) -> Option<u32> {
        self.ids.get(term).copied()
    }

    pub fn term(&self, id: u32) -> &str {
        &self.terms[id as usize]
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Distinct term ids with their in-document counts, sorted by id.
pub type TermCounts = Vec<(u32, u32)>;

fn count_terms(mut ids: Vec<u32>) -> TermCounts {
    ids.sort_unstable();
    let mut out: TermCounts = Vec::with_capacity(ids.len());
    for id in ids {
        match out.last_mut() {
            Some((last, count)) if *last == id => *count += 1,
            _ => out.push((id, 1)),
        }
    }
    out
}

/// Every document of a corpus pre-tokenized into interned n-gram counts.
///
/// Training runs on many overlapping subsets of the same corpus; encoding once
/// keeps per-run vocabulary construction to integer counting.
#[derive(Debug, Clone)]
pub struct EncodedCorpus {
    interner: TermInterner,
    docs: Vec<TermCounts>,
    max_ngram: usize,
}

impl EncodedCorpus {
    pub fn new(corpus: &TimeOrderedCorpus, max_ngram: usize) -> Self {
        Self::with_stemmer(corpus, max_ngram, &NoStemmer)
    }

    pub fn with_stemmer(corpus: &TimeOrderedCorpus, max_ngram: usize, stemmer: &dyn Stemmer) -> Self {
        let grams: Vec<Vec<String>> = corpus
            .instances()
            .par_iter()
            .map(|inst| ngrams(&normalize_with(&inst.text, stemmer), max_ngram))
            .collect();
        let mut interner = TermInterner::default();
        let docs = grams
            .into_iter()
            .map(|g| count_terms(g.iter().map(|t| interner.intern(t)).collect()))
            .collect();
        Self {
            interner,
            docs,
            max_ngram,
        }
    }

    pub fn interner(&self) -> &TermInterner {
        &self.interner
    }

    pub fn doc(&self, position: usize) -> &TermCounts {
        &self.docs[position]
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn max_ngram(&self) -> usize {
        self.max_ngram
    }
}

/// Per-plane document frequencies on the two sides of the binary split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlaneStats {
    /// |P|: documents on the upper side.
    pub upper_docs: u32,
    /// |N|: documents on the lower side.
    pub lower_docs: u32,
    /// P_t per term.
    pub upper_df: Vec<u32>,
    /// N_t per term.
    pub lower_df: Vec<u32>,
}

impl PlaneStats {
    /// `log2(|P|(N_t+0.5) / (|N|(P_t+0.5)))`, or 0 when one side has no documents.
    pub fn idf_delta(&self, term: usize) -> f64 {
        if self.upper_docs == 0 || self.lower_docs == 0 {
            return 0.0;
        }
        let num = f64::from(self.upper_docs) * (f64::from(self.lower_df[term]) + 0.5);
        let den = f64::from(self.lower_docs) * (f64::from(self.upper_df[term]) + 0.5);
        (num / den).log2()
    }
}

/// Pruned n-gram vocabulary with document frequencies for both planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    terms: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    doc_freq: Vec<u32>,
    planes: [PlaneStats; 2],
    max_ngram: usize,
}

pub const DEFAULT_MIN_DF: u32 = 5;

/// Builds a vocabulary from token sequences and their ordinal labels.
pub fn build_vocabulary(docs: &[Vec<String>], labels: &[Label], min_df: u32, max_ngram: usize) -> Vocabulary {
    assert_eq!(docs.len(), labels.len(), "one label per document");
    let mut interner = TermInterner::default();
    let encoded: Vec<TermCounts> = docs
        .iter()
        .map(|d| count_terms(ngrams(d, max_ngram).iter().map(|t| interner.intern(t)).collect()))
        .collect();
    let refs: Vec<&TermCounts> = encoded.iter().collect();
    Vocabulary::from_counts(&interner, &refs, labels, min_df, max_ngram).0
}

/// Dense map from corpus-level term ids to vocabulary indices.
#[derive(Debug, Clone)]
pub struct TermMap {
    local: Vec<u32>,
}

impl TermMap {
    const ABSENT: u32 = u32::MAX;

    pub fn get(&self, global: u32) -> Option<u32> {
        match self.local.get(global as usize) {
            Some(&l) if l != Self::ABSENT => Some(l),
            _ => None,
        }
    }
}

impl Vocabulary {
    /// Counts document frequencies over `docs` and keeps terms with `df >= min_df`.
    ///
    /// Indices follow lexicographic term order, so the result does not depend on
    /// document order.
    pub fn from_counts(
        interner: &TermInterner,
        docs: &[&TermCounts],
        labels: &[Label],
        min_df: u32,
        max_ngram: usize,
    ) -> (Vocabulary, TermMap) {
        let universe = interner.len();
        let mut df = vec![0u32; universe];
        for doc in docs {
            for &(id, _) in doc.iter() {
                df[id as usize] += 1;
            }
        }
        let mut kept: Vec<u32> = (0..universe as u32).filter(|&id| df[id as usize] >= min_df.max(1)).collect();
        kept.sort_unstable_by(|a, b| interner.term(*a).cmp(interner.term(*b)));

        let mut local = vec![TermMap::ABSENT; universe];
        for (i, &id) in kept.iter().enumerate() {
            local[id as usize] = i as u32;
        }
        let mut planes: [PlaneStats; 2] = Default::default();
        for plane in Plane::BOTH {
            let stats = &mut planes[plane.index()];
            stats.upper_df = vec![0; kept.len()];
            stats.lower_df = vec![0; kept.len()];
            for (doc, &label) in docs.iter().zip(labels) {
                let upper = plane.is_upper(label);
                if upper {
                    stats.upper_docs += 1;
                } else {
                    stats.lower_docs += 1;
                }
                for &(id, _) in doc.iter() {
                    let l = local[id as usize];
                    if l != TermMap::ABSENT {
                        if upper {
                            stats.upper_df[l as usize] += 1;
                        } else {
                            stats.lower_df[l as usize] += 1;
                        }
                    }
                }
            }
        }
        let terms: Vec<String> = kept.iter().map(|&id| interner.term(id).to_string()).collect();
        let doc_freq = kept.iter().map(|&id| df[id as usize]).collect();
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        (
            Vocabulary {
                terms,
                index,
                doc_freq,
                planes,
                max_ngram,
            },
            TermMap { local },
        )
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn index_of(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn doc_freq(&self, index: usize) -> u32 {
        self.doc_freq[index]
    }

    pub fn plane(&self, plane: Plane) -> &PlaneStats {
        &self.planes[plane.index()]
    }

    pub fn max_ngram(&self) -> usize {
        self.max_ngram
    }

    /// Restores the term index after deserialization.
    pub(crate) fn rebuild_index(&mut self) {
        self.index = self.terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    }

    /// Plane-specific weight multipliers, one per term.
    pub fn idf_deltas(&self, plane: Plane) -> Vec<f64> {
        let stats = self.plane(plane);
        (0..self.len()).map(|t| stats.idf_delta(t)).collect()
    }

    /// Writes `term, index, df, P_t, N_t` for both planes as TSV.
    pub fn write_tsv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "term\tindex\tdf\tp1\tn1\tp2\tn2")?;
        let (a, b) = (&self.planes[0], &self.planes[1]);
        for (i, term) in self.terms.iter().enumerate() {
            writeln!(
                out,
                "{term}\t{i}\t{}\t{}\t{}\t{}\t{}",
                self.doc_freq[i], a.upper_df[i], a.lower_df[i], b.upper_df[i], b.lower_df[i]
            )?;
        }
        Ok(())
    }
}

/// Delta TF-IDF vector of a tokenized document for one plane.
pub fn delta_tfidf(doc: &[String], vocab: &Vocabulary, plane: Plane) -> SparseVector {
    let stats = vocab.plane(plane);
    let pairs = ngrams(doc, vocab.max_ngram())
        .iter()
        .filter_map(|g| vocab.index_of(g))
        .map(|i| (i, stats.idf_delta(i as usize)))
        .collect();
    SparseVector::from_pairs(pairs)
}

/// Delta TF-IDF vector of an encoded document given precomputed per-term multipliers.
pub fn delta_tfidf_encoded(doc: &TermCounts, map: &TermMap, idf_deltas: &[f64]) -> SparseVector {
    let pairs = doc
        .iter()
        .filter_map(|&(id, count)| map.get(id).map(|l| (l, f64::from(count) * idf_deltas[l as usize])))
        .collect();
    SparseVector::from_pairs(pairs)
}
