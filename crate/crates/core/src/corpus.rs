//! Time-ordered labeled corpora and their chronological in-set/out-set partitioning.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while loading or validating a corpus.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: file is empty")]
    Empty { path: String },
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: duplicate id {id:?} (first seen on line {first_line})")]
    DuplicateId {
        path: String,
        line: usize,
        first_line: usize,
        id: String,
    },
    #[error("invalid label {0:?}")]
    InvalidLabel(String),
}

/// Ordinal sentiment label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Neutral,
    Positive,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Negative, Label::Neutral, Label::Positive];

    /// The ordinal value in {-1, 0, +1}.
    pub fn value(self) -> i8 {
        match self {
            Label::Negative => -1,
            Label::Neutral => 0,
            Label::Positive => 1,
        }
    }

    /// Dense index 0..3 in ordinal order.
    pub fn index(self) -> usize {
        (self.value() + 1) as usize
    }

    pub fn from_index(index: usize) -> Label {
        Label::ALL[index]
    }

    pub fn from_value(value: i64) -> Option<Label> {
        match value {
            -1 => Some(Label::Negative),
            0 => Some(Label::Neutral),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    /// Mirror image under class-order reversal (-1 <-> +1).
    pub fn reversed(self) -> Label {
        match self {
            Label::Negative => Label::Positive,
            Label::Neutral => Label::Neutral,
            Label::Positive => Label::Negative,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl FromStr for Label {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        match trimmed.to_ascii_lowercase().as_str() {
            "-1" | "negative" => Ok(Label::Negative),
            "0" | "+0" | "neutral" => Ok(Label::Neutral),
            "1" | "+1" | "positive" => Ok(Label::Positive),
            _ => Err(CorpusError::InvalidLabel(trimmed.to_string())),
        }
    }
}

/// One labeled post.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub external_id: String,
    pub position: usize,
    pub text: String,
    pub label: Label,
}

/// Labeled instances in chronological (file) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeOrderedCorpus {
    name: String,
    instances: Vec<Instance>,
}

impl TimeOrderedCorpus {
    /// Builds a corpus from `(id, label, text)` triples, assigning positions in order.
    pub fn from_rows<I, S, T>(name: impl Into<String>, rows: I) -> Self
    where
        I: IntoIterator<Item = (S, Label, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let instances = rows
            .into_iter()
            .enumerate()
            .map(|(position, (id, label, text))| Instance {
                external_id: id.into(),
                position,
                text: text.into(),
                label,
            })
            .collect();
        Self {
            name: name.into(),
            instances,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn label(&self, position: usize) -> Label {
        self.instances[position].label
    }

    pub fn labels(&self) -> Vec<Label> {
        self.instances.iter().map(|i| i.label).collect()
    }

    /// Labels of a contiguous index range.
    pub fn labels_in(&self, range: Range<usize>) -> Vec<Label> {
        self.instances[range].iter().map(|i| i.label).collect()
    }

    /// True when every numeric id is at least the previous numeric id.
    ///
    /// Ids that do not parse as integers are ignored.
    pub fn ids_non_decreasing(&self) -> bool {
        let mut last: Option<u128> = None;
        for inst in &self.instances {
            if let Ok(id) = inst.external_id.parse::<u128>() {
                if matches!(last, Some(prev) if id < prev) {
                    return false;
                }
                last = Some(id);
            }
        }
        true
    }
}

/// Loads a `id<TAB>label<TAB>text` file with a header row.
///
/// Positions follow file order. Labels may be integers or the words
/// negative/neutral/positive. The text column may be absent or empty.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<TimeOrderedCorpus, CorpusError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: shown.clone(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_corpus(&name, &raw, &shown)
}

/// Parses TSV content; `origin` is used in error messages.
pub fn parse_corpus(name: &str, content: &str, origin: &str) -> Result<TimeOrderedCorpus, CorpusError> {
    let malformed = |line: usize, reason: String| CorpusError::Malformed {
        path: origin.to_string(),
        line,
        reason,
    };
    let mut lines = content.lines().enumerate().map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)));

    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some(h) => break h,
            None => {
                return Err(CorpusError::Empty {
                    path: origin.to_string(),
                })
            }
        }
    };
    let columns: Vec<String> = header.1.split('\t').map(|c| c.trim().to_ascii_lowercase()).collect();
    if columns.len() < 2 || columns[0] != "id" || columns[1] != "label" {
        return Err(malformed(
            header.0,
            format!("expected header `id<TAB>label<TAB>text`, found {:?}", header.1),
        ));
    }

    let mut seen = std::collections::HashMap::new();
    let mut rows = Vec::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let id = fields.next().unwrap_or("").trim();
        let label = fields
            .next()
            .ok_or_else(|| malformed(line_no, "missing label column".into()))?;
        let text = fields.next().unwrap_or("");
        if id.is_empty() {
            return Err(malformed(line_no, "empty id".into()));
        }
        let label: Label = label
            .parse()
            .map_err(|e: CorpusError| malformed(line_no, e.to_string()))?;
        if let Some(&first_line) = seen.get(id) {
            return Err(CorpusError::DuplicateId {
                path: origin.to_string(),
                line: line_no,
                first_line,
                id: id.to_string(),
            });
        }
        seen.insert(id.to_string(), line_no);
        rows.push((id.to_string(), label, text.to_string()));
    }
    if rows.is_empty() {
        return Err(CorpusError::Empty {
            path: origin.to_string(),
        });
    }
    Ok(TimeOrderedCorpus::from_rows(name, rows))
}

/// Writes a corpus in the format accepted by [`load_corpus`].
pub fn write_corpus(corpus: &TimeOrderedCorpus, mut out: impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "id\tlabel\ttext")?;
    for inst in corpus.instances() {
        let text = inst.text.replace(['\t', '\n', '\r'], " ");
        writeln!(out, "{}\t{}\t{}", inst.external_id, inst.label, text)?;
    }
    Ok(())
}

/// An in-set (prefix of `k` blocks) and the out-set that immediately follows it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InOutPair {
    /// 1-based number of blocks in the in-set.
    pub inset_index: usize,
    pub in_range: Range<usize>,
    pub out_range: Range<usize>,
}

impl InOutPair {
    pub fn in_len(&self) -> usize {
        self.in_range.len()
    }

    pub fn out_len(&self) -> usize {
        self.out_range.len()
    }
}

/// Default block size: in-sets grow in multiples of this many instances.
pub const DEFAULT_BLOCK_SIZE: usize = 10_000;

/// Splits `n` chronologically ordered instances into growing in-sets and their out-sets.
///
/// Pair `k` (1-based) has in-set `[0, kW)` and out-set `[kW, min((k+1)W, n))`.
/// Candidates whose out-set would be empty are dropped. Panics if `block_size == 0`.
pub fn partition_len(n: usize, block_size: usize) -> Vec<InOutPair> {
    assert!(block_size >= 1, "block size must be positive");
    (1..=n / block_size)
        .map(|k| InOutPair {
            inset_index: k,
            in_range: 0..k * block_size,
            out_range: k * block_size..((k + 1) * block_size).min(n),
        })
        .filter(|p| !p.out_range.is_empty())
        .collect()
}

/// [`partition_len`] applied to a corpus.
pub fn partition(corpus: &TimeOrderedCorpus, block_size: usize) -> Vec<InOutPair> {
    partition_len(corpus.len(), block_size)
}

/// Checks positional invariants a corpus must satisfy (used by loaders of foreign data).
pub fn validate_positions(corpus: &TimeOrderedCorpus) -> bool {
    let ids: HashSet<&str> = corpus.instances.iter().map(|i| i.external_id.as_str()).collect();
    ids.len() == corpus.len() && corpus.instances.iter().enumerate().all(|(i, inst)| inst.position == i)
}
