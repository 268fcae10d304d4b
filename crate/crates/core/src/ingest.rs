//! LIBSVM text ingestion and agent partitioning.
//!
//! Grammar, one sample per non-empty line:
//!
//! ```text
//! <label> <idx>:<val> <idx>:<val> ...   # optional comment
//! ```
//!
//! Indices are 1-based and strictly increasing on disk; they are stored
//! 0-based.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::problem::LogisticProblem;

/// Sparse feature vector with strictly increasing 0-based indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseRow {
    pub fn new(indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                got: values.len(),
            });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("sparse indices must be strictly increasing".into()));
        }
        Ok(SparseRow { indices, values })
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&k, v)| v * x[k as usize])
            .sum()
    }

    /// `out += alpha * self`.
    pub fn axpy(&self, alpha: f64, out: &mut [f64]) {
        for (&k, v) in self.indices.iter().zip(&self.values) {
            out[k as usize] += alpha * v;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    NonNumeric(String),
    NonIncreasingIndex { previous: usize, index: usize },
    DuplicateIndex(usize),
    IndexBelowOne,
    MissingColon(String),
    NonFinite(String),
    Empty,
    Io(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::NonNumeric(t) => write!(f, "non-numeric token `{t}`"),
            ParseErrorKind::NonIncreasingIndex { previous, index } => {
                write!(f, "index {index} does not increase past {previous}")
            }
            ParseErrorKind::DuplicateIndex(i) => write!(f, "duplicate index {i}"),
            ParseErrorKind::IndexBelowOne => write!(f, "feature index must be >= 1"),
            ParseErrorKind::MissingColon(t) => write!(f, "expected `<idx>:<val>`, got `{t}`"),
            ParseErrorKind::NonFinite(t) => write!(f, "non-finite value `{t}`"),
            ParseErrorKind::Empty => write!(f, "no samples"),
            ParseErrorKind::Io(e) => write!(f, "read failure: {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

/// Samples as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub rows: Vec<SparseRow>,
    pub labels: Vec<f64>,
    pub dim: usize,
}

fn parse_number<T: FromStr>(token: &str, line: usize, column: usize) -> std::result::Result<T, ParseError> {
    token.parse::<T>().map_err(|_| ParseError {
        line,
        column,
        kind: ParseErrorKind::NonNumeric(token.to_string()),
    })
}

fn finite(v: f64, token: &str, line: usize, column: usize) -> std::result::Result<f64, ParseError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ParseError {
            line,
            column,
            kind: ParseErrorKind::NonFinite(token.to_string()),
        })
    }
}

/// Tokens of a line with their 1-based byte columns.
fn tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    let base = line.as_ptr() as usize;
    line.split_ascii_whitespace()
        .map(move |t| (t.as_ptr() as usize - base + 1, t))
}

fn parse_line(content: &str, lineno: usize) -> std::result::Result<(f64, SparseRow), ParseError> {
    let mut toks = tokens(content);
    let (col, label_tok) = toks.next().expect("caller skips blank lines");
    let label = finite(parse_number::<f64>(label_tok, lineno, col)?, label_tok, lineno, col)?;
    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut previous = 0usize;
    for (col, tok) in toks {
        let (idx_tok, val_tok) = tok.split_once(':').ok_or_else(|| ParseError {
            line: lineno,
            column: col,
            kind: ParseErrorKind::MissingColon(tok.to_string()),
        })?;
        let idx: usize = parse_number(idx_tok, lineno, col)?;
        let val_col = col + idx_tok.len() + 1;
        let val = finite(parse_number::<f64>(val_tok, lineno, val_col)?, val_tok, lineno, val_col)?;
        if idx < 1 {
            return Err(ParseError {
                line: lineno,
                column: col,
                kind: ParseErrorKind::IndexBelowOne,
            });
        }
        if idx == previous {
            return Err(ParseError {
                line: lineno,
                column: col,
                kind: ParseErrorKind::DuplicateIndex(idx),
            });
        }
        if idx < previous {
            return Err(ParseError {
                line: lineno,
                column: col,
                kind: ParseErrorKind::NonIncreasingIndex {
                    previous,
                    index: idx,
                },
            });
        }
        if idx > u32::MAX as usize {
            return Err(ParseError {
                line: lineno,
                column: col,
                kind: ParseErrorKind::NonNumeric(idx_tok.to_string()),
            });
        }
        previous = idx;
        indices.push((idx - 1) as u32);
        values.push(val);
    }
    Ok((label, SparseRow { indices, values }))
}

/// Parses LIBSVM text. `dim` is the larger of `declared_dim` and the highest
/// index seen.
pub fn parse_libsvm(reader: impl BufRead, declared_dim: Option<usize>) -> std::result::Result<RawDataset, ParseError> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut dim = declared_dim.unwrap_or(0);
    let mut last_line = 0;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        last_line = lineno;
        let line = line.map_err(|e| ParseError {
            line: lineno,
            column: 1,
            kind: ParseErrorKind::Io(e.to_string()),
        })?;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        if content.trim().is_empty() {
            continue;
        }
        let (label, row) = parse_line(content, lineno)?;
        if let Some(&k) = row.indices.last() {
            dim = dim.max(k as usize + 1);
        }
        labels.push(label);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ParseError {
            line: last_line.max(1),
            column: 1,
            kind: ParseErrorKind::Empty,
        });
    }
    Ok(RawDataset { rows, labels, dim })
}

pub fn read_libsvm_file(path: &Path, declared_dim: Option<usize>) -> Result<RawDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_libsvm(std::io::BufReader::new(file), declared_dim).map_err(Error::from)
}

/// Serializes back to LIBSVM text with shortest round-trip decimals.
pub fn write_libsvm(raw: &RawDataset) -> String {
    let mut out = String::new();
    for (label, row) in raw.labels.iter().zip(&raw.rows) {
        let _ = write!(out, "{label}");
        for (&k, v) in row.indices.iter().zip(&row.values) {
            let _ = write!(out, " {}:{v}", k as u64 + 1);
        }
        out.push('\n');
    }
    out
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Keeps the first `max` samples.
    pub fn truncate(&mut self, max: usize) {
        self.rows.truncate(max);
        self.labels.truncate(max);
    }

    /// Scales every row to unit Euclidean norm (zero rows are left alone).
    pub fn normalize_rows(&mut self) {
        for row in &mut self.rows {
            let norm = row.norm_sq().sqrt();
            if norm > 0.0 {
                row.values.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
}

/// How raw labels were mapped onto `{-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMapping {
    pub positive: f64,
    pub negative: f64,
}

/// Maps a two-valued label set onto `{-1, +1}`.
///
/// `{-1, +1}` is kept, `{0, 1}` sends 0 to -1, `{1, 2}` sends 1 to +1 and 2 to
/// -1. Any other pair sends the smaller value to -1.
pub fn to_binary_labels(raw: &RawDataset) -> Result<(RawDataset, LabelMapping)> {
    let mut distinct: Vec<f64> = Vec::new();
    for &l in &raw.labels {
        if !distinct.contains(&l) {
            distinct.push(l);
            if distinct.len() > 2 {
                return Err(Error::InvalidArgument(format!(
                    "more than two distinct labels: {distinct:?}"
                )));
            }
        }
    }
    distinct.sort_by(f64::total_cmp);
    let mapping = match distinct.as_slice() {
        [a, b] if *a == 1.0 && *b == 2.0 => LabelMapping {
            positive: 1.0,
            negative: 2.0,
        },
        [a, b] => LabelMapping {
            positive: *b,
            negative: *a,
        },
        [single] if *single == 1.0 || *single == -1.0 => LabelMapping {
            positive: 1.0,
            negative: -1.0,
        },
        _ => {
            return Err(Error::InvalidArgument(format!(
                "need exactly two distinct labels, found {distinct:?}"
            )))
        }
    };
    let labels = raw
        .labels
        .iter()
        .map(|&l| if l == mapping.positive { 1.0 } else { -1.0 })
        .collect();
    log::info!(
        "label mapping: {} -> +1, {} -> -1",
        mapping.positive,
        mapping.negative
    );
    Ok((
        RawDataset {
            rows: raw.rows.clone(),
            labels,
            dim: raw.dim,
        },
        mapping,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionScheme {
    Contiguous,
    RoundRobin,
    Shuffled { seed: u64 },
}

impl FromStr for PartitionScheme {
    type Err = Error;

    /// `contiguous`, `round_robin`, `shuffled` (seed 0) or `shuffled:<seed>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contiguous" => Ok(PartitionScheme::Contiguous),
            "round_robin" | "round-robin" => Ok(PartitionScheme::RoundRobin),
            "shuffled" => Ok(PartitionScheme::Shuffled { seed: 0 }),
            _ => match s.strip_prefix("shuffled:") {
                Some(seed) => seed
                    .parse()
                    .map(|seed| PartitionScheme::Shuffled { seed })
                    .map_err(|e| Error::InvalidArgument(format!("shuffle seed: {e}"))),
                None => Err(Error::InvalidArgument(format!("unknown partition scheme `{s}`"))),
            },
        }
    }
}

/// Sample indices owned by each agent; sizes differ by at most one.
pub fn partition(samples: usize, agents: usize, scheme: PartitionScheme) -> Result<Vec<Vec<usize>>> {
    if agents == 0 {
        return Err(Error::InvalidArgument("need at least one agent".into()));
    }
    if agents > samples {
        return Err(Error::InvalidArgument(format!(
            "{agents} agents but only {samples} samples"
        )));
    }
    let blocks = |order: Vec<usize>| {
        let base = samples / agents;
        let extra = samples % agents;
        let mut out = Vec::with_capacity(agents);
        let mut start = 0;
        for i in 0..agents {
            let len = base + usize::from(i < extra);
            out.push(order[start..start + len].to_vec());
            start += len;
        }
        out
    };
    Ok(match scheme {
        PartitionScheme::Contiguous => blocks((0..samples).collect()),
        PartitionScheme::RoundRobin => {
            let mut out = vec![Vec::with_capacity(samples / agents + 1); agents];
            for s in 0..samples {
                out[s % agents].push(s);
            }
            out
        }
        PartitionScheme::Shuffled { seed } => {
            let mut order: Vec<usize> = (0..samples).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            blocks(order)
        }
    })
}

/// Builds the distributed logistic objective from labelled samples.
pub fn into_logistic(raw: &RawDataset, assignment: &[Vec<usize>], lambda: f64) -> Result<LogisticProblem> {
    let rows = assignment
        .iter()
        .map(|idx| idx.iter().map(|&s| raw.rows[s].clone()).collect())
        .collect();
    let labels = assignment
        .iter()
        .map(|idx| idx.iter().map(|&s| raw.labels[s]).collect())
        .collect();
    LogisticProblem::new(rows, labels, raw.dim, lambda)
}

/// Per-agent sample counts, for reporting.
pub fn partition_sizes(assignment: &[Vec<usize>]) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for a in assignment {
        *hist.entry(a.len()).or_insert(0) += 1;
    }
    hist
}
