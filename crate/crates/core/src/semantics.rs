//! Phrase embedding tables and cosine top-k selection.
//!
//! File format: a `dim <d>` header, then one `<phrase>\t<v1> <v2> .. <vd>`
//! row per phrase.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("phrase {phrase:?}: expected {expected} values, found {found}")]
    DimensionMismatch {
        phrase: String,
        expected: usize,
        found: usize,
    },
    #[error("phrase {phrase:?} has a zero vector")]
    ZeroVector { phrase: String },
    #[error("phrase {phrase:?} appears twice")]
    Duplicate { phrase: String },
    #[error("no embedding for {0:?}")]
    Missing(String),
}

#[derive(Debug, Clone)]
struct Entry<T> {
    vector: Vec<T>,
    norm: T,
}

#[derive(Debug, Clone)]
pub struct EmbeddingTable<T> {
    dim: usize,
    entries: HashMap<String, Entry<T>>,
    order: Vec<String>,
}

/// Ranked result of [`EmbeddingTable::top_k_similar`].
#[derive(Debug, Clone, PartialEq)]
pub struct TopK<T> {
    pub hits: Vec<(String, T)>,
    /// Pool members skipped because the table has no vector for them.
    pub missing: Vec<String>,
}

fn l2_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        EmbeddingTable {
            dim,
            entries: HashMap::new(),
            order: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Phrases in insertion order.
    pub fn phrases(&self) -> &[String] {
        &self.order
    }

    pub fn contains(&self, phrase: &str) -> bool {
        self.entries.contains_key(phrase)
    }

    pub fn get(&self, phrase: &str) -> Option<&[T]> {
        self.entries.get(phrase).map(|e| e.vector.as_slice())
    }

    pub fn insert(
        &mut self,
        phrase: impl Into<String>,
        vector: Vec<T>,
    ) -> Result<(), EmbeddingError> {
        let phrase = phrase.into();
        if vector.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                phrase,
                expected: self.dim,
                found: vector.len(),
            });
        }
        let norm = l2_norm(&vector);
        if !norm.is_finite() || norm <= T::zero() {
            return Err(EmbeddingError::ZeroVector { phrase });
        }
        if self.entries.contains_key(&phrase) {
            return Err(EmbeddingError::Duplicate { phrase });
        }
        self.order.push(phrase.clone());
        self.entries.insert(phrase, Entry { vector, norm });
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, EmbeddingError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or_else(|| EmbeddingError::Malformed {
            line: 1,
            reason: "missing \"dim <d>\" header".into(),
        })?;
        let dim = header
            .trim()
            .strip_prefix("dim ")
            .and_then(|d| d.trim().parse::<usize>().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| EmbeddingError::Malformed {
                line: hline + 1,
                reason: format!("bad header {header:?}, expected \"dim <d>\""),
            })?;
        let mut table = EmbeddingTable::new(dim);
        for (i, line) in lines {
            let (phrase, values) =
                line.split_once('\t')
                    .ok_or_else(|| EmbeddingError::Malformed {
                        line: i + 1,
                        reason: "expected <phrase>\\t<values>".into(),
                    })?;
            let vector = values
                .split_whitespace()
                .map(|v| {
                    v.parse::<T>().map_err(|_| EmbeddingError::Malformed {
                        line: i + 1,
                        reason: format!("bad value {v:?}"),
                    })
                })
                .collect::<Result<Vec<T>, _>>()?;
            table.insert(phrase, vector)?;
        }
        Ok(table)
    }

    /// Serializes in the file format, rows in insertion order.
    pub fn to_text(&self) -> String {
        let mut out = format!("dim {}\n", self.dim);
        for p in &self.order {
            let e = &self.entries[p];
            let values: Vec<String> = e.vector.iter().map(|v| v.to_string()).collect();
            out.push_str(p);
            out.push('\t');
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        out
    }

    fn entry(&self, phrase: &str) -> Result<&Entry<T>, EmbeddingError> {
        self.entries
            .get(phrase)
            .ok_or_else(|| EmbeddingError::Missing(phrase.to_string()))
    }

    /// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`.
    pub fn cosine(&self, a: &str, b: &str) -> Result<T, EmbeddingError> {
        let ea = self.entry(a)?;
        let eb = self.entry(b)?;
        Ok(cosine_entries(ea, eb))
    }

    /// The `k` pool members most similar to `query`, most similar first,
    /// ties broken lexicographically. Members in `exclude`, duplicates and
    /// members without a vector are dropped; the latter are listed in
    /// [`TopK::missing`].
    pub fn top_k_similar<S: AsRef<str>>(
        &self,
        query: &str,
        pool: &[S],
        k: usize,
        exclude: &HashSet<String>,
    ) -> Result<TopK<T>, EmbeddingError> {
        let q = self.entry(query)?;
        let mut seen = HashSet::new();
        let mut missing = Vec::new();
        let mut scored: Vec<(String, T)> = Vec::new();
        for p in pool {
            let p = p.as_ref();
            if exclude.contains(p) || !seen.insert(p) {
                continue;
            }
            match self.entries.get(p) {
                Some(e) => scored.push((p.to_string(), cosine_entries(q, e))),
                None => {
                    log::warn!("no embedding for pool member {p:?}; skipped");
                    missing.push(p.to_string());
                }
            }
        }
        scored.sort_by(|(pa, sa), (pb, sb)| {
            sb.partial_cmp(sa)
                .unwrap_or(Ordering::Equal)
                .then_with(|| pa.cmp(pb))
        });
        scored.truncate(k);
        Ok(TopK {
            hits: scored,
            missing,
        })
    }
}

fn cosine_entries<T: Scalar>(a: &Entry<T>, b: &Entry<T>) -> T {
    let c = dot(&a.vector, &b.vector) / (a.norm * b.norm);
    c.max(-T::one()).min(T::one())
}

pub fn load_embeddings<T: Scalar>(path: &Path) -> Result<EmbeddingTable<T>, EmbeddingError> {
    let text = fs::read_to_string(path).map_err(|source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    EmbeddingTable::parse(&text)
}
