//! Exact-match quad scoring and error taxonomy.
//!
//! A predicted quad counts only if all four elements match a gold quad.
//! Comparison is case-insensitive with whitespace collapsed by default
//! ([`MatchMode::Normalized`]); [`MatchMode::Strict`] compares bytes.
//! Quads are deduplicated per sentence and counts are micro-averaged.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Element, Polarity, Sentence, SurfaceQuad};
use crate::template::ParsedOutput;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("prediction and gold keys differ: missing from predictions {missing_in_pred:?}, missing from gold {missing_in_gold:?}")]
    KeyMismatch {
        missing_in_pred: Vec<String>,
        missing_in_gold: Vec<String>,
    },
    #[error("{pred} prediction rows for {gold} gold rows")]
    LengthMismatch { pred: usize, gold: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    #[default]
    Normalized,
    Strict,
}

impl MatchMode {
    pub fn normalize(&self, s: &str) -> String {
        match self {
            MatchMode::Strict => s.to_string(),
            MatchMode::Normalized => s
                .split_whitespace()
                .map(str::to_lowercase)
                .collect::<Vec<_>>()
                .join(" "),
        }
    }

    fn key(&self, q: &SurfaceQuad) -> QuadKey {
        QuadKey {
            aspect: q.aspect.as_deref().map(|s| self.normalize(s)),
            opinion: q.opinion.as_deref().map(|s| self.normalize(s)),
            category: self.normalize(&q.category),
            polarity: q.polarity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct QuadKey {
    aspect: Option<String>,
    opinion: Option<String>,
    category: String,
    polarity: Polarity,
}

impl QuadKey {
    fn differing(&self, other: &QuadKey) -> Vec<Element> {
        let mut out = Vec::new();
        if self.aspect != other.aspect {
            out.push(Element::Aspect);
        }
        if self.opinion != other.opinion {
            out.push(Element::Opinion);
        }
        if self.category != other.category {
            out.push(Element::Category);
        }
        if self.polarity != other.polarity {
            out.push(Element::Polarity);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadMatchReport {
    pub tp: usize,
    pub pred_count: usize,
    pub gold_count: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl QuadMatchReport {
    pub fn from_counts(tp: usize, pred_count: usize, gold_count: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, pred_count);
        let recall = ratio(tp, gold_count);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        QuadMatchReport {
            tp,
            pred_count,
            gold_count,
            precision,
            recall,
            f1,
        }
    }
}

fn dedup_keys(quads: &[SurfaceQuad], mode: MatchMode) -> Vec<(usize, QuadKey)> {
    let mut seen = HashSet::new();
    quads
        .iter()
        .enumerate()
        .map(|(i, q)| (i, mode.key(q)))
        .filter(|(_, k)| seen.insert(k.clone()))
        .collect()
}

/// `(tp, pred_count, gold_count)` for one sentence.
pub fn sentence_counts(
    pred: &[SurfaceQuad],
    gold: &[SurfaceQuad],
    mode: MatchMode,
) -> (usize, usize, usize) {
    let p = dedup_keys(pred, mode);
    let g: HashSet<QuadKey> = dedup_keys(gold, mode).into_iter().map(|(_, k)| k).collect();
    let tp = p.iter().filter(|(_, k)| g.contains(k)).count();
    (tp, p.len(), g.len())
}

/// Micro-averaged scores over sentences keyed by id.
pub fn score<K: Ord + fmt::Display>(
    pred: &BTreeMap<K, Vec<SurfaceQuad>>,
    gold: &BTreeMap<K, Vec<SurfaceQuad>>,
    mode: MatchMode,
) -> Result<QuadMatchReport, EvalError> {
    let missing_in_pred: Vec<String> = gold
        .keys()
        .filter(|k| !pred.contains_key(*k))
        .map(|k| k.to_string())
        .collect();
    let missing_in_gold: Vec<String> = pred
        .keys()
        .filter(|k| !gold.contains_key(*k))
        .map(|k| k.to_string())
        .collect();
    if !missing_in_pred.is_empty() || !missing_in_gold.is_empty() {
        return Err(EvalError::KeyMismatch {
            missing_in_pred,
            missing_in_gold,
        });
    }
    let (mut tp, mut pc, mut gc) = (0, 0, 0);
    for (k, g) in gold {
        let (t, p, n) = sentence_counts(&pred[k], g, mode);
        tp += t;
        pc += p;
        gc += n;
    }
    Ok(QuadMatchReport::from_counts(tp, pc, gc))
}

/// [`score`] over line-aligned sentence lists.
pub fn score_aligned(
    pred: &[Vec<SurfaceQuad>],
    gold: &[Vec<SurfaceQuad>],
    mode: MatchMode,
) -> Result<QuadMatchReport, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let (mut tp, mut pc, mut gc) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        let (t, a, b) = sentence_counts(p, g, mode);
        tp += t;
        pc += a;
        gc += b;
    }
    Ok(QuadMatchReport::from_counts(tp, pc, gc))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpanSubtype {
    PartialMatch,
    Mismatch,
}

impl SpanSubtype {
    pub fn as_str(&self) -> &'static str {
        match self {
            SpanSubtype::PartialMatch => "partial-match",
            SpanSubtype::Mismatch => "mismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "category", rename_all = "kebab-case")]
pub enum ErrorKind {
    SingleElement {
        element: Element,
        subtype: SpanSubtype,
    },
    MultiElement {
        differing: Vec<Element>,
    },
    MissingQuad,
    SpuriousQuad,
}

impl ErrorKind {
    /// Histogram key such as `single-element/aspect/partial-match`.
    pub fn label(&self) -> String {
        match self {
            ErrorKind::SingleElement { element, subtype } => {
                format!("single-element/{element}/{}", subtype.as_str())
            }
            ErrorKind::MultiElement { .. } => "multi-element".into(),
            ErrorKind::MissingQuad => "missing-quad".into(),
            ErrorKind::SpuriousQuad => "spurious-quad".into(),
        }
    }

    /// Number of unmatched quads (pred + gold) the record accounts for.
    pub fn quad_count(&self) -> usize {
        match self {
            ErrorKind::SingleElement { .. } | ErrorKind::MultiElement { .. } => 2,
            ErrorKind::MissingQuad | ErrorKind::SpuriousQuad => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: ErrorKind,
    pub pred: Option<usize>,
    pub gold: Option<usize>,
}

/// Largest token overlap between any occurrence of `a` and of `b` in the
/// sentence. Phrases not found in the sentence fall back to the number of
/// shared words.
pub fn token_overlap(
    sentence: &Sentence,
    a: Option<&str>,
    b: Option<&str>,
    mode: MatchMode,
) -> usize {
    let (Some(a), Some(b)) = (a, b) else {
        return 0;
    };
    let eq = |x: &str, y: &str| mode.normalize(x) == mode.normalize(y);
    let sa = sentence.find_spans_by(a, eq);
    let sb = sentence.find_spans_by(b, eq);
    if sa.is_empty() || sb.is_empty() {
        let wa: HashSet<String> = a.split_whitespace().map(|w| mode.normalize(w)).collect();
        return b
            .split_whitespace()
            .map(|w| mode.normalize(w))
            .collect::<HashSet<_>>()
            .intersection(&wa)
            .count();
    }
    sa.iter()
        .flat_map(|x| sb.iter().map(move |y| (x, y)))
        .map(|(x, y)| x.end.min(y.end).saturating_sub(x.start.max(y.start)))
        .max()
        .unwrap_or(0)
}

/// Classifies every unmatched quad of one sentence.
///
/// Unmatched predictions and gold quads are paired greedily by number of
/// agreeing elements (then aspect token overlap, then gold order, then
/// prediction order). A pair agreeing on three elements is a single-element
/// error; fewer is multi-element. Pairs must agree on at least one element;
/// leftovers are missing (gold) or spurious (pred).
pub fn classify_errors(
    pred: &[SurfaceQuad],
    gold: &[SurfaceQuad],
    sentence: &Sentence,
    mode: MatchMode,
) -> Vec<ErrorRecord> {
    let p = dedup_keys(pred, mode);
    let g = dedup_keys(gold, mode);
    let gold_keys: HashSet<&QuadKey> = g.iter().map(|(_, k)| k).collect();
    let pred_keys: HashSet<&QuadKey> = p.iter().map(|(_, k)| k).collect();
    let up: Vec<&(usize, QuadKey)> = p.iter().filter(|(_, k)| !gold_keys.contains(k)).collect();
    let ug: Vec<&(usize, QuadKey)> = g.iter().filter(|(_, k)| !pred_keys.contains(k)).collect();

    let mut pairs = Vec::new();
    for (pi, (pidx, pk)) in up.iter().map(|x| (x.0, &x.1)).enumerate() {
        for (gi, (gidx, gk)) in ug.iter().map(|x| (x.0, &x.1)).enumerate() {
            let agree = 4 - pk.differing(gk).len();
            if agree == 0 {
                continue;
            }
            let overlap = token_overlap(
                sentence,
                pred[pidx].aspect.as_deref(),
                gold[gidx].aspect.as_deref(),
                mode,
            );
            pairs.push((agree, overlap, gi, pi));
        }
    }
    pairs.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(b.1.cmp(&a.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });

    let mut used_p = vec![false; up.len()];
    let mut used_g = vec![false; ug.len()];
    let mut out = Vec::new();
    for (agree, _, gi, pi) in pairs {
        if used_p[pi] || used_g[gi] {
            continue;
        }
        used_p[pi] = true;
        used_g[gi] = true;
        let (pidx, pk) = (up[pi].0, &up[pi].1);
        let (gidx, gk) = (ug[gi].0, &ug[gi].1);
        let differing = pk.differing(gk);
        let kind = if agree == 3 {
            let element = differing[0];
            let subtype = if element.is_span()
                && token_overlap(
                    sentence,
                    pred[pidx].get(element),
                    gold[gidx].get(element),
                    mode,
                ) > 0
            {
                SpanSubtype::PartialMatch
            } else {
                SpanSubtype::Mismatch
            };
            ErrorKind::SingleElement { element, subtype }
        } else {
            ErrorKind::MultiElement { differing }
        };
        out.push(ErrorRecord {
            kind,
            pred: Some(pidx),
            gold: Some(gidx),
        });
    }
    for (gi, (gidx, _)) in ug.iter().map(|x| (x.0, &x.1)).enumerate() {
        if !used_g[gi] {
            out.push(ErrorRecord {
                kind: ErrorKind::MissingQuad,
                pred: None,
                gold: Some(gidx),
            });
        }
    }
    for (pi, (pidx, _)) in up.iter().map(|x| (x.0, &x.1)).enumerate() {
        if !used_p[pi] {
            out.push(ErrorRecord {
                kind: ErrorKind::SpuriousQuad,
                pred: Some(pidx),
                gold: None,
            });
        }
    }
    out
}

pub fn error_histogram<'a>(
    records: impl IntoIterator<Item = &'a ErrorRecord>,
) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for r in records {
        *h.entry(r.kind.label()).or_insert(0) += 1;
    }
    h
}

/// Share of parsed groups whose rationale agrees with their fields;
/// 1.0 when there are no groups.
pub fn coherence_rate(outputs: &[ParsedOutput]) -> f64 {
    let (coherent, total) = outputs
        .iter()
        .flat_map(|o| &o.groups)
        .fold((0usize, 0usize), |(c, t), g| {
            (c + g.coherent as usize, t + 1)
        });
    if total == 0 {
        1.0
    } else {
        coherent as f64 / total as f64
    }
}
