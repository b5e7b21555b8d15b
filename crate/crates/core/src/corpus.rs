//! Quads, sentences and dataset ingestion.
//!
//! Two on-disk formats are read:
//!
//! - canonical JSONL, one example per line:
//!   `{"id": .., "text": .., "tokens": [..]?, "quads": [{"aspect", "opinion", "category", "polarity"}]}`
//!   where a term is `null` (implicit), a `[start, end)` token span, or a
//!   surface string located in the tokens;
//! - the community delimited format `sentence####[['a', 'c', 's', 'o'], ..]`
//!   where `NULL` marks an implicit term.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::ops::Add;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: unknown category {label:?}")]
    UnknownCategory { line: usize, label: String },
    #[error("line {line}: unknown polarity {label:?}")]
    UnknownPolarity { line: usize, label: String },
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
}

impl CorpusError {
    /// Line number for record-level errors.
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::Malformed { line, .. }
            | CorpusError::UnknownCategory { line, .. }
            | CorpusError::UnknownPolarity { line, .. } => Some(*line),
            _ => None,
        }
    }
}

/// A token with byte offsets into the owning sentence text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        TokenSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &TokenSpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, other: &TokenSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl fmt::Display for TokenSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub text: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    /// Builds a sentence from its raw text, tokenizing on whitespace with
    /// punctuation detached.
    pub fn tokenize(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Sentence {
            id: id.into(),
            text,
            tokens,
        }
    }

    /// Builds a sentence whose tokens are exactly the whitespace-separated
    /// chunks of `text` (pre-tokenized corpora).
    pub fn from_whitespace(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let mut tokens = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            match (c.is_whitespace(), start) {
                (true, Some(s)) => {
                    tokens.push(Token {
                        text: text[s..i].to_string(),
                        start: s,
                        end: i,
                    });
                    start = None;
                }
                (false, None) => start = Some(i),
                _ => {}
            }
        }
        if let Some(s) = start {
            tokens.push(Token {
                text: text[s..].to_string(),
                start: s,
                end: text.len(),
            });
        }
        Sentence {
            id: id.into(),
            text,
            tokens,
        }
    }

    /// Builds a sentence from explicit token strings, aligning each token to
    /// the next occurrence in `text`.
    pub fn with_tokens(
        id: impl Into<String>,
        text: impl Into<String>,
        words: &[String],
    ) -> Result<Self, String> {
        let text = text.into();
        let mut cursor = 0;
        let mut tokens = Vec::with_capacity(words.len());
        for w in words {
            if w.is_empty() {
                return Err("empty token".to_string());
            }
            let found = text[cursor..]
                .find(w.as_str())
                .ok_or_else(|| format!("token {w:?} not found in text after byte {cursor}"))?;
            let start = cursor + found;
            let end = start + w.len();
            tokens.push(Token {
                text: w.clone(),
                start,
                end,
            });
            cursor = end;
        }
        Ok(Sentence {
            id: id.into(),
            text,
            tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    /// Surface form of a span: its tokens joined by single spaces.
    pub fn span_text(&self, span: TokenSpan) -> Option<String> {
        if span.is_empty() || span.end > self.tokens.len() {
            return None;
        }
        Some(
            self.tokens[span.start..span.end]
                .iter()
                .map(|t| t.text.as_str())
                .collect::<Vec<_>>()
                .join(" "),
        )
    }

    /// Every token range whose surface equals `phrase` (compared with
    /// `eq` per token). Phrases are split on whitespace; an empty phrase
    /// never matches.
    pub fn find_spans_by(&self, phrase: &str, eq: impl Fn(&str, &str) -> bool) -> Vec<TokenSpan> {
        let needle: Vec<&str> = phrase.split_whitespace().collect();
        if needle.is_empty() || needle.len() > self.tokens.len() {
            return Vec::new();
        }
        (0..=self.tokens.len() - needle.len())
            .filter(|&s| {
                needle
                    .iter()
                    .enumerate()
                    .all(|(i, w)| eq(&self.tokens[s + i].text, w))
            })
            .map(|s| TokenSpan::new(s, s + needle.len()))
            .collect()
    }

    pub fn find_span(&self, phrase: &str) -> Option<TokenSpan> {
        self.find_spans_by(phrase, |a, b| a == b).into_iter().next()
    }
}

fn is_joiner(c: char) -> bool {
    matches!(c, '\'' | '-' | '.' | ',' | '’')
}

/// Whitespace split with punctuation detached. Apostrophes, hyphens, dots
/// and commas stay inside a token when flanked by alphanumerics
/// (`don't`, `well-done`, `3.5`, `1,000`).
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let byte_end = |i: usize| chars.get(i).map(|&(b, _)| b).unwrap_or(text.len());
    let mut i = 0;
    while i < chars.len() {
        let (b, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_alphanumeric() {
            let mut j = i + 1;
            while j < chars.len() {
                let cj = chars[j].1;
                if cj.is_alphanumeric() {
                    j += 1;
                } else if is_joiner(cj) && j + 1 < chars.len() && chars[j + 1].1.is_alphanumeric() {
                    j += 2;
                } else {
                    break;
                }
            }
            let e = byte_end(j);
            tokens.push(Token {
                text: text[b..e].to_string(),
                start: b,
                end: e,
            });
            i = j;
        } else {
            let e = byte_end(i + 1);
            tokens.push(Token {
                text: text[b..e].to_string(),
                start: b,
                end: e,
            });
            i += 1;
        }
    }
    tokens
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];

    pub fn as_str(&self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "pos" => Ok(Polarity::Positive),
            "negative" | "neg" => Ok(Polarity::Negative),
            "neutral" | "neu" => Ok(Polarity::Neutral),
            _ => Err(s.to_string()),
        }
    }
}

/// The four quad elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Element {
    Aspect,
    Opinion,
    Category,
    Polarity,
}

impl Element {
    pub const ALL: [Element; 4] = [
        Element::Aspect,
        Element::Opinion,
        Element::Category,
        Element::Polarity,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Element::Aspect => "aspect",
            Element::Opinion => "opinion",
            Element::Category => "category",
            Element::Polarity => "polarity",
        }
    }

    pub fn is_span(&self) -> bool {
        matches!(self, Element::Aspect | Element::Opinion)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Aspect or opinion term: a token span, or implicit (annotated `NULL`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Implicit,
    Span(TokenSpan),
}

impl Term {
    pub fn span(&self) -> Option<TokenSpan> {
        match self {
            Term::Implicit => None,
            Term::Span(s) => Some(*s),
        }
    }

    pub fn is_implicit(&self) -> bool {
        matches!(self, Term::Implicit)
    }
}

/// An annotated quad, with terms anchored to token spans.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Quad {
    pub aspect: Term,
    pub opinion: Term,
    pub category: String,
    pub polarity: Polarity,
}

impl Quad {
    /// Surface view of the quad. Out-of-range spans surface as implicit;
    /// run [`validate_example`] first when that matters.
    pub fn surface(&self, sentence: &Sentence) -> SurfaceQuad {
        let term = |t: &Term| t.span().and_then(|s| sentence.span_text(s));
        SurfaceQuad {
            aspect: term(&self.aspect),
            opinion: term(&self.opinion),
            category: self.category.clone(),
            polarity: self.polarity,
        }
    }
}

/// A quad with terms as surface strings; `None` is an implicit term.
///
/// This is the form produced by output parsing and consumed by the
/// template renderer and the evaluator.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SurfaceQuad {
    pub aspect: Option<String>,
    pub opinion: Option<String>,
    pub category: String,
    pub polarity: Polarity,
}

impl SurfaceQuad {
    pub fn new(
        aspect: Option<&str>,
        opinion: Option<&str>,
        category: &str,
        polarity: Polarity,
    ) -> Self {
        SurfaceQuad {
            aspect: aspect.map(str::to_string),
            opinion: opinion.map(str::to_string),
            category: category.to_string(),
            polarity,
        }
    }

    /// Textual value of an element; `None` for implicit terms.
    pub fn get(&self, element: Element) -> Option<&str> {
        match element {
            Element::Aspect => self.aspect.as_deref(),
            Element::Opinion => self.opinion.as_deref(),
            Element::Category => Some(&self.category),
            Element::Polarity => Some(self.polarity.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryList {
    categories: Vec<String>,
}

impl CategoryList {
    pub fn new<S: Into<String>>(
        categories: impl IntoIterator<Item = S>,
    ) -> Result<Self, CorpusError> {
        let categories: Vec<String> = categories.into_iter().map(Into::into).collect();
        if categories.is_empty() {
            return Err(CorpusError::Vocabulary("category list is empty".into()));
        }
        let mut seen = HashSet::new();
        for c in &categories {
            if c.trim().is_empty() {
                return Err(CorpusError::Vocabulary("blank category".into()));
            }
            if !seen.insert(c.as_str()) {
                return Err(CorpusError::Vocabulary(format!("duplicate category {c:?}")));
            }
        }
        Ok(CategoryList { categories })
    }

    /// The 13 restaurant-domain categories shared by the SemEval-derived
    /// restaurant datasets.
    pub fn restaurant() -> Self {
        CategoryList::new([
            "ambience general",
            "drinks prices",
            "drinks quality",
            "drinks style_options",
            "food general",
            "food prices",
            "food quality",
            "food style_options",
            "location general",
            "restaurant general",
            "restaurant miscellaneous",
            "restaurant prices",
            "service general",
        ])
        .expect("static list is valid")
    }

    /// One category per non-blank line.
    pub fn from_file(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        CategoryList::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string),
        )
    }

    /// Categories in first-seen order across the examples.
    pub fn from_examples(examples: &[AnnotatedExample]) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for q in examples.iter().flat_map(|e| &e.quads) {
            if seen.insert(q.category.clone()) {
                out.push(q.category.clone());
            }
        }
        CategoryList::new(out)
    }

    pub fn contains(&self, category: &str) -> bool {
        self.categories.iter().any(|c| c == category)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolarityList {
    polarities: Vec<Polarity>,
}

impl PolarityList {
    pub fn new(polarities: impl IntoIterator<Item = Polarity>) -> Result<Self, CorpusError> {
        let polarities: Vec<Polarity> = polarities.into_iter().collect();
        let mut seen = HashSet::new();
        for p in &polarities {
            if !seen.insert(*p) {
                return Err(CorpusError::Vocabulary(format!("duplicate polarity {p}")));
            }
        }
        if !seen.contains(&Polarity::Positive) || !seen.contains(&Polarity::Negative) {
            return Err(CorpusError::Vocabulary(
                "polarity list must contain positive and negative".into(),
            ));
        }
        Ok(PolarityList { polarities })
    }

    pub fn binary() -> Self {
        PolarityList {
            polarities: vec![Polarity::Positive, Polarity::Negative],
        }
    }

    pub fn contains(&self, p: Polarity) -> bool {
        self.polarities.contains(&p)
    }

    pub fn as_slice(&self) -> &[Polarity] {
        &self.polarities
    }
}

impl Default for PolarityList {
    fn default() -> Self {
        PolarityList {
            polarities: Polarity::ALL.to_vec(),
        }
    }
}

/// Category and polarity label sets of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub categories: CategoryList,
    pub polarities: PolarityList,
}

impl Vocabulary {
    pub fn new(categories: CategoryList, polarities: PolarityList) -> Self {
        Vocabulary {
            categories,
            polarities,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedExample {
    pub sentence: Sentence,
    pub quads: Vec<Quad>,
}

impl AnnotatedExample {
    pub fn surface_quads(&self) -> Vec<SurfaceQuad> {
        self.quads
            .iter()
            .map(|q| q.surface(&self.sentence))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Jsonl,
    /// `sentence####[['aspect', 'category', 'polarity', 'opinion'], ..]`
    Legacy,
    /// `sentence<TAB>a_s,a_e CATEGORY#ATTR pol o_s,o_e<TAB>..`, token offsets
    /// with `-1,-1` for implicit terms and polarity 0/1/2 for
    /// negative/neutral/positive.
    Acos,
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" | "json" => Ok(DatasetFormat::Jsonl),
            "legacy" | "legacy-delimited" => Ok(DatasetFormat::Legacy),
            "acos" | "tsv" => Ok(DatasetFormat::Acos),
            other => Err(format!("unknown dataset format {other:?}")),
        }
    }
}

/// Result of a lenient load: every non-blank input line is either in
/// `examples` or in `errors`.
#[derive(Debug, Default)]
pub struct LoadReport {
    pub examples: Vec<AnnotatedExample>,
    pub errors: Vec<CorpusError>,
}

impl LoadReport {
    pub fn records(&self) -> usize {
        self.examples.len() + self.errors.len()
    }
}

/// Loads a dataset file, failing on the first malformed record.
pub fn load_dataset(
    path: &Path,
    format: DatasetFormat,
    vocab: Option<&Vocabulary>,
) -> Result<Vec<AnnotatedExample>, CorpusError> {
    let report = load_dataset_lenient(path, format, vocab)?;
    match report.errors.into_iter().next() {
        Some(e) => Err(e),
        None => Ok(report.examples),
    }
}

/// Loads a dataset file, collecting record errors instead of stopping.
/// Only I/O failures are returned as `Err`.
pub fn load_dataset_lenient(
    path: &Path,
    format: DatasetFormat,
    vocab: Option<&Vocabulary>,
) -> Result<LoadReport, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset(file, format, vocab).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

pub fn read_dataset(
    reader: impl Read,
    format: DatasetFormat,
    vocab: Option<&Vocabulary>,
) -> Result<LoadReport, CorpusError> {
    let mut report = LoadReport::default();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: "<reader>".into(),
            source,
        })?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match format {
            DatasetFormat::Jsonl => parse_jsonl_record(&line, line_no, vocab),
            DatasetFormat::Legacy => parse_legacy_record(&line, line_no, vocab),
            DatasetFormat::Acos => parse_acos_record(&line, line_no, vocab),
        };
        match parsed {
            Ok(ex) => report.examples.push(ex),
            Err(e) => report.errors.push(e),
        }
    }
    Ok(report)
}

fn malformed(line: usize, reason: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        line,
        reason: reason.into(),
    }
}

fn check_labels(
    line: usize,
    category: &str,
    polarity: &str,
    vocab: Option<&Vocabulary>,
) -> Result<Polarity, CorpusError> {
    let unknown_polarity = || CorpusError::UnknownPolarity {
        line,
        label: polarity.to_string(),
    };
    let pol: Polarity = polarity.parse().map_err(|_| unknown_polarity())?;
    if let Some(v) = vocab {
        if !v.categories.contains(category) {
            return Err(CorpusError::UnknownCategory {
                line,
                label: category.to_string(),
            });
        }
        if !v.polarities.contains(pol) {
            return Err(unknown_polarity());
        }
    }
    Ok(pol)
}

fn json_term(
    value: Option<&Value>,
    sentence: &Sentence,
    line: usize,
    field: &str,
) -> Result<Term, CorpusError> {
    match value {
        None | Some(Value::Null) => Ok(Term::Implicit),
        Some(Value::Array(a)) => {
            let bounds: Option<Vec<usize>> =
                a.iter().map(|v| v.as_u64().map(|x| x as usize)).collect();
            match bounds.as_deref() {
                Some([s, e]) => {
                    let span = TokenSpan::new(*s, *e);
                    if span.is_empty() || span.end > sentence.len() {
                        Err(malformed(
                            line,
                            format!("{field} span {span} outside {} tokens", sentence.len()),
                        ))
                    } else {
                        Ok(Term::Span(span))
                    }
                }
                _ => Err(malformed(
                    line,
                    format!("{field} span must be [start, end]"),
                )),
            }
        }
        Some(Value::String(s)) => sentence
            .find_span(s)
            .map(Term::Span)
            .ok_or_else(|| malformed(line, format!("{field} {s:?} not found in sentence tokens"))),
        Some(_) => Err(malformed(
            line,
            format!("{field} must be null, a span or a string"),
        )),
    }
}

fn parse_jsonl_record(
    line: &str,
    line_no: usize,
    vocab: Option<&Vocabulary>,
) -> Result<AnnotatedExample, CorpusError> {
    let v: Value =
        serde_json::from_str(line).map_err(|e| malformed(line_no, format!("invalid JSON: {e}")))?;
    let obj = v
        .as_object()
        .ok_or_else(|| malformed(line_no, "record is not a JSON object"))?;
    let text = obj
        .get("text")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed(line_no, "missing string field \"text\""))?;
    let id = match obj.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        None | Some(Value::Null) => line_no.to_string(),
        Some(_) => return Err(malformed(line_no, "\"id\" must be a string or number")),
    };
    let sentence = match obj.get("tokens") {
        None | Some(Value::Null) => Sentence::tokenize(id, text),
        Some(Value::Array(toks)) => {
            let words: Option<Vec<String>> = toks
                .iter()
                .map(|t| t.as_str().map(str::to_string))
                .collect();
            let words = words.ok_or_else(|| malformed(line_no, "tokens must be strings"))?;
            Sentence::with_tokens(id, text, &words).map_err(|e| malformed(line_no, e))?
        }
        Some(_) => return Err(malformed(line_no, "\"tokens\" must be an array")),
    };
    let quads = obj
        .get("quads")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed(line_no, "missing array field \"quads\""))?;
    if quads.is_empty() {
        return Err(malformed(line_no, "example has no quads"));
    }
    let mut out = Vec::with_capacity(quads.len());
    for q in quads {
        let q = q
            .as_object()
            .ok_or_else(|| malformed(line_no, "quad is not an object"))?;
        let category = q
            .get("category")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed(line_no, "quad missing \"category\""))?;
        let polarity = q
            .get("polarity")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed(line_no, "quad missing \"polarity\""))?;
        let polarity = check_labels(line_no, category, polarity, vocab)?;
        out.push(Quad {
            aspect: json_term(q.get("aspect"), &sentence, line_no, "aspect")?,
            opinion: json_term(q.get("opinion"), &sentence, line_no, "opinion")?,
            category: category.to_string(),
            polarity,
        });
    }
    Ok(AnnotatedExample {
        sentence,
        quads: out,
    })
}

/// Parses a Python-style list literal of (nested) lists of quoted strings.
fn parse_list_literal(src: &str) -> Result<Vec<Vec<String>>, String> {
    #[derive(Debug)]
    enum Lit {
        Str(String),
        List(Vec<Lit>),
    }

    struct P<'a> {
        chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    }

    impl P<'_> {
        fn ws(&mut self) {
            while matches!(self.chars.peek(), Some((_, c)) if c.is_whitespace()) {
                self.chars.next();
            }
        }

        fn value(&mut self) -> Result<Lit, String> {
            self.ws();
            match self.chars.next() {
                Some((_, '[')) => {
                    let mut items = Vec::new();
                    self.ws();
                    if matches!(self.chars.peek(), Some((_, ']'))) {
                        self.chars.next();
                        return Ok(Lit::List(items));
                    }
                    loop {
                        items.push(self.value()?);
                        self.ws();
                        match self.chars.next() {
                            Some((_, ',')) => {
                                self.ws();
                                if matches!(self.chars.peek(), Some((_, ']'))) {
                                    self.chars.next();
                                    return Ok(Lit::List(items));
                                }
                            }
                            Some((_, ']')) => return Ok(Lit::List(items)),
                            Some((i, c)) => return Err(format!("unexpected {c:?} at {i}")),
                            None => return Err("unterminated list".into()),
                        }
                    }
                }
                Some((_, q @ ('\'' | '"'))) => {
                    let mut s = String::new();
                    loop {
                        match self.chars.next() {
                            Some((_, '\\')) => match self.chars.next() {
                                Some((_, c)) => s.push(c),
                                None => return Err("dangling escape".into()),
                            },
                            Some((_, c)) if c == q => return Ok(Lit::Str(s)),
                            Some((_, c)) => s.push(c),
                            None => return Err("unterminated string".into()),
                        }
                    }
                }
                Some((i, c)) => Err(format!("unexpected {c:?} at {i}")),
                None => Err("unexpected end of input".into()),
            }
        }
    }

    let mut p = P {
        chars: src.char_indices().peekable(),
    };
    let v = p.value()?;
    p.ws();
    if let Some((i, c)) = p.chars.next() {
        return Err(format!("trailing {c:?} at {i}"));
    }
    match v {
        Lit::List(items) => items
            .into_iter()
            .map(|item| match item {
                Lit::List(fields) => fields
                    .into_iter()
                    .map(|f| match f {
                        Lit::Str(s) => Ok(s),
                        Lit::List(_) => Err("quad fields must be strings".to_string()),
                    })
                    .collect(),
                Lit::Str(_) => Err("expected a list of quads".to_string()),
            })
            .collect(),
        Lit::Str(_) => Err("expected a list".into()),
    }
}

fn parse_legacy_record(
    line: &str,
    line_no: usize,
    vocab: Option<&Vocabulary>,
) -> Result<AnnotatedExample, CorpusError> {
    let (text, labels) = line
        .split_once("####")
        .ok_or_else(|| malformed(line_no, "missing \"####\" delimiter"))?;
    let sentence = Sentence::from_whitespace(line_no.to_string(), text.trim());
    let quads = parse_list_literal(labels.trim()).map_err(|e| malformed(line_no, e))?;
    if quads.is_empty() {
        return Err(malformed(line_no, "example has no quads"));
    }
    let term = |s: &str, field: &str| -> Result<Term, CorpusError> {
        if s == "NULL" {
            return Ok(Term::Implicit);
        }
        sentence.find_span(s).map(Term::Span).ok_or_else(|| {
            malformed(
                line_no,
                format!("{field} {s:?} not found in sentence tokens"),
            )
        })
    };
    let mut out = Vec::with_capacity(quads.len());
    for q in &quads {
        let [a, c, s, o] = q.as_slice() else {
            return Err(malformed(
                line_no,
                format!(
                    "quad must have 4 fields (aspect, category, polarity, opinion), got {}",
                    q.len()
                ),
            ));
        };
        let polarity = check_labels(line_no, c, s, vocab)?;
        out.push(Quad {
            aspect: term(a, "aspect")?,
            opinion: term(o, "opinion")?,
            category: c.clone(),
            polarity,
        });
    }
    Ok(AnnotatedExample {
        sentence,
        quads: out,
    })
}

fn parse_acos_record(
    line: &str,
    line_no: usize,
    vocab: Option<&Vocabulary>,
) -> Result<AnnotatedExample, CorpusError> {
    let mut fields = line.split('\t');
    let text = fields.next().unwrap_or_default().trim();
    let sentence = Sentence::from_whitespace(line_no.to_string(), text);
    let term = |f: &str, field: &str| -> Result<Term, CorpusError> {
        let bad = || malformed(line_no, format!("bad {field} offsets {f:?}"));
        let (a, b) = f.split_once(',').ok_or_else(bad)?;
        let (a, b): (i64, i64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
        if a == -1 && b == -1 {
            return Ok(Term::Implicit);
        }
        if a < 0 || b <= a || b as usize > sentence.len() {
            return Err(bad());
        }
        Ok(Term::Span(TokenSpan::new(a as usize, b as usize)))
    };
    let mut quads = Vec::new();
    for f in fields.filter(|f| !f.trim().is_empty()) {
        let parts: Vec<&str> = f.split_whitespace().collect();
        let [a, c, s, o] = parts.as_slice() else {
            return Err(malformed(line_no, format!("quad {f:?} must have 4 fields")));
        };
        let label = match *s {
            "0" => "negative",
            "1" => "neutral",
            "2" => "positive",
            other => other,
        };
        let category = c.to_lowercase().replace('#', " ");
        let polarity = check_labels(line_no, &category, label, vocab)?;
        quads.push(Quad {
            aspect: term(a, "aspect")?,
            opinion: term(o, "opinion")?,
            category,
            polarity,
        });
    }
    if quads.is_empty() {
        return Err(malformed(line_no, "example has no quads"));
    }
    Ok(AnnotatedExample { sentence, quads })
}

fn span_json(t: &Term) -> Value {
    match t {
        Term::Implicit => Value::Null,
        Term::Span(s) => json!([s.start, s.end]),
    }
}

/// Canonical JSONL line for an example (no trailing newline).
pub fn to_canonical_json(example: &AnnotatedExample) -> String {
    let quads: Vec<Value> = example
        .quads
        .iter()
        .map(|q| {
            json!({
                "aspect": span_json(&q.aspect),
                "opinion": span_json(&q.opinion),
                "category": q.category,
                "polarity": q.polarity.as_str(),
            })
        })
        .collect();
    let v = json!({
        "id": example.sentence.id,
        "text": example.sentence.text,
        "tokens": example.sentence.words(),
        "quads": quads,
    });
    v.to_string()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub sentences: usize,
    pub quads: usize,
}

impl Add for DatasetStats {
    type Output = DatasetStats;

    fn add(self, rhs: Self) -> Self::Output {
        DatasetStats {
            sentences: self.sentences + rhs.sentences,
            quads: self.quads + rhs.quads,
        }
    }
}

pub fn stats(examples: &[AnnotatedExample]) -> DatasetStats {
    DatasetStats {
        sentences: examples.len(),
        quads: examples.iter().map(|e| e.quads.len()).sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoQuads,
    SpanOutOfRange {
        quad: usize,
        element: Element,
        span: TokenSpan,
        token_count: usize,
    },
    UnknownCategory {
        quad: usize,
        label: String,
    },
    UnknownPolarity {
        quad: usize,
        label: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoQuads => write!(f, "example has no quads"),
            Violation::SpanOutOfRange {
                quad,
                element,
                span,
                token_count,
            } => write!(
                f,
                "quad {quad}: {element} span {span} out of range for {token_count} tokens"
            ),
            Violation::UnknownCategory { quad, label } => {
                write!(f, "quad {quad}: unknown category {label:?}")
            }
            Violation::UnknownPolarity { quad, label } => {
                write!(f, "quad {quad}: unknown polarity {label:?}")
            }
        }
    }
}

/// Lists every violated quad invariant; empty iff the example is valid.
pub fn validate_example(example: &AnnotatedExample, vocab: &Vocabulary) -> Vec<Violation> {
    let mut out = Vec::new();
    if example.quads.is_empty() {
        out.push(Violation::NoQuads);
    }
    let n = example.sentence.len();
    for (i, q) in example.quads.iter().enumerate() {
        for (element, term) in [(Element::Aspect, &q.aspect), (Element::Opinion, &q.opinion)] {
            if let Term::Span(span) = term {
                if span.is_empty() || span.end > n {
                    out.push(Violation::SpanOutOfRange {
                        quad: i,
                        element,
                        span: *span,
                        token_count: n,
                    });
                }
            }
        }
        if !vocab.categories.contains(&q.category) {
            out.push(Violation::UnknownCategory {
                quad: i,
                label: q.category.clone(),
            });
        }
        if !vocab.polarities.contains(q.polarity) {
            out.push(Violation::UnknownPolarity {
                quad: i,
                label: q.polarity.to_string(),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const BUGGY_PAGE: &str =
        "their support page is very buggy , and the support person is unhelpful .";

    fn buggy_page_example() -> AnnotatedExample {
        let line = format!(
            r#"{{"id":"buggy","text":"{BUGGY_PAGE}","quads":[{{"aspect":"support page","opinion":"buggy","category":"support general","polarity":"negative"}},{{"aspect":"support person","opinion":"unhelpful","category":"support general","polarity":"negative"}}]}}"#
        );
        let report = read_dataset(line.as_bytes(), DatasetFormat::Jsonl, None).unwrap();
        assert!(report.errors.is_empty(), "{:?}", report.errors);
        report.examples.into_iter().next().unwrap()
    }

    fn vocab_with(categories: &[&str]) -> Vocabulary {
        Vocabulary::new(
            CategoryList::new(categories.iter().copied()).unwrap(),
            PolarityList::default(),
        )
    }

    #[test]
    fn acos_record() {
        let line =
            "the pizza was great but pricey\t1,2 FOOD#QUALITY 2 3,4\t-1,-1 FOOD#PRICES 0 5,6";
        let r = read_dataset(line.as_bytes(), DatasetFormat::Acos, None).unwrap();
        assert!(r.errors.is_empty(), "{:?}", r.errors);
        let q = r.examples[0].surface_quads();
        assert_eq!(
            q[0],
            SurfaceQuad::new(
                Some("pizza"),
                Some("great"),
                "food quality",
                Polarity::Positive
            )
        );
        assert_eq!(
            q[1],
            SurfaceQuad::new(None, Some("pricey"), "food prices", Polarity::Negative)
        );
        let bad = "x y\t0,9 FOOD#QUALITY 2 0,1";
        assert!(
            read_dataset(bad.as_bytes(), DatasetFormat::Acos, None)
                .unwrap()
                .errors
                .len()
                == 1
        );
    }

    #[test]
    fn tokenizer_detaches_punctuation() {
        let words: Vec<String> = tokenize("The pasta, sadly, wasn't great ($25).")
            .into_iter()
            .map(|t| t.text)
            .collect();
        assert_eq!(
            words,
            ["The", "pasta", ",", "sadly", ",", "wasn't", "great", "(", "$", "25", ")", "."]
        );
    }

    #[test]
    fn token_offsets_reproduce_text() {
        let s = Sentence::tokenize("x", "Prices: 3.5 dollars -- well-done!");
        let mut last_end = 0;
        for t in &s.tokens {
            assert_eq!(&s.text[t.start..t.end], t.text);
            assert!(t.start >= last_end && t.end > t.start);
            last_end = t.end;
        }
    }

    #[test]
    fn two_quad_record_loads() {
        let ex = buggy_page_example();
        assert_eq!(ex.quads.len(), 2);
        assert_eq!(ex.quads[0].aspect, Term::Span(TokenSpan::new(1, 3)));
        assert_eq!(
            ex.surface_quads()[1],
            SurfaceQuad::new(
                Some("support person"),
                Some("unhelpful"),
                "support general",
                Polarity::Negative
            )
        );
        assert_eq!(
            stats(std::slice::from_ref(&ex)),
            DatasetStats {
                sentences: 1,
                quads: 2
            }
        );
        assert!(validate_example(&ex, &vocab_with(&["support general"])).is_empty());
    }

    #[test]
    fn empty_input_is_empty_list() {
        let report = read_dataset(&b""[..], DatasetFormat::Jsonl, None).unwrap();
        assert!(report.examples.is_empty() && report.errors.is_empty());
        assert_eq!(stats(&[]), DatasetStats::default());
    }

    #[test]
    fn malformed_record_carries_line_number() {
        let data = "{\"text\":\"good food\",\"quads\":[{\"aspect\":\"food\",\"opinion\":\"good\",\"category\":\"food quality\",\"polarity\":\"positive\"}]}\n\nnot json\n";
        let report = read_dataset(data.as_bytes(), DatasetFormat::Jsonl, None).unwrap();
        assert_eq!(report.examples.len(), 1);
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].line(), Some(3));
    }

    #[test]
    fn unknown_labels_are_named() {
        let v = vocab_with(&["food quality"]);
        let line = r#"{"text":"cheap food","quads":[{"aspect":"food","opinion":"cheap","category":"food prices","polarity":"positive"}]}"#;
        let err = read_dataset(line.as_bytes(), DatasetFormat::Jsonl, Some(&v))
            .unwrap()
            .errors
            .remove(0);
        assert!(err.to_string().contains("food prices"), "{err}");
        let line = r#"{"text":"food","quads":[{"aspect":"food","opinion":null,"category":"food quality","polarity":"mixed"}]}"#;
        let err = read_dataset(line.as_bytes(), DatasetFormat::Jsonl, Some(&v))
            .unwrap()
            .errors
            .remove(0);
        assert!(matches!(err, CorpusError::UnknownPolarity { ref label, .. } if label == "mixed"));
    }

    #[test]
    fn legacy_format_reads_implicit_terms() {
        let line = "the place is nice but the sushi was bland .####[['place', 'ambience general', 'positive', 'nice'], ['NULL', 'food quality', 'negative', 'bland'], [\"sushi\", \"food quality\", \"negative\", \"NULL\"]]";
        let report = read_dataset(line.as_bytes(), DatasetFormat::Legacy, None).unwrap();
        assert!(report.errors.is_empty(), "{:?}", report.errors);
        let ex = &report.examples[0];
        assert_eq!(ex.quads.len(), 3);
        assert_eq!(ex.quads[0].aspect, Term::Span(TokenSpan::new(1, 2)));
        assert_eq!(ex.quads[0].opinion, Term::Span(TokenSpan::new(3, 4)));
        assert!(ex.quads[1].aspect.is_implicit());
        assert!(ex.quads[2].opinion.is_implicit());
    }

    #[test]
    fn legacy_literal_errors() {
        assert!(parse_list_literal("[['a', 'b'").is_err());
        assert!(parse_list_literal("[['a'], 'b']").is_err());
        assert_eq!(parse_list_literal("[]").unwrap(), Vec::<Vec<String>>::new());
        assert_eq!(
            parse_list_literal(r"[['it\'s', 'x',],]").unwrap(),
            vec![vec!["it's".to_string(), "x".to_string()]]
        );
        let line = "good food####[['food', 'food quality', 'positive']]";
        let err = read_dataset(line.as_bytes(), DatasetFormat::Legacy, None)
            .unwrap()
            .errors
            .remove(0);
        assert!(err.to_string().contains("4 fields"));
    }

    #[test]
    fn literal_null_word_is_not_implicit_in_jsonl() {
        let line = r#"{"text":"null pointer soup","quads":[{"aspect":"null","opinion":null,"category":"food quality","polarity":"neutral"}]}"#;
        let ex = read_dataset(line.as_bytes(), DatasetFormat::Jsonl, None)
            .unwrap()
            .examples
            .remove(0);
        assert_eq!(ex.quads[0].aspect, Term::Span(TokenSpan::new(0, 1)));
        assert!(ex.quads[0].opinion.is_implicit());
    }

    #[test]
    fn validation_reports_each_violation() {
        let mut ex = buggy_page_example();
        let v = vocab_with(&["support general"]);
        ex.quads[0].category = "food prices".into();
        let report = validate_example(&ex, &v);
        assert_eq!(report.len(), 1);
        assert!(report[0].to_string().contains("food prices"));

        let mut ex = buggy_page_example();
        ex.quads[1].aspect = Term::Span(TokenSpan::new(13, 20));
        let report = validate_example(&ex, &v);
        assert!(matches!(
            report.as_slice(),
            [Violation::SpanOutOfRange { quad: 1, .. }]
        ));
    }

    #[test]
    fn canonical_json_round_trips() {
        let ex = buggy_page_example();
        let line = to_canonical_json(&ex);
        let back = read_dataset(line.as_bytes(), DatasetFormat::Jsonl, None)
            .unwrap()
            .examples
            .remove(0);
        assert_eq!(back, ex);
    }

    #[test]
    fn vocab_invariants() {
        assert!(CategoryList::new(Vec::<String>::new()).is_err());
        assert!(CategoryList::new(["a", "a"]).is_err());
        assert!(PolarityList::new([Polarity::Positive, Polarity::Neutral]).is_err());
        assert!(
            PolarityList::new([Polarity::Positive, Polarity::Negative, Polarity::Positive])
                .is_err()
        );
        assert_eq!(CategoryList::restaurant().len(), 13);
    }
}
