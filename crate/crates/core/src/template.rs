//! The prefix-guided output format with rationale, its parser, the
//! marker-style baseline format and the instruction prompt.
//!
//! One quad renders as
//!
//! ```text
//! (aspect term: A, opinion term: O, aspect category: C, sentiment polarity: S, rationale: C is S because A is O)
//! ```
//!
//! with polarity and implicit terms mapped through an [`ElementMapping`];
//! several quads are joined by `"; "`. See `grammar/output-format.txt`.

use std::fmt;

use crate::corpus::{Polarity, Sentence, SurfaceQuad, Vocabulary};

pub const GROUP_OPEN: &str = "(aspect term:";
pub const OPINION_PREFIX: &str = ", opinion term:";
pub const CATEGORY_PREFIX: &str = ", aspect category:";
pub const POLARITY_PREFIX: &str = ", sentiment polarity:";
pub const RATIONALE_PREFIX: &str = ", rationale:";
pub const GROUP_SEPARATOR: &str = "; ";

pub const MARKER_ASPECT: &str = "[A]";
pub const MARKER_OPINION: &str = "[O]";
pub const MARKER_CATEGORY: &str = "[C]";
pub const MARKER_POLARITY: &str = "[S]";
pub const MARKER_SEPARATOR: &str = " [SSEP] ";

/// Instruction line of the prompt; `{Input Text}` is replaced by the sentence.
pub const PROMPT_INSTRUCTION: &str = "Given the input text: {Input Text}, infer aspect terms, opinion terms, aspect categories, and sentiment polarity following the format. Please join with semicolon if multiple aspects or opinions are detected.";
pub const PROMPT_FORMAT_HEADER: &str = "#Output Format";
pub const PROMPT_FORMAT_LINE: &str = "(aspect term: [aspect term], opinion term: [opinion term], aspect category: [aspect category], sentiment polarity: [sentiment polarity], rationale: [aspect category] is [sentiment polarity] because [aspect term] is [opinion term])";

/// Surface forms for polarity labels and implicit terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementMapping {
    pub positive: String,
    pub negative: String,
    pub neutral: String,
    pub implicit: String,
}

impl Default for ElementMapping {
    fn default() -> Self {
        ElementMapping {
            positive: "great".into(),
            negative: "bad".into(),
            neutral: "ok".into(),
            implicit: "it".into(),
        }
    }
}

impl ElementMapping {
    /// Fails unless the three polarity words are distinct and non-blank.
    pub fn validate(&self) -> Result<(), String> {
        let words = [
            &self.positive,
            &self.negative,
            &self.neutral,
            &self.implicit,
        ];
        if words
            .iter()
            .any(|w| w.trim().is_empty() || w.trim() != w.as_str())
        {
            return Err("mapping words must be non-blank and untrimmed".into());
        }
        if self.positive == self.negative
            || self.positive == self.neutral
            || self.negative == self.neutral
        {
            return Err("polarity mapping is not injective".into());
        }
        Ok(())
    }

    pub fn polarity_word(&self, p: Polarity) -> &str {
        match p {
            Polarity::Positive => &self.positive,
            Polarity::Negative => &self.negative,
            Polarity::Neutral => &self.neutral,
        }
    }

    /// Exact match first, then ASCII case-insensitive.
    pub fn polarity_from_word(&self, word: &str) -> Option<Polarity> {
        let pairs = [
            (&self.positive, Polarity::Positive),
            (&self.negative, Polarity::Negative),
            (&self.neutral, Polarity::Neutral),
        ];
        pairs
            .iter()
            .find(|(w, _)| w.as_str() == word)
            .or_else(|| pairs.iter().find(|(w, _)| w.eq_ignore_ascii_case(word)))
            .map(|(_, p)| *p)
    }

    pub fn term_word<'a>(&'a self, term: Option<&'a str>) -> &'a str {
        term.unwrap_or(&self.implicit)
    }

    pub fn term_from_word(&self, word: &str) -> Option<String> {
        if word == self.implicit {
            None
        } else {
            Some(word.to_string())
        }
    }
}

/// `"<c> is <s> because <a> is <o>"` over mapped values.
pub fn rationale(quad: &SurfaceQuad, mapping: &ElementMapping) -> String {
    rationale_from_fields(
        mapping.term_word(quad.aspect.as_deref()),
        mapping.term_word(quad.opinion.as_deref()),
        &quad.category,
        mapping.polarity_word(quad.polarity),
    )
}

fn rationale_from_fields(aspect: &str, opinion: &str, category: &str, polarity: &str) -> String {
    format!("{category} is {polarity} because {aspect} is {opinion}")
}

pub fn render_group(quad: &SurfaceQuad, mapping: &ElementMapping) -> String {
    let a = mapping.term_word(quad.aspect.as_deref());
    let o = mapping.term_word(quad.opinion.as_deref());
    let s = mapping.polarity_word(quad.polarity);
    format!(
        "{GROUP_OPEN} {a}{OPINION_PREFIX} {o}{CATEGORY_PREFIX} {c}{POLARITY_PREFIX} {s}{RATIONALE_PREFIX} {r})",
        c = quad.category,
        r = rationale_from_fields(a, o, &quad.category, s),
    )
}

/// Renders quads in order, joined by `"; "`.
pub fn render(quads: &[SurfaceQuad], mapping: &ElementMapping) -> String {
    quads
        .iter()
        .map(|q| render_group(q, mapping))
        .collect::<Vec<_>>()
        .join(GROUP_SEPARATOR)
}

/// Reasons a quad list would not survive `parse_output(render(..))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LintIssue {
    pub quad: usize,
    pub message: String,
}

impl fmt::Display for LintIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "quad {}: {}", self.quad, self.message)
    }
}

const FORBIDDEN: [&str; 6] = [
    GROUP_OPEN,
    OPINION_PREFIX,
    CATEGORY_PREFIX,
    POLARITY_PREFIX,
    RATIONALE_PREFIX,
    MARKER_SEPARATOR,
];

fn value_issues(quad: usize, name: &str, value: &str, out: &mut Vec<LintIssue>) {
    let mut push = |message: String| out.push(LintIssue { quad, message });
    if value.trim().is_empty() {
        push(format!("{name} is blank"));
    } else if value.trim() != value {
        push(format!("{name} {value:?} has surrounding whitespace"));
    }
    for f in FORBIDDEN {
        if value.contains(f) {
            push(format!("{name} {value:?} contains {f:?}"));
        }
    }
    for m in [
        MARKER_ASPECT,
        MARKER_OPINION,
        MARKER_CATEGORY,
        MARKER_POLARITY,
    ] {
        if value.contains(m) {
            push(format!("{name} {value:?} contains marker {m}"));
        }
    }
}

/// Checks that every value renders unambiguously.
pub fn lint(quads: &[SurfaceQuad], mapping: &ElementMapping) -> Vec<LintIssue> {
    let mut out = Vec::new();
    for (i, q) in quads.iter().enumerate() {
        for (name, term) in [("aspect", &q.aspect), ("opinion", &q.opinion)] {
            if let Some(t) = term {
                value_issues(i, name, t, &mut out);
                if t == &mapping.implicit {
                    out.push(LintIssue {
                        quad: i,
                        message: format!("{name} {t:?} collides with the implicit word"),
                    });
                }
            }
        }
        value_issues(i, "category", &q.category, &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedGroup {
    pub quad: SurfaceQuad,
    pub rationale: String,
    /// The rationale equals the one implied by the group's own fields.
    pub coherent: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// Index of the offending group (counting every `(aspect term:` opening).
    pub group: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedOutput {
    pub groups: Vec<ParsedGroup>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ParsedOutput {
    pub fn quads(&self) -> Vec<SurfaceQuad> {
        self.groups.iter().map(|g| g.quad.clone()).collect()
    }

    pub fn all_coherent(&self) -> bool {
        self.groups.iter().all(|g| g.coherent)
    }
}

fn split_field<'a>(rest: &'a str, prefix: &str) -> Option<(&'a str, &'a str)> {
    rest.find(prefix)
        .map(|i| (rest[..i].trim(), &rest[i + prefix.len()..]))
}

fn parse_group(
    body: &str,
    mapping: &ElementMapping,
) -> Result<(SurfaceQuad, String, bool), String> {
    let body = body.trim_end();
    let body = body.strip_suffix(';').unwrap_or(body).trim_end();
    let body = body
        .strip_suffix(')')
        .ok_or_else(|| "group is not closed by ')'".to_string())?;
    let (aspect, rest) = split_field(body, OPINION_PREFIX).ok_or("missing opinion term")?;
    let (opinion, rest) = split_field(rest, CATEGORY_PREFIX).ok_or("missing aspect category")?;
    let (category, rest) =
        split_field(rest, POLARITY_PREFIX).ok_or("missing sentiment polarity")?;
    let (polarity_word, rest) = split_field(rest, RATIONALE_PREFIX).ok_or("missing rationale")?;
    let rationale = rest.trim();
    for (name, v) in [
        ("aspect term", aspect),
        ("opinion term", opinion),
        ("aspect category", category),
    ] {
        if v.is_empty() {
            return Err(format!("empty {name}"));
        }
    }
    let polarity = mapping
        .polarity_from_word(polarity_word)
        .ok_or_else(|| format!("unknown sentiment polarity {polarity_word:?}"))?;
    let coherent = rationale == rationale_from_fields(aspect, opinion, category, polarity_word);
    let quad = SurfaceQuad {
        aspect: mapping.term_from_word(aspect),
        opinion: mapping.term_from_word(opinion),
        category: category.to_string(),
        polarity,
    };
    Ok((quad, rationale.to_string(), coherent))
}

/// Extracts every well-formed group from arbitrary text. Never fails:
/// malformed groups, stray text and out-of-vocabulary labels become
/// diagnostics.
pub fn parse_output(
    text: &str,
    mapping: &ElementMapping,
    vocab: Option<&Vocabulary>,
) -> ParsedOutput {
    let mut out = ParsedOutput::default();
    let starts: Vec<usize> = text.match_indices(GROUP_OPEN).map(|(i, _)| i).collect();
    let lead = &text[..starts.first().copied().unwrap_or(text.len())];
    if !lead.trim().is_empty() {
        out.diagnostics.push(Diagnostic {
            group: None,
            message: format!("unexpected text {:?} outside groups", lead.trim()),
        });
    }
    for (g, &start) in starts.iter().enumerate() {
        let end = starts.get(g + 1).copied().unwrap_or(text.len());
        let body = &text[start + GROUP_OPEN.len()..end];
        match parse_group(body, mapping) {
            Ok((quad, rationale, coherent)) => {
                if let Some(v) = vocab {
                    if !v.categories.contains(&quad.category) {
                        out.diagnostics.push(Diagnostic {
                            group: Some(g),
                            message: format!("category {:?} not in vocabulary", quad.category),
                        });
                    }
                    if !v.polarities.contains(quad.polarity) {
                        out.diagnostics.push(Diagnostic {
                            group: Some(g),
                            message: format!("polarity {} not in vocabulary", quad.polarity),
                        });
                    }
                }
                out.groups.push(ParsedGroup {
                    quad,
                    rationale,
                    coherent,
                });
            }
            Err(message) => out.diagnostics.push(Diagnostic {
                group: Some(g),
                message,
            }),
        }
    }
    out
}

/// Baseline target `[A] a [O] o [C] c [S] s`, groups joined by ` [SSEP] `.
pub fn render_marker_style(quads: &[SurfaceQuad], mapping: &ElementMapping) -> String {
    quads
        .iter()
        .map(|q| {
            format!(
                "{MARKER_ASPECT} {} {MARKER_OPINION} {} {MARKER_CATEGORY} {} {MARKER_POLARITY} {}",
                mapping.term_word(q.aspect.as_deref()),
                mapping.term_word(q.opinion.as_deref()),
                q.category,
                mapping.polarity_word(q.polarity)
            )
        })
        .collect::<Vec<_>>()
        .join(MARKER_SEPARATOR)
}

/// Inverse of [`render_marker_style`]; strict, the first bad group fails.
pub fn parse_marker_style(
    text: &str,
    mapping: &ElementMapping,
) -> Result<Vec<SurfaceQuad>, String> {
    text.split(MARKER_SEPARATOR)
        .enumerate()
        .map(|(i, group)| {
            let err = |m: &str| format!("group {i}: {m}");
            let rest = group
                .strip_prefix(MARKER_ASPECT)
                .ok_or_else(|| err("missing [A]"))?;
            let (a, rest) = split_field(rest, &format!(" {MARKER_OPINION} "))
                .ok_or_else(|| err("missing [O]"))?;
            let (o, rest) = split_field(rest, &format!(" {MARKER_CATEGORY} "))
                .ok_or_else(|| err("missing [C]"))?;
            let (c, s) = split_field(rest, &format!(" {MARKER_POLARITY} "))
                .ok_or_else(|| err("missing [S]"))?;
            let polarity = mapping
                .polarity_from_word(s.trim())
                .ok_or_else(|| err(&format!("unknown polarity {:?}", s.trim())))?;
            Ok(SurfaceQuad {
                aspect: mapping.term_from_word(a),
                opinion: mapping.term_from_word(o),
                category: c.to_string(),
                polarity,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    pub warnings: Vec<String>,
}

/// Instruction prompt with the sentence text substituted.
pub fn build_prompt(sentence: &Sentence) -> Prompt {
    let mut warnings = Vec::new();
    if sentence.text.trim().is_empty() {
        warnings.push(format!("sentence {:?} has empty text", sentence.id));
    }
    let text = format!(
        "{}\n{PROMPT_FORMAT_HEADER}\n{PROMPT_FORMAT_LINE}",
        PROMPT_INSTRUCTION.replace("{Input Text}", &sentence.text)
    );
    Prompt { text, warnings }
}
