//! Bracketed constituency trees, tree distance and POS-pattern span search.
//!
//! Trees are stored in an arena. Pre-terminals are the leaves: each one
//! carries its POS tag as label and the index of the token it covers, so
//! `(NP (DT the) (NN food))` has three nodes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::{Sentence, TokenSpan};

#[derive(Debug, thiserror::Error)]
pub enum SyntaxError {
    #[error("parse error at {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("span {span} out of range for {len} tokens")]
    SpanOutOfRange { span: TokenSpan, len: usize },
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<SyntaxError>,
    },
    #[error("tree leaves {leaves:?} do not match sentence tokens {tokens:?}")]
    Misaligned {
        leaves: Vec<String>,
        tokens: Vec<String>,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    Internal(Vec<NodeId>),
    Leaf { token: usize, word: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub label: String,
    pub parent: Option<NodeId>,
    pub kind: NodeKind,
    pub span: TokenSpan,
    pub depth: usize,
}

impl Node {
    pub fn children(&self) -> &[NodeId] {
        match &self.kind {
            NodeKind::Internal(c) => c,
            NodeKind::Leaf { .. } => &[],
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstituentTree {
    nodes: Vec<Node>,
    root: NodeId,
    leaves: Vec<NodeId>,
}

/// A token range matching a POS pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanCandidate {
    pub span: TokenSpan,
    pub pos: Vec<String>,
    /// Lowest node covering the span.
    pub node: NodeId,
}

/// Coarse POS class used for pattern equivalence: `NN*`, `JJ*`, `VB*` and
/// `RB*` collapse to NOUN/ADJ/VERB/ADV, other tags compare exactly.
pub fn coarse_tag(tag: &str) -> &str {
    if tag.starts_with("NN") {
        "NOUN"
    } else if tag.starts_with("JJ") {
        "ADJ"
    } else if tag.starts_with("VB") {
        "VERB"
    } else if tag.starts_with("RB") {
        "ADV"
    } else {
        tag
    }
}

pub fn tags_equivalent(a: &str, b: &str) -> bool {
    coarse_tag(a) == coarse_tag(b)
}

fn unescape_word(w: &str) -> String {
    match w {
        "-LRB-" => "(".to_string(),
        "-RRB-" => ")".to_string(),
        other => other.to_string(),
    }
}

fn escape_word(w: &str) -> String {
    w.replace('(', "-LRB-").replace(')', "-RRB-")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lex<'a> {
    Open(usize),
    Close(usize),
    Atom(usize, &'a str),
}

fn lex<'a>(text: &'a str) -> Vec<Lex<'a>> {
    let mut out = Vec::new();
    let mut atom_start: Option<usize> = None;
    let flush = |out: &mut Vec<Lex<'a>>, start: &mut Option<usize>, end: usize| {
        if let Some(s) = start.take() {
            out.push(Lex::Atom(s, &text[s..end]));
        }
    };
    for (i, c) in text.char_indices() {
        match c {
            '(' => {
                flush(&mut out, &mut atom_start, i);
                out.push(Lex::Open(i));
            }
            ')' => {
                flush(&mut out, &mut atom_start, i);
                out.push(Lex::Close(i));
            }
            c if c.is_whitespace() => flush(&mut out, &mut atom_start, i),
            _ => {
                if atom_start.is_none() {
                    atom_start = Some(i);
                }
            }
        }
    }
    flush(&mut out, &mut atom_start, text.len());
    out
}

struct Builder<'a> {
    lexemes: Vec<Lex<'a>>,
    pos: usize,
    end: usize,
    nodes: Vec<Node>,
    leaves: Vec<NodeId>,
}

impl<'a> Builder<'a> {
    fn err(&self, position: usize, message: impl Into<String>) -> SyntaxError {
        SyntaxError::Parse {
            position,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<Lex<'a>> {
        self.lexemes.get(self.pos).copied()
    }

    fn node(&mut self, parent: Option<NodeId>, depth: usize) -> Result<NodeId, SyntaxError> {
        match self.peek() {
            Some(Lex::Open(_)) => {}
            Some(Lex::Atom(i, a)) => return Err(self.err(i, format!("stray token {a:?}"))),
            Some(Lex::Close(i)) => return Err(self.err(i, "unexpected ')'")),
            None => return Err(self.err(self.end, "unbalanced parentheses: expected '('")),
        }
        self.pos += 1;
        let label = match self.peek() {
            Some(Lex::Atom(_, a)) => {
                self.pos += 1;
                a.to_string()
            }
            _ => String::new(),
        };
        let id = self.nodes.len();
        self.nodes.push(Node {
            label,
            parent,
            kind: NodeKind::Internal(Vec::new()),
            span: TokenSpan::new(self.leaves.len(), self.leaves.len()),
            depth,
        });
        match self.peek() {
            Some(Lex::Atom(_, word)) => {
                self.pos += 1;
                let token = self.leaves.len();
                self.leaves.push(id);
                let n = &mut self.nodes[id];
                n.kind = NodeKind::Leaf {
                    token,
                    word: unescape_word(word),
                };
                n.span = TokenSpan::new(token, token + 1);
                match self.peek() {
                    Some(Lex::Close(_)) => self.pos += 1,
                    Some(Lex::Atom(i, a)) => {
                        return Err(self.err(i, format!("stray token {a:?} after leaf word")))
                    }
                    Some(Lex::Open(i)) => {
                        return Err(self.err(i, "constituent mixes a word with subtrees"))
                    }
                    None => return Err(self.err(self.end, "unbalanced parentheses: missing ')'")),
                }
            }
            Some(Lex::Close(i)) => return Err(self.err(i, "empty constituent")),
            None => return Err(self.err(self.end, "unbalanced parentheses: missing ')'")),
            Some(Lex::Open(_)) => {
                let mut children = Vec::new();
                loop {
                    match self.peek() {
                        Some(Lex::Open(_)) => children.push(self.node(Some(id), depth + 1)?),
                        Some(Lex::Close(_)) => {
                            self.pos += 1;
                            break;
                        }
                        Some(Lex::Atom(i, a)) => {
                            return Err(self.err(i, format!("stray token {a:?} among subtrees")))
                        }
                        None => {
                            return Err(self.err(self.end, "unbalanced parentheses: missing ')'"))
                        }
                    }
                }
                let start = self.nodes[children[0]].span.start;
                let end = self.nodes[*children.last().expect("non-empty")].span.end;
                let n = &mut self.nodes[id];
                n.span = TokenSpan::new(start, end);
                n.kind = NodeKind::Internal(children);
            }
        }
        Ok(id)
    }
}

/// Parses one labeled bracketing such as
/// `(S (NP (DT the) (NN food)) (VP (VBD was) (JJ great)))`.
pub fn parse_bracketed(text: &str) -> Result<ConstituentTree, SyntaxError> {
    let mut b = Builder {
        lexemes: lex(text),
        pos: 0,
        end: text.len(),
        nodes: Vec::new(),
        leaves: Vec::new(),
    };
    if b.lexemes.is_empty() {
        return Err(b.err(0, "empty input"));
    }
    let root = b.node(None, 0)?;
    match b.peek() {
        None => {}
        Some(Lex::Close(i)) => return Err(b.err(i, "unbalanced parentheses: extra ')'")),
        Some(Lex::Open(i)) | Some(Lex::Atom(i, _)) => {
            return Err(b.err(i, "trailing content after tree"))
        }
    }
    Ok(ConstituentTree {
        nodes: b.nodes,
        root,
        leaves: b.leaves,
    })
}

/// Reads a parse file: one bracketed tree per non-empty line.
pub fn load_parse_file(path: &Path) -> Result<Vec<ConstituentTree>, SyntaxError> {
    let text = fs::read_to_string(path).map_err(|source| SyntaxError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_bracketed(l).map_err(|e| SyntaxError::Line {
                line: i + 1,
                source: Box::new(e),
            })
        })
        .collect()
}

impl ConstituentTree {
    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Number of tokens.
    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn leaf(&self, token: usize) -> Option<NodeId> {
        self.leaves.get(token).copied()
    }

    pub fn words(&self) -> Vec<&str> {
        self.leaves
            .iter()
            .map(|&id| match &self.nodes[id].kind {
                NodeKind::Leaf { word, .. } => word.as_str(),
                NodeKind::Internal(_) => unreachable!("leaves are leaf nodes"),
            })
            .collect()
    }

    pub fn pos_tags(&self) -> Vec<&str> {
        self.leaves
            .iter()
            .map(|&id| self.nodes[id].label.as_str())
            .collect()
    }

    /// Checks that leaves, read left to right, equal the sentence tokens.
    pub fn check_aligned(&self, sentence: &Sentence) -> Result<(), SyntaxError> {
        let leaves = self.words();
        let tokens = sentence.words();
        if leaves == tokens {
            Ok(())
        } else {
            Err(SyntaxError::Misaligned {
                leaves: leaves.into_iter().map(str::to_string).collect(),
                tokens: tokens.into_iter().map(str::to_string).collect(),
            })
        }
    }

    /// Canonical single-line bracketing with `-LRB-`/`-RRB-` escapes.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        self.write_node(self.root, &mut out);
        out
    }

    fn write_node(&self, id: NodeId, out: &mut String) {
        let n = &self.nodes[id];
        out.push('(');
        out.push_str(&n.label);
        match &n.kind {
            NodeKind::Leaf { word, .. } => {
                let _ = write!(out, " {}", escape_word(word));
            }
            NodeKind::Internal(children) => {
                for (i, &c) in children.iter().enumerate() {
                    if i > 0 || !n.label.is_empty() {
                        out.push(' ');
                    }
                    self.write_node(c, out);
                }
            }
        }
        out.push(')');
    }

    fn check_span(&self, span: TokenSpan) -> Result<(), SyntaxError> {
        if span.is_empty() || span.end > self.len() {
            Err(SyntaxError::SpanOutOfRange {
                span,
                len: self.len(),
            })
        } else {
            Ok(())
        }
    }

    /// Smallest node whose span contains `span`.
    pub fn covering_node(&self, span: TokenSpan) -> Result<NodeId, SyntaxError> {
        self.check_span(span)?;
        let mut id = self.leaves[span.start];
        while self.nodes[id].span.end < span.end {
            id = self.nodes[id].parent.expect("root covers every span");
        }
        Ok(id)
    }

    /// Number of edges on the path between two nodes.
    pub fn node_distance(&self, a: NodeId, b: NodeId) -> usize {
        let (mut x, mut y) = (a, b);
        let mut dist = 0;
        while self.nodes[x].depth > self.nodes[y].depth {
            x = self.nodes[x].parent.expect("deeper node has a parent");
            dist += 1;
        }
        while self.nodes[y].depth > self.nodes[x].depth {
            y = self.nodes[y].parent.expect("deeper node has a parent");
            dist += 1;
        }
        while x != y {
            x = self.nodes[x].parent.expect("common ancestor exists");
            y = self.nodes[y].parent.expect("common ancestor exists");
            dist += 2;
        }
        dist
    }

    /// Path length between the lowest nodes covering each span.
    pub fn tree_distance(&self, a: TokenSpan, b: TokenSpan) -> Result<usize, SyntaxError> {
        Ok(self.node_distance(self.covering_node(a)?, self.covering_node(b)?))
    }

    /// All windows whose POS tags match `pattern` under [`tags_equivalent`],
    /// ordered by start index, never returning `exclude`.
    pub fn find_pos_matches<S: AsRef<str>>(
        &self,
        pattern: &[S],
        exclude: Option<TokenSpan>,
    ) -> Vec<SpanCandidate> {
        let tags = self.pos_tags();
        let width = pattern.len();
        if width == 0 || width > tags.len() {
            return Vec::new();
        }
        (0..=tags.len() - width)
            .filter(|&s| {
                pattern
                    .iter()
                    .zip(&tags[s..s + width])
                    .all(|(p, t)| tags_equivalent(p.as_ref(), t))
            })
            .map(|s| TokenSpan::new(s, s + width))
            .filter(|span| Some(*span) != exclude)
            .map(|span| SpanCandidate {
                pos: tags[span.start..span.end]
                    .iter()
                    .map(|t| t.to_string())
                    .collect(),
                node: self.covering_node(span).expect("window is in range"),
                span,
            })
            .collect()
    }

    /// Up to `k` pattern matches closest to `gold` in tree distance, ties
    /// broken by linear distance between start tokens, then start index.
    pub fn nearest_spans<S: AsRef<str>>(
        &self,
        gold: TokenSpan,
        pattern: &[S],
        k: usize,
    ) -> Result<Vec<SpanCandidate>, SyntaxError> {
        let gold_node = self.covering_node(gold)?;
        let mut matches: Vec<(usize, usize, SpanCandidate)> = self
            .find_pos_matches(pattern, Some(gold))
            .into_iter()
            .map(|c| {
                let d = self.node_distance(gold_node, c.node);
                let linear = c.span.start.abs_diff(gold.start);
                (d, linear, c)
            })
            .collect();
        matches.sort_by_key(|(d, linear, c)| (*d, *linear, c.span.start));
        Ok(matches.into_iter().take(k).map(|(_, _, c)| c).collect())
    }

    /// Spans of internal nodes whose label satisfies `pred`, in preorder.
    pub fn constituent_spans(&self, pred: impl Fn(&str) -> bool) -> Vec<TokenSpan> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id];
            if !n.is_leaf() && pred(&n.label) {
                out.push(n.span);
            }
            stack.extend(n.children().iter().rev());
        }
        out
    }
}
