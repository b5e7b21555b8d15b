//! Confusable candidate generation and listwise sample composition.
//!
//! Per gold quad, single-element candidates replace one element: spans with
//! the same POS pattern nearest in the parse tree, categories nearest in
//! embedding space, every other polarity. Mixed candidates pair a candidate
//! opinion with its most similar polarity, and a candidate category with a
//! randomly drawn polarity.
//!
//! A listwise sample holds the gold rendering plus `n` negatives. Slot `i`
//! draws from family `FAMILIES[i % 6]` and perturbs quad `i % quads`
//! (moving on to the next quad when that one has nothing left). Every
//! negative is the whole output re-rendered, so rationales stay in sync.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    AnnotatedExample, Element, Polarity, Sentence, SurfaceQuad, Term, TokenSpan, Vocabulary,
};
use crate::scalar::Scalar;
use crate::semantics::EmbeddingTable;
use crate::syntax::{ConstituentTree, SyntaxError};
use crate::template::{self, ElementMapping};

#[derive(Debug, thiserror::Error)]
pub enum ConfuseError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("example {id}: {source}")]
    Tree {
        id: String,
        #[source]
        source: SyntaxError,
    },
    #[error("example {id}: no quad {quad}")]
    QuadOutOfRange { id: String, quad: usize },
    #[error("example {id} quad {quad}: no alternative polarity, mixed candidates unconstructible")]
    EmptyPolarities { id: String, quad: usize },
    #[error("example {id}: family {family} exhausted at slot {slot}")]
    Exhausted {
        id: String,
        family: Family,
        slot: usize,
    },
    #[error("example {id}: {count} quads but {sets} candidate sets")]
    SetCount {
        id: String,
        count: usize,
        sets: usize,
    },
    #[error("example {id}: gold quads do not render cleanly: {reason}")]
    Unrenderable { id: String, reason: String },
    #[error("{examples} examples but {trees} parse trees")]
    TreeCount { examples: usize, trees: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub k_a: usize,
    pub k_o: usize,
    pub k_c: usize,
    /// Polarities paired with each candidate opinion.
    pub k_s_mix: usize,
    /// Negatives per sample.
    pub n: usize,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            k_a: 3,
            k_o: 3,
            k_c: 3,
            k_s_mix: 1,
            n: 6,
            seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), ConfuseError> {
        if self.n < 4 {
            return Err(ConfuseError::Config(format!(
                "n = {} cannot cover all four elements, need n >= 4",
                self.n
            )));
        }
        for (name, k) in [
            ("k_a", self.k_a),
            ("k_o", self.k_o),
            ("k_c", self.k_c),
            ("k_s_mix", self.k_s_mix),
        ] {
            if k == 0 {
                return Err(ConfuseError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Generator seed for one example, independent of processing order.
    pub fn example_seed(&self, id: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(id.as_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// Candidate families in slot order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Aspect,
    Opinion,
    Category,
    Polarity,
    OpinionPolarity,
    CategoryPolarity,
}

pub const FAMILIES: [Family; 6] = [
    Family::Aspect,
    Family::Opinion,
    Family::Category,
    Family::Polarity,
    Family::OpinionPolarity,
    Family::CategoryPolarity,
];

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Aspect => "aspect",
            Family::Opinion => "opinion",
            Family::Category => "category",
            Family::Polarity => "polarity",
            Family::OpinionPolarity => "opinion_polarity",
            Family::CategoryPolarity => "category_polarity",
        }
    }

    pub fn elements(&self) -> &'static [Element] {
        match self {
            Family::Aspect => &[Element::Aspect],
            Family::Opinion => &[Element::Opinion],
            Family::Category => &[Element::Category],
            Family::Polarity => &[Element::Polarity],
            Family::OpinionPolarity => &[Element::Opinion, Element::Polarity],
            Family::CategoryPolarity => &[Element::Category, Element::Polarity],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A replacement span taken from the sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanChoice {
    pub span: TokenSpan,
    pub text: String,
}

/// Replacement values; absent fields keep the gold value.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replacements {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aspect: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub opinion: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polarity: Option<Polarity>,
}

/// How one negative differs from gold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perturbation {
    /// Index of the perturbed gold quad.
    pub quad: usize,
    pub family: Family,
    pub altered: Vec<Element>,
    pub replacements: Replacements,
}

impl Perturbation {
    /// Gold quads with this perturbation applied.
    pub fn apply(&self, gold: &[SurfaceQuad]) -> Vec<SurfaceQuad> {
        let mut out = gold.to_vec();
        if let Some(q) = out.get_mut(self.quad) {
            let r = &self.replacements;
            if let Some(a) = &r.aspect {
                q.aspect = Some(a.clone());
            }
            if let Some(o) = &r.opinion {
                q.opinion = Some(o.clone());
            }
            if let Some(c) = &r.category {
                q.category = c.clone();
            }
            if let Some(p) = r.polarity {
                q.polarity = p;
            }
        }
        out
    }

    /// Problems with the perturbation relative to `gold`; empty when valid.
    pub fn check(&self, gold: &[SurfaceQuad]) -> Vec<String> {
        let mut out = Vec::new();
        let Some(g) = gold.get(self.quad) else {
            return vec![format!("quad {} out of range", self.quad)];
        };
        if self.altered.is_empty() {
            out.push("no element altered".into());
        }
        let r = &self.replacements;
        let present = [
            (Element::Aspect, r.aspect.is_some()),
            (Element::Opinion, r.opinion.is_some()),
            (Element::Category, r.category.is_some()),
            (Element::Polarity, r.polarity.is_some()),
        ];
        for (e, has) in present {
            if has != self.altered.contains(&e) {
                out.push(format!("{e}: altered list and replacements disagree"));
            }
        }
        if r.aspect.is_some() && r.aspect == g.aspect {
            out.push("aspect replacement equals gold".into());
        }
        if r.opinion.is_some() && r.opinion == g.opinion {
            out.push("opinion replacement equals gold".into());
        }
        if r.category.as_ref() == Some(&g.category) {
            out.push("category replacement equals gold".into());
        }
        if r.polarity == Some(g.polarity) {
            out.push("polarity replacement equals gold".into());
        }
        out
    }
}

/// Candidates for one gold quad, each list best first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub quad: usize,
    pub c_a: Vec<SpanChoice>,
    pub c_o: Vec<SpanChoice>,
    pub c_c: Vec<String>,
    pub c_s: Vec<Polarity>,
    pub c_os: Vec<(SpanChoice, Polarity)>,
    pub c_cs: Vec<(String, Polarity)>,
    pub warnings: Vec<String>,
}

impl CandidateSet {
    pub fn family_len(&self, family: Family) -> usize {
        match family {
            Family::Aspect => self.c_a.len(),
            Family::Opinion => self.c_o.len(),
            Family::Category => self.c_c.len(),
            Family::Polarity => self.c_s.len(),
            Family::OpinionPolarity => self.c_os.len(),
            Family::CategoryPolarity => self.c_cs.len(),
        }
    }

    /// The `rank`-th candidate of `family` as a perturbation.
    pub fn perturbation(&self, family: Family, rank: usize) -> Option<Perturbation> {
        let mut r = Replacements::default();
        match family {
            Family::Aspect => r.aspect = Some(self.c_a.get(rank)?.text.clone()),
            Family::Opinion => r.opinion = Some(self.c_o.get(rank)?.text.clone()),
            Family::Category => r.category = Some(self.c_c.get(rank)?.clone()),
            Family::Polarity => r.polarity = Some(*self.c_s.get(rank)?),
            Family::OpinionPolarity => {
                let (o, s) = self.c_os.get(rank)?;
                r.opinion = Some(o.text.clone());
                r.polarity = Some(*s);
            }
            Family::CategoryPolarity => {
                let (c, s) = self.c_cs.get(rank)?;
                r.category = Some(c.clone());
                r.polarity = Some(*s);
            }
        }
        Some(Perturbation {
            quad: self.quad,
            family,
            altered: family.elements().to_vec(),
            replacements: r,
        })
    }

    /// Violations of the candidate-set invariants against the gold quad.
    pub fn check(&self, gold: &SurfaceQuad, vocab: &Vocabulary) -> Vec<String> {
        let mut out = Vec::new();
        let aspect = gold.aspect.as_deref();
        let opinion = gold.opinion.as_deref();
        for c in &self.c_a {
            if Some(c.text.as_str()) == aspect {
                out.push(format!("C_a contains gold aspect {:?}", c.text));
            }
        }
        for c in self.c_o.iter().chain(self.c_os.iter().map(|(o, _)| o)) {
            if Some(c.text.as_str()) == opinion {
                out.push(format!("opinion candidate equals gold {:?}", c.text));
            }
        }
        for c in self.c_c.iter().chain(self.c_cs.iter().map(|(c, _)| c)) {
            if c == &gold.category {
                out.push(format!("category candidate equals gold {c:?}"));
            }
        }
        for s in &self.c_s {
            if *s == gold.polarity || !vocab.polarities.contains(*s) {
                out.push(format!("C_s contains {s}"));
            }
        }
        let mixed = self
            .c_os
            .iter()
            .map(|(_, s)| s)
            .chain(self.c_cs.iter().map(|(_, s)| s));
        for s in mixed {
            if !self.c_s.contains(s) {
                out.push(format!("mixed candidate polarity {s} not in C_s"));
            }
        }
        out
    }
}

fn is_noun(tag: &str) -> bool {
    tag.starts_with("NN")
}

fn is_modifier(tag: &str) -> bool {
    tag.starts_with("JJ") || tag.starts_with("RB")
}

/// Table key for a phrase: exact, then lowercased.
fn embedding_key<T: Scalar>(emb: &EmbeddingTable<T>, phrase: &str) -> Option<String> {
    if emb.contains(phrase) {
        return Some(phrase.to_string());
    }
    let lower = phrase.to_lowercase();
    emb.contains(&lower).then_some(lower)
}

struct SpanContext<'a, T> {
    sentence: &'a Sentence,
    tree: &'a ConstituentTree,
    emb: &'a EmbeddingTable<T>,
    mapping: &'a ElementMapping,
}

impl<T: Scalar> SpanContext<'_, T> {
    fn usable(&self, text: &str, gold: Option<&str>, seen: &mut HashSet<String>) -> bool {
        let norm = text.split_whitespace().collect::<Vec<_>>().join(" ");
        Some(text) != gold
            && text != self.mapping.implicit
            && !text.trim().is_empty()
            && seen.insert(norm)
    }

    /// Pattern matches nearest to an explicit gold span.
    fn syntactic(&self, gold: TokenSpan, k: usize) -> Result<Vec<SpanChoice>, SyntaxError> {
        let tags = self.tree.pos_tags();
        let pattern = &tags[gold.start..gold.end];
        let gold_text = self.sentence.span_text(gold);
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for c in self.tree.nearest_spans(gold, pattern, usize::MAX)? {
            let Some(text) = self.sentence.span_text(c.span) else {
                continue;
            };
            if self.usable(&text, gold_text.as_deref(), &mut seen) {
                out.push(SpanChoice { span: c.span, text });
                if out.len() == k {
                    break;
                }
            }
        }
        Ok(out)
    }

    /// Phrase spans ranked by similarity to `reference`, for implicit terms.
    /// Spans containing a token accepted by `head` qualify, as do the
    /// constituents labelled in `labels`.
    fn semantic(
        &self,
        labels: &[&str],
        head: fn(&str) -> bool,
        reference: &[Option<&str>],
        k: usize,
        warnings: &mut Vec<String>,
    ) -> Vec<SpanChoice> {
        let tags = self.tree.pos_tags();
        let mut spans: Vec<TokenSpan> = self
            .tree
            .constituent_spans(|l| labels.contains(&l))
            .into_iter()
            .filter(|s| labels[0] != "NP" || tags[s.start..s.end].iter().any(|t| head(t)))
            .collect();
        spans.extend(
            (0..tags.len())
                .filter(|&i| head(tags[i]))
                .map(|i| TokenSpan::new(i, i + 1)),
        );
        let mut seen = HashSet::new();
        let mut pool: Vec<SpanChoice> = Vec::new();
        for span in spans {
            if let Some(text) = self.sentence.span_text(span) {
                if self.usable(&text, None, &mut seen) {
                    pool.push(SpanChoice { span, text });
                }
            }
        }
        let query = reference
            .iter()
            .flatten()
            .find_map(|r| embedding_key(self.emb, r));
        let Some(query) = query else {
            warnings.push(
                "no embedded reference for implicit term; spans kept in sentence order".into(),
            );
            pool.truncate(k);
            return pool;
        };
        let keyed: Vec<(String, &SpanChoice)> = pool
            .iter()
            .filter_map(|c| embedding_key(self.emb, &c.text).map(|key| (key, c)))
            .collect();
        if keyed.len() < pool.len() {
            warnings.push(format!(
                "{} candidate spans lack embeddings and were skipped",
                pool.len() - keyed.len()
            ));
        }
        let keys: Vec<&str> = keyed.iter().map(|(k, _)| k.as_str()).collect();
        let top = self
            .emb
            .top_k_similar(&query, &keys, usize::MAX, &HashSet::new())
            .expect("query key is in the table");
        let mut out = Vec::new();
        for (key, _) in top.hits {
            if let Some((_, c)) = keyed.iter().find(|(k, c)| *k == key && !out.contains(*c)) {
                out.push((*c).clone());
                if out.len() == k {
                    break;
                }
            }
        }
        out
    }
}

/// Single-element candidates `C_a`, `C_o`, `C_c` and `C_s` for one quad.
pub fn single_element_candidates<T: Scalar>(
    example: &AnnotatedExample,
    quad: usize,
    tree: &ConstituentTree,
    emb: &EmbeddingTable<T>,
    vocab: &Vocabulary,
    mapping: &ElementMapping,
    cfg: &GenerationConfig,
) -> Result<CandidateSet, ConfuseError> {
    let id = &example.sentence.id;
    let q = example
        .quads
        .get(quad)
        .ok_or_else(|| ConfuseError::QuadOutOfRange {
            id: id.clone(),
            quad,
        })?;
    let tree_err = |source| ConfuseError::Tree {
        id: id.clone(),
        source,
    };
    tree.check_aligned(&example.sentence).map_err(tree_err)?;
    let surface = q.surface(&example.sentence);
    let ctx = SpanContext {
        sentence: &example.sentence,
        tree,
        emb,
        mapping,
    };
    let mut set = CandidateSet {
        quad,
        ..CandidateSet::default()
    };

    set.c_a = match q.aspect {
        Term::Span(span) => ctx.syntactic(span, cfg.k_a).map_err(tree_err)?,
        Term::Implicit => ctx.semantic(
            &["NP"],
            is_noun,
            &[surface.opinion.as_deref(), Some(&q.category)],
            cfg.k_a,
            &mut set.warnings,
        ),
    };
    set.c_o = match q.opinion {
        Term::Span(span) => ctx.syntactic(span, cfg.k_o).map_err(tree_err)?,
        Term::Implicit => ctx.semantic(
            &["ADJP", "ADVP"],
            is_modifier,
            &[surface.aspect.as_deref(), Some(&q.category)],
            cfg.k_o,
            &mut set.warnings,
        ),
    };
    // Spans that are another of this quad's terms would blur which element
    // was perturbed.
    set.c_a
        .retain(|c| Some(&c.text) != surface.opinion.as_ref());
    set.c_o.retain(|c| Some(&c.text) != surface.aspect.as_ref());

    let categories = vocab.categories.as_slice();
    set.c_c = match embedding_key(emb, &q.category) {
        Some(key) => {
            let exclude: HashSet<String> = [q.category.clone(), key.clone()].into();
            let top = emb
                .top_k_similar(&key, categories, cfg.k_c, &exclude)
                .expect("query key is in the table");
            if !top.missing.is_empty() {
                set.warnings.push(format!(
                    "categories without embeddings: {}",
                    top.missing.join(", ")
                ));
            }
            top.hits.into_iter().map(|(c, _)| c).collect()
        }
        None => {
            set.warnings.push(format!(
                "no embedding for category {:?}; using list order",
                q.category
            ));
            categories
                .iter()
                .filter(|c| **c != q.category)
                .take(cfg.k_c)
                .cloned()
                .collect()
        }
    };
    set.c_s = vocab
        .polarities
        .as_slice()
        .iter()
        .copied()
        .filter(|p| *p != q.polarity)
        .collect();
    for w in &set.warnings {
        log::warn!("{id} quad {quad}: {w}");
    }
    Ok(set)
}

/// Adds `C_os` and `C_cs` to a set holding single-element candidates.
pub fn mixed_element_candidates<T: Scalar, R: rand::Rng + ?Sized>(
    partial: &CandidateSet,
    emb: &EmbeddingTable<T>,
    cfg: &GenerationConfig,
    rng: &mut R,
) -> Result<CandidateSet, String> {
    if partial.c_s.is_empty() {
        return Err("C_s is empty".into());
    }
    let mut set = partial.clone();
    set.c_os.clear();
    set.c_cs.clear();
    let labels: Vec<(String, Polarity)> = set
        .c_s
        .iter()
        .filter_map(|p| embedding_key(emb, p.as_str()).map(|k| (k, *p)))
        .collect();
    let label_keys: Vec<&str> = labels.iter().map(|(k, _)| k.as_str()).collect();
    for o in &partial.c_o {
        let ranked: Vec<Polarity> = match embedding_key(emb, &o.text) {
            Some(key) if !labels.is_empty() => emb
                .top_k_similar(&key, &label_keys, cfg.k_s_mix, &HashSet::new())
                .expect("query key is in the table")
                .hits
                .into_iter()
                .filter_map(|(k, _)| labels.iter().find(|(l, _)| *l == k).map(|(_, p)| *p))
                .collect(),
            _ => {
                set.warnings.push(format!(
                    "no similarity for opinion {:?}; paired with {}",
                    o.text, set.c_s[0]
                ));
                vec![set.c_s[0]]
            }
        };
        set.c_os.extend(ranked.into_iter().map(|p| (o.clone(), p)));
    }
    for c in &partial.c_c {
        let s = *set.c_s.choose(rng).expect("C_s is non-empty");
        set.c_cs.push((c.clone(), s));
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListwiseSample {
    pub id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: Vec<String>,
    pub provenance: Vec<Perturbation>,
    /// Generator seed used for this example.
    pub seed: u64,
    /// One-hot preference over `[chosen, rejected..]`.
    pub target: Vec<f64>,
}

impl ListwiseSample {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("sample serializes")
    }
}

fn canonical(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Builds the sample from per-quad candidate sets (one per gold quad).
pub fn compose_listwise(
    example: &AnnotatedExample,
    sets: &[CandidateSet],
    mapping: &ElementMapping,
    cfg: &GenerationConfig,
    seed: u64,
) -> Result<ListwiseSample, ConfuseError> {
    cfg.validate()?;
    let id = &example.sentence.id;
    let gold = example.surface_quads();
    if sets.len() != gold.len() || gold.is_empty() {
        return Err(ConfuseError::SetCount {
            id: id.clone(),
            count: gold.len(),
            sets: sets.len(),
        });
    }
    if let Some(issue) = template::lint(&gold, mapping).first() {
        return Err(ConfuseError::Unrenderable {
            id: id.clone(),
            reason: issue.to_string(),
        });
    }
    let chosen = template::render(&gold, mapping);
    let mut seen: HashSet<String> = [canonical(&chosen)].into();
    let gold_set: HashSet<&SurfaceQuad> = gold.iter().collect();
    let mut rejected = Vec::with_capacity(cfg.n);
    let mut provenance = Vec::with_capacity(cfg.n);

    for slot in 0..cfg.n {
        let family = FAMILIES[slot % FAMILIES.len()];
        let mut found = None;
        'quads: for offset in 0..gold.len() {
            let set = &sets[(slot + offset) % gold.len()];
            for rank in 0..set.family_len(family) {
                let p = set.perturbation(family, rank).expect("rank in range");
                if !p.check(&gold).is_empty() {
                    continue;
                }
                let quads = p.apply(&gold);
                // A perturbed quad equal to another gold quad is not a
                // confusion of this one.
                if gold_set.contains(&quads[p.quad]) || !template::lint(&quads, mapping).is_empty()
                {
                    continue;
                }
                let text = template::render(&quads, mapping);
                if seen.insert(canonical(&text)) {
                    found = Some((text, p));
                    break 'quads;
                }
            }
        }
        let (text, p) = found.ok_or_else(|| ConfuseError::Exhausted {
            id: id.clone(),
            family,
            slot,
        })?;
        rejected.push(text);
        provenance.push(p);
    }

    let mut target = vec![0.0; cfg.n + 1];
    target[0] = 1.0;
    Ok(ListwiseSample {
        id: id.clone(),
        prompt: template::build_prompt(&example.sentence).text,
        chosen,
        rejected,
        provenance,
        seed,
        target,
    })
}

/// Invariant violations of a sample against its gold quads; empty when
/// the sample is well formed.
pub fn audit_sample(
    sample: &ListwiseSample,
    gold: &[SurfaceQuad],
    mapping: &ElementMapping,
    n: usize,
) -> Vec<String> {
    let mut out = Vec::new();
    if sample.rejected.len() != n {
        out.push(format!("{} negatives, expected {n}", sample.rejected.len()));
    }
    if sample.provenance.len() != sample.rejected.len() {
        out.push("provenance and negatives differ in length".into());
    }
    let ones = sample.target.iter().filter(|&&t| t == 1.0).count();
    let zeros = sample.target.iter().filter(|&&t| t == 0.0).count();
    if sample.target.len() != n + 1
        || sample.target.first() != Some(&1.0)
        || ones != 1
        || zeros != n
    {
        out.push(format!("target {:?} is not one-hot on gold", sample.target));
    }
    if sample.chosen != template::render(gold, mapping) {
        out.push("chosen is not the gold rendering".into());
    }
    let mut seen = HashSet::new();
    for s in std::iter::once(&sample.chosen).chain(&sample.rejected) {
        if !seen.insert(canonical(s)) {
            out.push(format!("duplicate rendering {s:?}"));
        }
    }
    let mut covered = HashSet::new();
    for (i, (neg, p)) in sample.rejected.iter().zip(&sample.provenance).enumerate() {
        for problem in p.check(gold) {
            out.push(format!("negative {i}: {problem}"));
        }
        covered.extend(p.altered.iter().copied());
        let parsed = template::parse_output(neg, mapping, None);
        if !parsed.diagnostics.is_empty() || !parsed.all_coherent() {
            out.push(format!("negative {i} does not parse cleanly"));
        }
        if parsed.quads() != p.apply(gold) {
            out.push(format!("negative {i} does not match its perturbation"));
        }
    }
    for e in Element::ALL {
        if !covered.contains(&e) {
            out.push(format!("no negative alters {e}"));
        }
    }
    out
}

/// Candidate sets and the listwise sample for one example.
pub fn generate_for_example<T: Scalar>(
    example: &AnnotatedExample,
    tree: &ConstituentTree,
    emb: &EmbeddingTable<T>,
    vocab: &Vocabulary,
    mapping: &ElementMapping,
    cfg: &GenerationConfig,
) -> Result<(ListwiseSample, Vec<CandidateSet>), ConfuseError> {
    cfg.validate()?;
    let seed = cfg.example_seed(&example.sentence.id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sets = Vec::with_capacity(example.quads.len());
    for i in 0..example.quads.len() {
        let partial = single_element_candidates(example, i, tree, emb, vocab, mapping, cfg)?;
        let full = mixed_element_candidates(&partial, emb, cfg, &mut rng).map_err(|_| {
            ConfuseError::EmptyPolarities {
                id: example.sentence.id.clone(),
                quad: i,
            }
        })?;
        sets.push(full);
    }
    let sample = compose_listwise(example, &sets, mapping, cfg, seed)?;
    Ok((sample, sets))
}

#[derive(Debug, Default)]
pub struct CorpusGeneration {
    pub samples: Vec<ListwiseSample>,
    pub failures: Vec<ConfuseError>,
    /// Warning counts by message.
    pub warnings: BTreeMap<String, usize>,
}

impl CorpusGeneration {
    pub fn to_jsonl(&self) -> String {
        self.samples
            .iter()
            .map(|s| s.to_json_line() + "\n")
            .collect()
    }
}

/// Runs [`generate_for_example`] over a corpus with line-aligned trees.
/// Per-example failures are collected; config and alignment errors abort.
pub fn generate_corpus<T: Scalar>(
    examples: &[AnnotatedExample],
    trees: &[ConstituentTree],
    emb: &EmbeddingTable<T>,
    vocab: &Vocabulary,
    mapping: &ElementMapping,
    cfg: &GenerationConfig,
) -> Result<CorpusGeneration, ConfuseError> {
    cfg.validate()?;
    if examples.len() != trees.len() {
        return Err(ConfuseError::TreeCount {
            examples: examples.len(),
            trees: trees.len(),
        });
    }
    let mut out = CorpusGeneration::default();
    for (ex, tree) in examples.iter().zip(trees) {
        match generate_for_example(ex, tree, emb, vocab, mapping, cfg) {
            Ok((sample, sets)) => {
                for w in sets.iter().flat_map(|s| &s.warnings) {
                    *out.warnings.entry(w.clone()).or_insert(0) += 1;
                }
                out.samples.push(sample);
            }
            Err(e @ ConfuseError::Tree { .. }) => return Err(e),
            Err(e) => {
                log::warn!("{e}");
                out.failures.push(e);
            }
        }
    }
    Ok(out)
}
