#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};
use std::path::PathBuf;

use quadpref::corpus::AnnotatedExample;
use quadpref::corpus::{
    load_dataset, CategoryList, DatasetFormat, PolarityList, TokenSpan, Vocabulary,
};
use quadpref::semantics::{load_embeddings, EmbeddingTable};
use quadpref::syntax::{load_parse_file, parse_bracketed, ConstituentTree};
use rand::seq::SliceRandom;
use rand::Rng;

pub const FIXTURE_SENTENCES: usize = 50;
pub const FIXTURE_QUADS: usize = 64;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn fixture_vocab() -> Vocabulary {
    Vocabulary::new(
        CategoryList::from_file(&fixture("categories.txt")).unwrap(),
        PolarityList::default(),
    )
}

pub struct Fixture {
    pub examples: Vec<AnnotatedExample>,
    pub trees: Vec<ConstituentTree>,
    pub emb: EmbeddingTable<f64>,
    pub vocab: Vocabulary,
}

pub fn load_fixture() -> Fixture {
    let vocab = fixture_vocab();
    Fixture {
        examples: load_dataset(&fixture("corpus.jsonl"), DatasetFormat::Jsonl, Some(&vocab))
            .unwrap(),
        trees: load_parse_file(&fixture("corpus.parses")).unwrap(),
        emb: load_embeddings(&fixture("corpus.emb")).unwrap(),
        vocab,
    }
}

const PHRASE_LABELS: [&str; 6] = ["S", "NP", "VP", "PP", "ADJP", "ADVP"];
const POS_TAGS: [&str; 10] = [
    "NN", "NNS", "NNP", "JJ", "JJR", "DT", "VBD", "VBZ", "RB", "IN",
];

/// Random bracketed tree over `n` tokens, with occasional unary chains.
pub fn random_tree_text<R: Rng>(rng: &mut R, n: usize) -> String {
    fn build<R: Rng>(rng: &mut R, words: &[String], tags: &[&str]) -> String {
        if words.len() == 1 {
            let leaf = format!("({} {})", tags[0], words[0]);
            return if rng.gen_bool(0.3) {
                format!("({} {leaf})", PHRASE_LABELS.choose(rng).unwrap())
            } else {
                leaf
            };
        }
        let parts = rng.gen_range(2..=words.len().min(4));
        let mut cuts: Vec<usize> = (1..words.len()).collect();
        cuts.shuffle(rng);
        let mut cuts: Vec<usize> = cuts.into_iter().take(parts - 1).collect();
        cuts.sort();
        let mut children = Vec::new();
        let mut start = 0;
        for end in cuts.into_iter().chain([words.len()]) {
            children.push(build(rng, &words[start..end], &tags[start..end]));
            start = end;
        }
        format!(
            "({} {})",
            PHRASE_LABELS.choose(rng).unwrap(),
            children.join(" ")
        )
    }
    let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
    let tags: Vec<&str> = (0..n).map(|_| *POS_TAGS.choose(rng).unwrap()).collect();
    build(rng, &words, &tags)
}

pub fn random_tree<R: Rng>(rng: &mut R, n: usize) -> ConstituentTree {
    parse_bracketed(&random_tree_text(rng, n)).unwrap()
}

/// Deepest node whose span contains `span`, by scanning every node.
pub fn covering_node_oracle(tree: &ConstituentTree, span: TokenSpan) -> usize {
    tree.nodes()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.span.start <= span.start && span.end <= n.span.end)
        .max_by_key(|(_, n)| n.depth)
        .map(|(i, _)| i)
        .unwrap()
}

/// Edge count between two nodes by breadth-first search over the
/// undirected tree graph.
pub fn bfs_distance(tree: &ConstituentTree, a: usize, b: usize) -> usize {
    let n = tree.nodes().len();
    let mut adj = vec![Vec::new(); n];
    for (i, node) in tree.nodes().iter().enumerate() {
        if let Some(p) = node.parent {
            adj[i].push(p);
            adj[p].push(i);
        }
    }
    let mut dist = vec![usize::MAX; n];
    dist[a] = 0;
    let mut queue = VecDeque::from([a]);
    while let Some(x) = queue.pop_front() {
        if x == b {
            return dist[x];
        }
        for &y in &adj[x] {
            if dist[y] == usize::MAX {
                dist[y] = dist[x] + 1;
                queue.push_back(y);
            }
        }
    }
    unreachable!("tree is connected")
}

fn coarse_oracle(tag: &str) -> String {
    for (prefix, class) in [("NN", "NOUN"), ("JJ", "ADJ"), ("VB", "VERB"), ("RB", "ADV")] {
        if tag.starts_with(prefix) {
            return class.to_string();
        }
    }
    tag.to_string()
}

/// Every window of the tag sequence equal to `pattern` after coarsening.
pub fn window_oracle(
    tags: &[&str],
    pattern: &[&str],
    exclude: Option<TokenSpan>,
) -> Vec<TokenSpan> {
    let want: Vec<String> = pattern.iter().map(|t| coarse_oracle(t)).collect();
    let have: Vec<String> = tags.iter().map(|t| coarse_oracle(t)).collect();
    let mut out = Vec::new();
    for start in 0..have.len() {
        let end = start + want.len();
        if want.is_empty() || end > have.len() {
            continue;
        }
        if have[start..end] == want[..] && Some(TokenSpan::new(start, end)) != exclude {
            out.push(TokenSpan::new(start, end));
        }
    }
    out
}

pub fn cosine_oracle(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Exhaustive top-k: score everything, sort, cut.
pub fn top_k_oracle(
    table: &EmbeddingTable<f64>,
    query: &str,
    pool: &[String],
    k: usize,
    exclude: &HashSet<String>,
) -> Vec<String> {
    let q = table.get(query).unwrap();
    let mut seen = HashSet::new();
    let mut scored: Vec<(f64, &String)> = pool
        .iter()
        .filter(|p| !exclude.contains(*p) && seen.insert(p.as_str()))
        .filter_map(|p| table.get(p).map(|v| (cosine_oracle(q, v), p)))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
    scored.into_iter().take(k).map(|(_, p)| p.clone()).collect()
}

/// Naive loss formulas, written from the definitions without shared code.
pub mod loss_oracle {
    pub fn rewards(policy: &[f64], reference: &[f64], beta: f64) -> Vec<f64> {
        policy
            .iter()
            .zip(reference)
            .map(|(p, r)| beta * (p - r))
            .collect()
    }

    pub fn listwise(policy: &[f64], reference: &[f64], beta: f64) -> f64 {
        let s = rewards(policy, reference, beta);
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = s.iter().map(|x| (x - m).exp()).sum();
        -((s[0] - m).exp() / z).ln()
    }

    pub fn dpo(policy: &[f64], reference: &[f64], beta: f64) -> f64 {
        let s = rewards(policy, reference, beta);
        let d = s[0] - s[1];
        (1.0 + (-d).exp()).ln()
    }

    pub fn ce(policy: &[f64]) -> f64 {
        -policy[0]
    }

    pub fn hybrid(policy: &[f64], reference: &[f64], beta: f64, lambda: f64) -> f64 {
        (1.0 - lambda) * listwise(policy, reference, beta) + lambda * ce(policy)
    }

    /// Central differences of `f` at `x`.
    pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut hi = x.to_vec();
                let mut lo = x.to_vec();
                hi[i] += h;
                lo[i] -= h;
                (f(&hi) - f(&lo)) / (2.0 * h)
            })
            .collect()
    }
}
