//! Acceptance suite. Runs as a plain binary (no libtest harness) and prints
//! one PASS/FAIL line per criterion; exits non-zero if any fails.
//!
//! Set `QUADPREF_DATA_DIR` to a directory holding the public benchmark
//! splits to check dataset statistics against the published counts:
//!
//! ```text
//! rest15/{train,dev,test}.txt        legacy `####` format
//! rest16/{train,dev,test}.txt
//! acos-laptop/{train,dev,test}.tsv   ACOS tab-separated format
//! acos-rest/{train,dev,test}.tsv
//! ```
//!
//! Without it the fixture corpus counts are checked instead.

mod common;

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use quadpref::confuse::{generate_corpus, GenerationConfig};
use quadpref::corpus::{
    load_dataset, stats, DatasetFormat, DatasetStats, Element, Polarity, Sentence, SurfaceQuad,
};
use quadpref::eval::{classify_errors, score_aligned, ErrorKind, MatchMode, SpanSubtype};
use quadpref::prefloss::{
    evaluate, finite_difference_check, loss_ce, loss_dpo_pairwise, loss_hybrid, loss_listwise,
    relative_error, LossBatch, LossKind, DEFAULT_FD_STEP, DEFAULT_FD_TOLERANCE,
};
use quadpref::semantics::EmbeddingTable;
use quadpref::template::{lint, parse_output, render, ElementMapping};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{
    bfs_distance, covering_node_oracle, fixture, fixture_vocab, load_fixture, loss_oracle,
    random_tree, top_k_oracle, window_oracle, FIXTURE_QUADS, FIXTURE_SENTENCES,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        // Negated so NaN comparisons fail.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const BETAS: [f64; 4] = [0.01, 0.05, 0.1, 0.2];

fn random_batch<R: Rng>(rng: &mut R, len: usize, lambda: f64) -> LossBatch<f64> {
    let policy = (0..len).map(|_| rng.gen_range(-20.0..=0.0)).collect();
    let reference = (0..len).map(|_| rng.gen_range(-20.0..=0.0)).collect();
    LossBatch::new(policy, reference, *BETAS.choose(rng).unwrap(), lambda).unwrap()
}

fn loss_exactness() -> Outcome {
    let logp = vec![-3.25; 2];
    let b = LossBatch::new(logp.clone(), logp, 0.1, 0.5).unwrap();
    let dpo = loss_dpo_pairwise(&b).unwrap().value;
    ensure!((dpo - 2f64.ln()).abs() < 1e-9, "pairwise {dpo}");
    let logp = vec![-7.5; 7];
    let b = LossBatch::new(logp.clone(), logp, 0.05, 0.5).unwrap();
    let list = loss_listwise(&b).value;
    ensure!((list - 7f64.ln()).abs() < 1e-9, "listwise {list}");
    Ok(format!("pairwise={dpo:.12} listwise(N=6)={list:.12}"))
}

fn gradient_verification() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut checks, mut worst) = (0, 0.0f64);
    for _ in 0..1000 {
        let len = rng.gen_range(2..=9);
        let lambda = rng.gen_range(0.0..=1.0);
        let b = random_batch(&mut rng, len, lambda);
        for kind in LossKind::ALL {
            if kind == LossKind::Dpo && len != 2 {
                continue;
            }
            let check = finite_difference_check(kind, &b, DEFAULT_FD_STEP).unwrap();
            ensure!(
                check.passes(DEFAULT_FD_TOLERANCE),
                "{kind} failed: {check:?}"
            );
            let f = |p: &[f64]| match kind {
                LossKind::Ce => loss_oracle::ce(p),
                LossKind::Dpo => loss_oracle::dpo(p, b.ref_logp(), b.beta()),
                LossKind::Listwise => loss_oracle::listwise(p, b.ref_logp(), b.beta()),
                LossKind::Hybrid => loss_oracle::hybrid(p, b.ref_logp(), b.beta(), b.lambda()),
            };
            let numeric = loss_oracle::numeric_gradient(f, b.policy_logp(), DEFAULT_FD_STEP);
            for (a, n) in evaluate(kind, &b).unwrap().gradient.iter().zip(&numeric) {
                worst = worst.max(relative_error(*a, *n));
            }
            checks += 1;
        }
    }
    ensure!(worst < DEFAULT_FD_TOLERANCE, "max relative error {worst:e}");
    Ok(format!(
        "{checks} checks over 1000 batches, max rel err {worst:.2e}"
    ))
}

fn pairwise_listwise_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let b = random_batch(&mut rng, 2, 0.5);
        worst = worst.max((loss_listwise(&b).value - loss_dpo_pairwise(&b).unwrap().value).abs());
    }
    ensure!(worst < 1e-12, "max gap {worst:e}");
    Ok(format!("1000 batches, max gap {worst:.2e}"))
}

fn hybrid_endpoints() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..100 {
        let len = rng.gen_range(2..=9);
        let b = random_batch(&mut rng, len, 0.0);
        let at = |lambda| {
            LossBatch::new(
                b.policy_logp().to_vec(),
                b.ref_logp().to_vec(),
                b.beta(),
                lambda,
            )
            .unwrap()
        };
        let (list, ce) = (loss_listwise(&b), loss_ce(&b));
        let (h0, h1, mid) = (
            loss_hybrid(&at(0.0)),
            loss_hybrid(&at(1.0)),
            loss_hybrid(&at(0.5)),
        );
        ensure!(
            h0.value == list.value && h0.gradient == list.gradient,
            "batch {i}: lambda=0 differs"
        );
        ensure!(
            h1.value == ce.value && h1.gradient == ce.gradient,
            "batch {i}: lambda=1 differs"
        );
        ensure!(
            (mid.value - (list.value + ce.value) / 2.0).abs() < 1e-12,
            "batch {i}: midpoint"
        );
    }
    Ok("100 batches".into())
}

fn random_quads<R: Rng>(rng: &mut R, categories: &[String]) -> Vec<SurfaceQuad> {
    const WORDS: &[&str] = &[
        "pizza", "service", "never", "had", "bad", "great", "ok", "is", ",", "(", ")", ";", "café",
        "because",
    ];
    let term = |rng: &mut R| {
        if rng.gen_bool(0.2) {
            return None;
        }
        loop {
            let t = (0..rng.gen_range(1..=4))
                .map(|_| *WORDS.choose(rng).unwrap())
                .collect::<Vec<_>>()
                .join(" ");
            if t != "it" {
                return Some(t);
            }
        }
    };
    (0..rng.gen_range(1..=4))
        .map(|_| SurfaceQuad {
            aspect: term(rng),
            opinion: term(rng),
            category: categories.choose(rng).unwrap().clone(),
            polarity: *Polarity::ALL.choose(rng).unwrap(),
        })
        .collect()
}

fn template_round_trip() -> Outcome {
    let vocab = fixture_vocab();
    let m = ElementMapping::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut implicit = 0;
    for i in 0..10_000 {
        let q = random_quads(&mut rng, vocab.categories.as_slice());
        ensure!(lint(&q, &m).is_empty(), "list {i} fails lint");
        implicit += q
            .iter()
            .filter(|x| x.aspect.is_none() || x.opinion.is_none())
            .count();
        let parsed = parse_output(&render(&q, &m), &m, Some(&vocab));
        ensure!(
            parsed.quads() == q && parsed.all_coherent(),
            "list {i} does not round-trip: {q:?}"
        );
    }
    for i in 0..10_000 {
        let bytes: Vec<u8> = (0..rng.gen_range(0..200)).map(|_| rng.gen()).collect();
        let text = String::from_utf8_lossy(&bytes);
        let ok = catch_unwind(AssertUnwindSafe(|| parse_output(&text, &m, Some(&vocab)))).is_ok();
        ensure!(ok, "fuzz string {i} panicked");
    }
    Ok(format!(
        "10000 lists ({implicit} implicit-bearing quads), 10000 fuzz strings"
    ))
}

fn template_goldens() -> Outcome {
    let m = ElementMapping::default();
    let preds = std::fs::read_to_string(fixture("taxonomy_predictions.txt")).unwrap();
    let line = preds.lines().nth(1).unwrap();
    let parsed = parse_output(line, &m, None);
    let expected = SurfaceQuad::new(
        Some("service"),
        Some("offensive"),
        "service general",
        Polarity::Negative,
    );
    ensure!(
        parsed.quads() == [expected.clone()],
        "parsed {:?}",
        parsed.quads()
    );
    ensure!(render(&[expected], &m) == line, "re-render differs");
    let buggy = [
        SurfaceQuad::new(
            Some("support page"),
            Some("buggy"),
            "support general",
            Polarity::Negative,
        ),
        SurfaceQuad::new(
            Some("support person"),
            Some("unhelpful"),
            "support general",
            Polarity::Negative,
        ),
    ];
    let both = render(&buggy, &m);
    let joined = format!("{}; {}", render(&buggy[..1], &m), render(&buggy[1..], &m));
    ensure!(both == joined, "join differs: {both}");
    Ok("prediction string byte-identical, two-quad join".into())
}

fn syntactic_oracle() -> Outcome {
    let fx = load_fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut trees = fx.trees.clone();
    while trees.len() < 200 {
        let n = rng.gen_range(1..=25);
        trees.push(random_tree(&mut rng, n));
    }
    let (mut pairs, mut windows) = (0, 0);
    for (ti, t) in trees.iter().enumerate() {
        ensure!(t.len() <= 25, "tree {ti} has {} tokens", t.len());
        let n = t.len();
        for _ in 0..40 {
            let span = |rng: &mut ChaCha8Rng| {
                let s = rng.gen_range(0..n);
                quadpref::corpus::TokenSpan::new(s, rng.gen_range(s + 1..=n))
            };
            let (a, b) = (span(&mut rng), span(&mut rng));
            let expected = bfs_distance(t, covering_node_oracle(t, a), covering_node_oracle(t, b));
            ensure!(
                t.tree_distance(a, b).unwrap() == expected,
                "tree {ti}: distance {a} {b}"
            );
            pairs += 1;
        }
        let tags = t.pos_tags();
        for width in 1..=3.min(n) {
            for start in 0..=n - width {
                let pattern = &tags[start..start + width];
                let got: Vec<_> = t
                    .find_pos_matches(pattern, None)
                    .into_iter()
                    .map(|c| c.span)
                    .collect();
                ensure!(
                    got == window_oracle(&tags, pattern, None),
                    "tree {ti}: windows {pattern:?}"
                );
                windows += 1;
            }
        }
    }
    Ok(format!("200 trees, {pairs} span pairs, {windows} patterns"))
}

fn semantic_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..500 {
        let dim = rng.gen_range(1..=64);
        let size = rng.gen_range(1..=50);
        let mut t = EmbeddingTable::<f64>::new(dim);
        for j in 0..size {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if v.iter().all(|x| x.abs() < 1e-3) {
                continue;
            }
            t.insert(format!("p{j:02}"), v).unwrap();
        }
        let mut pool = t.phrases().to_vec();
        pool.shuffle(&mut rng);
        pool.truncate(rng.gen_range(0..=pool.len()));
        let query = t.phrases().choose(&mut rng).unwrap().clone();
        let k = rng.gen_range(0..=pool.len() + 1);
        let none = HashSet::new();
        let got: Vec<String> = t
            .top_k_similar(&query, &pool, k, &none)
            .unwrap()
            .hits
            .into_iter()
            .map(|h| h.0)
            .collect();
        ensure!(
            got == top_k_oracle(&t, &query, &pool, k, &none),
            "instance {i} differs"
        );
        for p in t.phrases() {
            let c = t.cosine(p, p).unwrap();
            ensure!(
                (c - 1.0).abs() < 1e-12,
                "instance {i}: cosine({p},{p}) = {c}"
            );
        }
    }
    Ok("500 instances".into())
}

/// Independent audit of one sample: parses every negative and diffs it
/// against gold without consulting the recorded provenance.
fn audit(
    chosen: &str,
    rejected: &[String],
    gold: &[SurfaceQuad],
    m: &ElementMapping,
) -> Result<HashSet<Element>, String> {
    ensure!(rejected.len() == 6, "{} negatives", rejected.len());
    let mut seen: HashSet<Vec<SurfaceQuad>> = HashSet::new();
    seen.insert(parse_output(chosen, m, None).quads());
    let mut covered = HashSet::new();
    for neg in rejected {
        let q = parse_output(neg, m, None).quads();
        ensure!(q.len() == gold.len(), "quad count changed in {neg}");
        ensure!(q.as_slice() != gold, "negative equals gold");
        ensure!(seen.insert(q.clone()), "duplicate negative {neg}");
        for (a, b) in q.iter().zip(gold) {
            for e in Element::ALL {
                if a.get(e) != b.get(e) {
                    covered.insert(e);
                }
            }
        }
    }
    Ok(covered)
}

fn structural_audit() -> Outcome {
    let start = Instant::now();
    let fx = load_fixture();
    let m = ElementMapping::default();
    let cfg = GenerationConfig {
        seed: 7,
        ..Default::default()
    };
    let out = generate_corpus(&fx.examples, &fx.trees, &fx.emb, &fx.vocab, &m, &cfg)
        .map_err(|e| e.to_string())?;
    ensure!(
        out.failures.is_empty(),
        "{} failures: {:?}",
        out.failures.len(),
        out.failures
    );
    ensure!(
        out.samples.len() == FIXTURE_SENTENCES,
        "{} samples",
        out.samples.len()
    );
    for (s, ex) in out.samples.iter().zip(&fx.examples) {
        let gold = ex.surface_quads();
        ensure!(
            s.chosen == render(&gold, &m),
            "{}: chosen is not gold",
            s.id
        );
        let covered =
            audit(&s.chosen, &s.rejected, &gold, &m).map_err(|e| format!("{}: {e}", s.id))?;
        ensure!(covered.len() == 4, "{}: covers {covered:?}", s.id);
        for (neg, p) in s.rejected.iter().zip(&s.provenance) {
            ensure!(
                parse_output(neg, &m, None).quads() == p.apply(&gold),
                "{}: perturbation mismatch",
                s.id
            );
        }
    }
    let first = out.to_jsonl();
    let second = generate_corpus(&fx.examples, &fx.trees, &fx.emb, &fx.vocab, &m, &cfg)
        .unwrap()
        .to_jsonl();
    ensure!(first == second, "runs differ");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "{} samples, {} bytes, byte-identical reruns",
        out.samples.len(),
        first.len()
    ))
}

fn evaluation_exactness() -> Outcome {
    let fx = load_fixture();
    let gold: Vec<Vec<SurfaceQuad>> = fx.examples.iter().map(|e| e.surface_quads()).collect();
    let r = score_aligned(&gold, &gold, MatchMode::Normalized).unwrap();
    ensure!(
        (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0),
        "self score {r:?}"
    );

    let q = |a: &str| SurfaceQuad::new(Some(a), Some("good"), "food quality", Polarity::Positive);
    let r = score_aligned(
        &[vec![q("q1"), q("q3")]],
        &[vec![q("q1"), q("q2")]],
        MatchMode::Normalized,
    )
    .unwrap();
    for v in [r.precision, r.recall, r.f1] {
        ensure!((v - 0.5).abs() < 1e-12, "half fixture {r:?}");
    }

    let m = ElementMapping::default();
    let examples = load_dataset(
        &fixture("taxonomy_gold.jsonl"),
        DatasetFormat::Jsonl,
        Some(&fx.vocab),
    )
    .unwrap();
    let preds = std::fs::read_to_string(fixture("taxonomy_predictions.txt")).unwrap();
    let expected = [
        (Element::Aspect, SpanSubtype::PartialMatch),
        (Element::Opinion, SpanSubtype::Mismatch),
    ];
    for ((ex, line), (element, subtype)) in examples.iter().zip(preds.lines()).zip(expected) {
        let errs = classify_errors(
            &parse_output(line, &m, None).quads(),
            &ex.surface_quads(),
            &ex.sentence,
            MatchMode::Normalized,
        );
        ensure!(
            errs.len() == 1 && errs[0].kind == ErrorKind::SingleElement { element, subtype },
            "{}: {errs:?}",
            ex.sentence.id
        );
    }
    let s = Sentence::tokenize("x", "x");
    ensure!(
        classify_errors(&gold[0], &gold[0], &s, MatchMode::Normalized).is_empty(),
        "identity has errors"
    );
    Ok("identity, 0.5 fixture, partial-match and mismatch".into())
}

/// Directory, format, file extension and (sentences, quads) for train/dev/test.
type Published = (
    &'static str,
    DatasetFormat,
    &'static str,
    [(usize, usize); 3],
);

const PUBLISHED: [Published; 4] = [
    (
        "rest15",
        DatasetFormat::Legacy,
        "txt",
        [(834, 1354), (209, 347), (537, 795)],
    ),
    (
        "rest16",
        DatasetFormat::Legacy,
        "txt",
        [(1264, 1989), (316, 507), (544, 799)],
    ),
    (
        "acos-laptop",
        DatasetFormat::Acos,
        "tsv",
        [(2934, 4172), (326, 440), (816, 1161)],
    ),
    (
        "acos-rest",
        DatasetFormat::Acos,
        "tsv",
        [(1530, 2484), (171, 261), (583, 916)],
    ),
];

fn dataset_statistics() -> Outcome {
    let Some(dir) = std::env::var_os("QUADPREF_DATA_DIR") else {
        let fx = load_fixture();
        let s = stats(&fx.examples);
        ensure!(
            s == DatasetStats {
                sentences: FIXTURE_SENTENCES,
                quads: FIXTURE_QUADS
            },
            "fixture {s:?}"
        );
        return Ok(format!(
            "fixture corpus {}/{} (QUADPREF_DATA_DIR unset)",
            s.sentences, s.quads
        ));
    };
    let dir = Path::new(&dir);
    let mut checked = 0;
    for (name, format, ext, counts) in PUBLISHED {
        for (split, (sentences, quads)) in ["train", "dev", "test"].into_iter().zip(counts) {
            let path = dir.join(name).join(format!("{split}.{ext}"));
            let ex = load_dataset(&path, format, None)
                .map_err(|e| format!("{}: {e}", path.display()))?;
            let s = stats(&ex);
            ensure!(
                s == DatasetStats { sentences, quads },
                "{name} {split}: {}/{} vs {sentences}/{quads}",
                s.sentences,
                s.quads
            );
            checked += 1;
        }
    }
    Ok(format!("{checked} splits match"))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("loss exactness", loss_exactness),
        ("gradient verification", gradient_verification),
        (
            "pairwise/listwise consistency",
            pairwise_listwise_consistency,
        ),
        ("hybrid endpoints", hybrid_endpoints),
        ("template round-trip", template_round_trip),
        ("template goldens", template_goldens),
        ("syntactic oracle equivalence", syntactic_oracle),
        ("semantic oracle equivalence", semantic_oracle),
        ("candidate structural audit", structural_audit),
        ("evaluation exactness", evaluation_exactness),
        ("dataset statistics", dataset_statistics),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let ms = start.elapsed().as_millis();
        match outcome {
            Ok(detail) => println!("PASS {name} ({ms} ms): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({ms} ms): {why}");
            }
        }
    }
    println!("{} of {} criteria passed", 11 - failed, 11);
    if failed > 0 {
        std::process::exit(1);
    }
}
