use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use quadpref::confuse::{audit_sample, generate_corpus};
use quadpref::corpus::{
    load_dataset_lenient, stats, to_canonical_json, validate_example, AnnotatedExample,
    CategoryList, DatasetFormat, PolarityList, Vocabulary,
};
use quadpref::eval::{classify_errors, coherence_rate, error_histogram, score_aligned, MatchMode};
use quadpref::semantics::load_embeddings;
use quadpref::syntax::load_parse_file;
use quadpref::template::{
    build_prompt, lint, parse_marker_style, parse_output, render, render_marker_style, ParsedOutput,
};
use serde_json::json;

use crate::config::{existing, PipelineConfig};
use crate::lossrows::{check_line, CheckSettings};

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Clean,
    ValidationFailures,
}

impl Status {
    fn from_failures(n: usize) -> Self {
        if n == 0 {
            Status::Clean
        } else {
            Status::ValidationFailures
        }
    }
}

/// Where a command writes its main output.
pub struct Sink {
    flag: Option<PathBuf>,
    default_name: &'static str,
}

impl Sink {
    pub fn new(flag: Option<PathBuf>, default_name: &'static str) -> Self {
        Sink { flag, default_name }
    }

    /// `--output` wins, then `paths.output_dir`, then stdout.
    fn write(&self, cfg: &PipelineConfig, data: &str) -> anyhow::Result<()> {
        let path = match (&self.flag, &cfg.paths.output_dir) {
            (Some(p), _) => Some(p.clone()),
            (None, Some(dir)) => {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("cannot create {}", dir.display()))?;
                Some(dir.join(self.default_name))
            }
            (None, None) => None,
        };
        match path {
            Some(p) => {
                std::fs::write(&p, data).with_context(|| format!("cannot write {}", p.display()))
            }
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(data.as_bytes())?;
                out.flush()?;
                Ok(())
            }
        }
    }
}

fn report(value: serde_json::Value) {
    eprintln!("{value}");
}

fn vocabulary(
    categories: Option<&Path>,
    examples: &[AnnotatedExample],
) -> anyhow::Result<Vocabulary> {
    let list = match categories {
        Some(p) => CategoryList::from_file(p)?,
        None => CategoryList::from_examples(examples)?,
    };
    Ok(Vocabulary::new(list, PolarityList::default()))
}

fn categories_path(flag: Option<&Path>, cfg: &PipelineConfig) -> anyhow::Result<Option<PathBuf>> {
    match flag.or(cfg.paths.categories.as_deref()) {
        None => Ok(None),
        Some(p) => existing(Some(p), None, "category list").map(Some),
    }
}

/// Loads a dataset strictly: any malformed record is printed and counted.
fn load_strict(
    path: &Path,
    format: DatasetFormat,
    vocab: Option<&Vocabulary>,
) -> anyhow::Result<(Vec<AnnotatedExample>, usize)> {
    let r = load_dataset_lenient(path, format, vocab)?;
    for e in &r.errors {
        eprintln!("{}: {e}", path.display());
    }
    Ok((r.examples, r.errors.len()))
}

pub struct IngestArgs {
    pub input: Option<PathBuf>,
    pub format: Option<String>,
    pub categories: Option<PathBuf>,
    pub lenient: bool,
    pub output: Option<PathBuf>,
}

pub fn ingest(cfg: &PipelineConfig, a: IngestArgs) -> anyhow::Result<Status> {
    let input = existing(a.input.as_deref(), cfg.paths.dataset.as_deref(), "dataset")?;
    let format = cfg.format(a.format.as_deref())?;
    let categories = categories_path(a.categories.as_deref(), cfg)?;
    let given = categories
        .as_deref()
        .map(|p| vocabulary(Some(p), &[]))
        .transpose()?;
    let loaded = load_dataset_lenient(&input, format, given.as_ref())?;
    for e in &loaded.errors {
        if a.lenient {
            log::warn!("{}: skipped {e}", input.display());
        } else {
            eprintln!("{}: {e}", input.display());
        }
    }
    let vocab = match given {
        Some(v) => v,
        None => vocabulary(None, &loaded.examples)?,
    };
    let mut violations = 0;
    for ex in &loaded.examples {
        for v in validate_example(ex, &vocab) {
            eprintln!("{}: example {}: {v}", input.display(), ex.sentence.id);
            violations += 1;
        }
    }
    let s = stats(&loaded.examples);
    report(json!({
        "input": input.display().to_string(),
        "sentences": s.sentences,
        "quads": s.quads,
        "skipped": loaded.errors.len(),
        "violations": violations,
    }));
    if !a.lenient && !loaded.errors.is_empty() {
        return Ok(Status::ValidationFailures);
    }
    let data: String = loaded
        .examples
        .iter()
        .map(|e| to_canonical_json(e) + "\n")
        .collect();
    Sink::new(a.output, "canonical.jsonl").write(cfg, &data)?;
    Ok(Status::from_failures(violations))
}

pub struct GenArgs {
    pub dataset: Option<PathBuf>,
    pub format: Option<String>,
    pub parses: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub categories: Option<PathBuf>,
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub strict: bool,
    pub output: Option<PathBuf>,
}

pub fn gen_candidates(cfg: &PipelineConfig, a: GenArgs) -> anyhow::Result<Status> {
    let dataset = existing(
        a.dataset.as_deref(),
        cfg.paths.dataset.as_deref(),
        "dataset",
    )?;
    let parses = existing(
        a.parses.as_deref(),
        cfg.paths.parses.as_deref(),
        "parse file",
    )?;
    let embeddings = existing(
        a.embeddings.as_deref(),
        cfg.paths.embeddings.as_deref(),
        "embedding file",
    )?;
    let categories = categories_path(a.categories.as_deref(), cfg)?;
    let format = cfg.format(a.format.as_deref())?;
    let mapping = cfg.mapping()?;
    let mut gen = cfg.generation.clone();
    if let Some(seed) = a.seed {
        gen.seed = seed;
    }
    if let Some(n) = a.n {
        gen.n = n;
    }
    gen.validate()?;

    let given = categories
        .as_deref()
        .map(|p| vocabulary(Some(p), &[]))
        .transpose()?;
    let (examples, bad) = load_strict(&dataset, format, given.as_ref())?;
    if bad > 0 {
        bail!("{}: {bad} malformed records", dataset.display());
    }
    let vocab = match given {
        Some(v) => v,
        None => vocabulary(None, &examples)?,
    };
    let trees = load_parse_file(&parses)?;
    let emb = load_embeddings::<f64>(&embeddings)?;
    let out = generate_corpus(&examples, &trees, &emb, &vocab, &mapping, &gen)?;

    let mut audit_failures = 0;
    let by_id: std::collections::HashMap<&str, &AnnotatedExample> = examples
        .iter()
        .map(|e| (e.sentence.id.as_str(), e))
        .collect();
    for s in &out.samples {
        let gold = by_id[s.id.as_str()].surface_quads();
        for problem in audit_sample(s, &gold, &mapping, gen.n) {
            eprintln!("sample {}: {problem}", s.id);
            audit_failures += 1;
        }
    }
    let failures: Vec<String> = out.failures.iter().map(|e| e.to_string()).collect();
    report(json!({
        "samples": out.samples.len(),
        "skipped": failures.len(),
        "failures": failures,
        "warnings": out.warnings,
        "audit_failures": audit_failures,
        "seed": gen.seed,
        "n": gen.n,
    }));
    if a.strict && !out.failures.is_empty() {
        return Ok(Status::ValidationFailures);
    }
    Sink::new(a.output, "candidates.jsonl").write(cfg, &out.to_jsonl())?;
    Ok(Status::from_failures(audit_failures))
}

pub struct RenderArgs {
    pub dataset: Option<PathBuf>,
    pub format: Option<String>,
    pub marker: bool,
    pub prompts: bool,
    pub output: Option<PathBuf>,
}

pub fn render_cmd(cfg: &PipelineConfig, a: RenderArgs) -> anyhow::Result<Status> {
    let dataset = existing(
        a.dataset.as_deref(),
        cfg.paths.dataset.as_deref(),
        "dataset",
    )?;
    let format = cfg.format(a.format.as_deref())?;
    let mapping = cfg.mapping()?;
    let (examples, bad) = load_strict(&dataset, format, None)?;
    let mut issues = bad;
    let mut data = String::new();
    for ex in &examples {
        let quads = ex.surface_quads();
        for issue in lint(&quads, &mapping) {
            eprintln!("example {}: {issue:?}", ex.sentence.id);
            issues += 1;
        }
        let target = if a.marker {
            render_marker_style(&quads, &mapping)
        } else {
            render(&quads, &mapping)
        };
        if a.prompts {
            let prompt = build_prompt(&ex.sentence);
            data.push_str(
                &json!({"id": ex.sentence.id, "prompt": prompt.text, "target": target}).to_string(),
            );
        } else {
            data.push_str(&target);
        }
        data.push('\n');
    }
    Sink::new(
        a.output,
        if a.prompts {
            "rendered.jsonl"
        } else {
            "rendered.txt"
        },
    )
    .write(cfg, &data)?;
    Ok(Status::from_failures(issues))
}

pub struct EvalArgs {
    pub gold: Option<PathBuf>,
    pub format: Option<String>,
    pub predictions: PathBuf,
    pub strict_match: bool,
    pub marker: bool,
    pub output: Option<PathBuf>,
}

pub fn eval_cmd(cfg: &PipelineConfig, a: EvalArgs) -> anyhow::Result<Status> {
    let gold_path = existing(
        a.gold.as_deref(),
        cfg.paths.dataset.as_deref(),
        "gold dataset",
    )?;
    let pred_path = existing(Some(&a.predictions), None, "predictions file")?;
    let format = cfg.format(a.format.as_deref())?;
    let mapping = cfg.mapping()?;
    let mode = if a.strict_match {
        MatchMode::Strict
    } else {
        MatchMode::Normalized
    };
    let (examples, bad) = load_strict(&gold_path, format, None)?;
    if bad > 0 {
        bail!("{}: {bad} malformed records", gold_path.display());
    }
    let text = std::fs::read_to_string(&pred_path)
        .with_context(|| format!("cannot read {}", pred_path.display()))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != examples.len() {
        bail!(
            "{} has {} lines but {} has {} examples",
            pred_path.display(),
            lines.len(),
            gold_path.display(),
            examples.len()
        );
    }
    let mut parsed: Vec<ParsedOutput> = Vec::with_capacity(lines.len());
    let mut diagnostics = 0;
    for line in &lines {
        let out = if a.marker {
            match parse_marker_style(line, &mapping) {
                Ok(quads) => ParsedOutput {
                    groups: quads
                        .into_iter()
                        .map(|q| quadpref::template::ParsedGroup {
                            rationale: quadpref::template::rationale(&q, &mapping),
                            quad: q,
                            coherent: true,
                        })
                        .collect(),
                    diagnostics: Vec::new(),
                },
                Err(_) if line.trim().is_empty() => ParsedOutput::default(),
                Err(_) => {
                    diagnostics += 1;
                    ParsedOutput::default()
                }
            }
        } else {
            parse_output(line, &mapping, None)
        };
        diagnostics += out.diagnostics.len();
        parsed.push(out);
    }
    let preds: Vec<_> = parsed.iter().map(|p| p.quads()).collect();
    let golds: Vec<_> = examples.iter().map(|e| e.surface_quads()).collect();
    let r = score_aligned(&preds, &golds, mode)?;
    let mut records = Vec::new();
    for ((p, g), ex) in preds.iter().zip(&golds).zip(&examples) {
        records.extend(classify_errors(p, g, &ex.sentence, mode));
    }
    let metrics = json!({
        "precision": r.precision,
        "recall": r.recall,
        "f1": r.f1,
        "tp": r.tp,
        "pred_count": r.pred_count,
        "gold_count": r.gold_count,
        "coherence_rate": coherence_rate(&parsed),
        "error_histogram": error_histogram(&records),
        "parse_diagnostics": diagnostics,
        "match_mode": mode,
    });
    let data = serde_json::to_string_pretty(&metrics)? + "\n";
    Sink::new(a.output, "metrics.json").write(cfg, &data)?;
    Ok(Status::Clean)
}

pub struct LossCheckArgs {
    pub input: PathBuf,
    pub kind: Option<String>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub tolerance: f64,
    pub length_normalize: bool,
    pub output: Option<PathBuf>,
}

pub fn loss_check(cfg: &PipelineConfig, a: LossCheckArgs) -> anyhow::Result<Status> {
    let mut cfg = cfg.clone();
    if let Some(k) = a.kind {
        cfg.loss.kind = k;
    }
    if let Some(b) = a.beta {
        cfg.loss.beta = b;
    }
    if let Some(l) = a.lambda {
        cfg.loss.lambda = l;
    }
    cfg.validate_loss()?;
    let settings = CheckSettings {
        kind: cfg.loss_kind()?,
        beta: cfg.loss.beta,
        lambda: cfg.loss.lambda,
        tolerance: a.tolerance,
        length_normalize: a.length_normalize,
    };
    let input = existing(Some(&a.input), None, "batch file")?;
    let file = File::open(&input).with_context(|| format!("cannot open {}", input.display()))?;
    let (mut data, mut pass, mut fail) = (String::new(), 0, 0);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", input.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = check_line(i + 1, &line, &settings);
        if v.passed() {
            pass += 1;
        } else {
            fail += 1;
        }
        data.push_str(&serde_json::to_string(&v)?);
        data.push('\n');
    }
    report(json!({"rows": pass + fail, "pass": pass, "fail": fail}));
    Sink::new(a.output, "verdicts.jsonl").write(&cfg, &data)?;
    Ok(Status::from_failures(fail))
}
