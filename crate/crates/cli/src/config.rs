//! Pipeline configuration: an optional TOML file, then command-line overrides.
//!
//! ```toml
//! [paths]
//! dataset = "data/train.jsonl"
//! format = "jsonl"
//! parses = "data/train.parses"
//! embeddings = "data/train.emb"
//! categories = "data/categories.txt"
//! output_dir = "out"
//!
//! [generation]
//! n = 6
//! k_a = 3
//! k_o = 3
//! k_c = 3
//! k_s_mix = 1
//! seed = 7
//!
//! [mapping]
//! positive = "great"
//! negative = "bad"
//! neutral = "ok"
//! implicit = "it"
//!
//! [loss]
//! beta = 0.05
//! lambda = 0.5
//! kind = "listwise"
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use quadpref::confuse::GenerationConfig;
use quadpref::corpus::DatasetFormat;
use quadpref::prefloss::LossKind;
use quadpref::template::ElementMapping;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub format: Option<String>,
    pub parses: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub categories: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    pub positive: Option<String>,
    pub negative: Option<String>,
    pub neutral: Option<String>,
    pub implicit: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub beta: f64,
    pub lambda: f64,
    /// Used for rows that do not name a loss.
    pub kind: String,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: 0.05,
            lambda: 0.5,
            kind: "listwise".into(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub generation: GenerationConfig,
    pub mapping: MappingConfig,
    pub loss: LossConfig,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(PipelineConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut cfg.paths;
        for slot in [
            &mut p.dataset,
            &mut p.parses,
            &mut p.embeddings,
            &mut p.categories,
            &mut p.output_dir,
        ] {
            if let Some(rel) = slot.as_ref().filter(|p| p.is_relative()) {
                *slot = Some(base.join(rel));
            }
        }
        Ok(cfg)
    }

    pub fn mapping(&self) -> anyhow::Result<ElementMapping> {
        let d = ElementMapping::default();
        let m = &self.mapping;
        let mapping = ElementMapping {
            positive: m.positive.clone().unwrap_or(d.positive),
            negative: m.negative.clone().unwrap_or(d.negative),
            neutral: m.neutral.clone().unwrap_or(d.neutral),
            implicit: m.implicit.clone().unwrap_or(d.implicit),
        };
        mapping
            .validate()
            .map_err(|e| anyhow::anyhow!("invalid mapping: {e}"))?;
        Ok(mapping)
    }

    pub fn format(&self, flag: Option<&str>) -> anyhow::Result<DatasetFormat> {
        match flag.or(self.paths.format.as_deref()) {
            None => Ok(DatasetFormat::Jsonl),
            Some(f) => f.parse().map_err(anyhow::Error::msg),
        }
    }

    pub fn loss_kind(&self) -> anyhow::Result<LossKind> {
        self.loss.kind.parse().map_err(anyhow::Error::msg)
    }

    pub fn validate_loss(&self) -> anyhow::Result<()> {
        let l = &self.loss;
        if !(l.beta.is_finite() && l.beta > 0.0) {
            bail!("loss.beta must be positive, got {}", l.beta);
        }
        if !(0.0..=1.0).contains(&l.lambda) {
            bail!("loss.lambda must lie in [0, 1], got {}", l.lambda);
        }
        self.loss_kind()?;
        Ok(())
    }
}

/// A path from the command line or the config, which must name an existing file.
pub fn existing(
    flag: Option<&Path>,
    configured: Option<&Path>,
    what: &str,
) -> anyhow::Result<PathBuf> {
    let path = flag
        .or(configured)
        .with_context(|| format!("no {what} given (flag or config)"))?;
    if !path.is_file() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.generation.n, 6);
        assert_eq!(c.loss.beta, 0.05);
        assert_eq!(c.loss.lambda, 0.5);
        assert_eq!(c.mapping().unwrap(), ElementMapping::default());
        c.validate_loss().unwrap();
    }

    #[test]
    fn partial_document() {
        let c: PipelineConfig =
            toml::from_str("[generation]\nseed = 7\n[mapping]\nneutral = \"fine\"\n").unwrap();
        assert_eq!(c.generation.seed, 7);
        assert_eq!(c.generation.n, 6);
        assert_eq!(c.mapping().unwrap().neutral, "fine");
        assert!(toml::from_str::<PipelineConfig>("[loss]\nbeta = 0.1\ngamma = 1\n").is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = PipelineConfig::default();
        c.loss.lambda = 1.5;
        assert!(c.validate_loss().is_err());
        c.loss.lambda = 0.5;
        c.loss.beta = 0.0;
        assert!(c.validate_loss().is_err());
        c.loss.beta = 0.05;
        c.mapping.negative = Some("great".into());
        assert!(c.mapping().is_err());
    }
}
