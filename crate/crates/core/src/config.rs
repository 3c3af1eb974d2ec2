//! Run configuration: a TOML file plus `TTEC_*` environment overrides.
//!
//! An override names its key path with double underscores, so
//! `TTEC_TRAINING__EPOCHS=10` sets `training.epochs` and `TTEC_SEED=3` sets
//! the top-level seed. Values are parsed as TOML literals and fall back to
//! plain strings.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, CalendarUnit, Granularity, PreprocessOptions};
use crate::embed::TrainingParams;
use crate::eval::ReferenceMode;
use crate::flow::FlowParams;
use crate::topicspace::TopicParams;

pub const ENV_PREFIX: &str = "TTEC_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("environment override {var}: {message}")]
    Override { var: String, message: String },
    #[error("{field}: file {path} does not exist")]
    MissingPath { field: &'static str, path: PathBuf },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    /// One JSON object per line with `id`, `timestamp`, `text` and optional `source`.
    #[default]
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub input: PathBuf,
    #[serde(default)]
    pub format: InputFormat,
    /// Calendar unit for slicing. Ignored when `boundaries` is set.
    #[serde(default = "default_unit")]
    pub granularity: CalendarUnit,
    /// Explicit ascending slice edges (RFC 3339).
    #[serde(default)]
    pub boundaries: Option<Vec<DateTime<Utc>>>,
    #[serde(default = "default_min_count")]
    pub min_count: u64,
    #[serde(default)]
    pub stopwords: Option<PathBuf>,
    #[serde(default)]
    pub lemmas: Option<PathBuf>,
    #[serde(default = "yes")]
    pub lowercase: bool,
    #[serde(default = "yes")]
    pub strip_numbers: bool,
    #[serde(default = "yes")]
    pub strip_punctuation: bool,
    #[serde(default)]
    pub split_paragraphs: bool,
    #[serde(default = "default_min_paragraph")]
    pub min_paragraph_chars: usize,
}

fn default_unit() -> CalendarUnit {
    CalendarUnit::Month
}
fn default_min_count() -> u64 {
    5
}
fn yes() -> bool {
    true
}
fn default_min_paragraph() -> usize {
    20
}

impl CorpusConfig {
    pub fn slicing(&self) -> Granularity {
        match &self.boundaries {
            Some(edges) => Granularity::Boundaries(edges.clone()),
            None => Granularity::Calendar(self.granularity),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelerConfig {
    pub url: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub prompt: Option<String>,
}

fn default_timeout() -> u64 {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    /// One keyword per line. Without it the most frequent compass words are used.
    pub keywords: Option<PathBuf>,
    pub keyword_count: usize,
    #[serde(flatten)]
    pub params: FlowParams,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            keywords: None,
            keyword_count: 100,
            params: FlowParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub topic_counts: Vec<usize>,
    pub reference: ReferenceMode,
    pub dataset: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            topic_counts: crate::eval::TOPIC_COUNTS.to_vec(),
            reference: ReferenceMode::Slice,
            dataset: "corpus".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Every stochastic stage uses `seed + stage index`.
    #[serde(default)]
    pub seed: u64,
    pub output: PathBuf,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub training: TrainingParams,
    #[serde(default)]
    pub topics: TopicParams,
    #[serde(default)]
    pub labeler: Option<LabelerConfig>,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

/// A parsed configuration and the directory its relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    /// Reads `path` and applies overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::load_with_env(path, std::env::vars())
    }

    pub fn load_with_env(
        path: &Path,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base_dir, env)
    }

    pub fn parse(
        text: &str,
        base_dir: PathBuf,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut value: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut vars: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        vars.sort();
        for (var, raw) in vars {
            apply_override(&mut value, &var, &raw)?;
        }
        let config: RunConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        Ok(Self { config, base_dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output)
    }

    /// Checks referenced files and parameter ranges.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.config;
        let exists = |field: &'static str, p: &Path| {
            let full = self.resolve(p);
            if full.is_file() {
                Ok(())
            } else {
                Err(ConfigError::MissingPath { field, path: full })
            }
        };
        exists("corpus.input", &c.corpus.input)?;
        if let Some(p) = &c.corpus.stopwords {
            exists("corpus.stopwords", p)?;
        }
        if let Some(p) = &c.corpus.lemmas {
            exists("corpus.lemmas", p)?;
        }
        if let Some(p) = &c.flow.keywords {
            exists("flow.keywords", p)?;
        }
        if c.corpus.min_count < 1 {
            return Err(ConfigError::Invalid(
                "corpus.min_count must be at least 1".into(),
            ));
        }
        if let Some(edges) = &c.corpus.boundaries {
            if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(ConfigError::Invalid(
                    "corpus.boundaries needs at least two strictly ascending edges".into(),
                ));
            }
        }
        c.training
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("training: {e}")))?;
        if c.topics.target_k < 1 {
            return Err(ConfigError::Invalid(
                "topics.target_k must be at least 1".into(),
            ));
        }
        if c.flow.keywords.is_none() && c.flow.keyword_count < 2 {
            return Err(ConfigError::Invalid(
                "flow.keyword_count must be at least 2".into(),
            ));
        }
        if c.eval.topic_counts.is_empty() || c.eval.topic_counts.contains(&0) {
            return Err(ConfigError::Invalid(
                "eval.topic_counts must be non-empty and positive".into(),
            ));
        }
        Ok(())
    }

    pub fn preprocess_options(&self) -> Result<PreprocessOptions, ConfigError> {
        let c = &self.config.corpus;
        let read = |p: &Path| self.resolve(p);
        let stopwords = match &c.stopwords {
            Some(p) => {
                corpus::load_stopwords(&read(p)).map_err(|e| ConfigError::Invalid(e.to_string()))?
            }
            None => Default::default(),
        };
        let lemmas = match &c.lemmas {
            Some(p) => {
                corpus::load_lemmas(&read(p)).map_err(|e| ConfigError::Invalid(e.to_string()))?
            }
            None => HashMap::new(),
        };
        Ok(PreprocessOptions {
            lowercase: c.lowercase,
            strip_numbers: c.strip_numbers,
            strip_punctuation: c.strip_punctuation,
            stopwords,
            lemmas,
            split_paragraphs: c.split_paragraphs,
            min_paragraph_chars: c.min_paragraph_chars,
        })
    }
}

fn apply_override(root: &mut toml::Table, var: &str, raw: &str) -> Result<(), ConfigError> {
    let err = |message: String| ConfigError::Override {
        var: var.to_string(),
        message,
    };
    let path: Vec<String> = var[ENV_PREFIX.len()..]
        .split("__")
        .map(str::to_ascii_lowercase)
        .collect();
    if path.iter().any(String::is_empty) {
        return Err(err("empty key segment".into()));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().unwrap();
    let mut table = root;
    for key in parents {
        let entry = table
            .entry(key.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(err(format!("`{key}` is not a table"))),
        };
    }
    table.insert(last.clone(), value);
    Ok(())
}
