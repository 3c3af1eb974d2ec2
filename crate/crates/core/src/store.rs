//! Read access to finished runs and document evidence search.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::corpus::TimeSlicedCorpus;
use crate::embed::EmbeddingModel;
use crate::eval::MetricReport;
use crate::flow::{ClusterFlowGraph, Heatmap};
use crate::pipeline::{paths, sha256_file, Manifest, Stage, CONFIG_FILE, MANIFEST_FILE};
use crate::topicspace::TopicsArtifact;
use crate::vector::cosine;

pub const SNIPPET_CHARS: usize = 200;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no run with id {0:?}")]
    UnknownRun(String),
    #[error("run {run} has no `{artifact}` artifact")]
    MissingArtifact { run: String, artifact: &'static str },
    #[error("invalid run at {path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("{0}")]
    BadQuery(String),
    #[error("no query keyword is in the vocabulary: {}", .0.join(", "))]
    UnknownKeywords(Vec<String>),
    #[error("slice {0} does not exist")]
    NoSuchSlice(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything loaded from one run directory. Artifacts of stages that have
/// not run are `None`.
#[derive(Debug, Default)]
pub struct RunArtifacts {
    pub id: String,
    pub manifest: Option<Manifest>,
    pub config: Option<RunConfig>,
    pub corpus: Option<TimeSlicedCorpus>,
    pub compass: Option<EmbeddingModel>,
    pub slices: Option<Vec<EmbeddingModel>>,
    pub topics: Option<TopicsArtifact>,
    pub sankey: Option<ClusterFlowGraph>,
    pub heatmap: Option<Heatmap>,
    pub metrics: Option<MetricReport>,
    doc_index: HashMap<String, (usize, usize)>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, String> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))
}

impl RunArtifacts {
    /// Loads a run directory after checking that the manifest's outputs are
    /// intact and that the stored configuration matches its hash.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let invalid = |message: String| StoreError::Invalid {
            path: dir.to_path_buf(),
            message,
        };
        let manifest = Manifest::load(dir).map_err(|e| invalid(e.to_string()))?;
        manifest.verify(dir).map_err(|e| invalid(e.to_string()))?;
        let config_path = dir.join(CONFIG_FILE);
        let (hash, _) =
            sha256_file(&config_path).map_err(|e| invalid(format!("{CONFIG_FILE}: {e}")))?;
        if hash != manifest.config_hash {
            return Err(invalid(format!(
                "{CONFIG_FILE} does not match the manifest's config hash"
            )));
        }
        let config: RunConfig = read_json(&config_path).map_err(invalid)?;
        let has = |s: Stage| manifest.stages.contains_key(&s);
        let mut run = RunArtifacts {
            id: manifest.run_id.clone(),
            config: Some(config),
            ..Default::default()
        };
        if has(Stage::Corpus) {
            run.corpus = Some(
                TimeSlicedCorpus::load(&dir.join(paths::CORPUS_DIR))
                    .map_err(|e| invalid(e.to_string()))?,
            );
        }
        if has(Stage::Compass) {
            run.compass = Some(
                EmbeddingModel::load(&dir.join(paths::COMPASS))
                    .map_err(|e| invalid(e.to_string()))?,
            );
        }
        if has(Stage::Slices) {
            let n = run.corpus.as_ref().map_or(0, |c| c.slices.len());
            let models = (0..n)
                .map(|i| EmbeddingModel::load(&dir.join(paths::slice_model(i))))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| invalid(e.to_string()))?;
            run.slices = Some(models);
        }
        if has(Stage::Topics) {
            run.topics = Some(read_json(&dir.join(paths::TOPICS)).map_err(invalid)?);
        }
        if has(Stage::Flow) {
            run.sankey = Some(read_json(&dir.join(paths::SANKEY)).map_err(invalid)?);
            run.heatmap = Some(read_json(&dir.join(paths::HEATMAP)).map_err(invalid)?);
        }
        if has(Stage::Eval) {
            run.metrics = Some(read_json(&dir.join(paths::METRICS)).map_err(invalid)?);
        }
        run.manifest = Some(manifest);
        run.index_documents();
        Ok(run)
    }

    /// Builds a run from in-memory artifacts.
    pub fn from_parts(id: &str, build: impl FnOnce(&mut RunArtifacts)) -> Self {
        let mut run = RunArtifacts {
            id: id.to_string(),
            ..Default::default()
        };
        build(&mut run);
        run.index_documents();
        run
    }

    fn index_documents(&mut self) {
        self.doc_index.clear();
        if let Some(c) = &self.corpus {
            for (s, slice) in c.slices.iter().enumerate() {
                for (d, doc) in slice.documents.iter().enumerate() {
                    self.doc_index.insert(doc.id.clone(), (s, d));
                }
            }
        }
    }

    fn need<'a, T>(
        &self,
        value: &'a Option<T>,
        artifact: &'static str,
    ) -> Result<&'a T, StoreError> {
        value.as_ref().ok_or_else(|| StoreError::MissingArtifact {
            run: self.id.clone(),
            artifact,
        })
    }

    pub fn corpus(&self) -> Result<&TimeSlicedCorpus, StoreError> {
        self.need(&self.corpus, "corpus")
    }
    pub fn compass(&self) -> Result<&EmbeddingModel, StoreError> {
        self.need(&self.compass, "models/compass")
    }
    pub fn slices(&self) -> Result<&[EmbeddingModel], StoreError> {
        self.need(&self.slices, "models/slices").map(Vec::as_slice)
    }
    pub fn topics(&self) -> Result<&TopicsArtifact, StoreError> {
        self.need(&self.topics, "topics")
    }
    pub fn sankey(&self) -> Result<&ClusterFlowGraph, StoreError> {
        self.need(&self.sankey, "flow/sankey")
    }
    pub fn heatmap(&self) -> Result<&Heatmap, StoreError> {
        self.need(&self.heatmap, "flow/heatmap")
    }
    pub fn metrics(&self) -> Result<&MetricReport, StoreError> {
        self.need(&self.metrics, "metrics")
    }
    pub fn config(&self) -> Result<&RunConfig, StoreError> {
        self.need(&self.config, "config")
    }

    pub fn summary(&self) -> RunSummaryView {
        RunSummaryView {
            id: self.id.clone(),
            config_hash: self.manifest.as_ref().map(|m| m.config_hash.clone()),
            stages: self
                .manifest
                .as_ref()
                .map(|m| m.stages.keys().map(|s| s.name().to_string()).collect())
                .unwrap_or_default(),
            artifacts: self
                .manifest
                .as_ref()
                .map(|m| {
                    m.artifacts()
                        .into_iter()
                        .map(|(k, v)| (k.to_string(), v.into_iter().map(String::from).collect()))
                        .collect()
                })
                .unwrap_or_default(),
        }
    }

    pub fn slice_views(&self) -> Result<Vec<SliceView>, StoreError> {
        let c = self.corpus()?;
        Ok(c.slices
            .iter()
            .enumerate()
            .map(|(i, s)| SliceView {
                index: s.index,
                label: c.slice_label(i),
                start: s.interval.start,
                end: s.interval.end,
                documents: s.documents.len(),
            })
            .collect())
    }

    /// Ranks documents by cosine between their vectors and the mean of the
    /// query keywords' word vectors, both taken from the requested slice
    /// model or from the compass. Ties break on document id.
    pub fn search_docs(&self, q: &DocQuery) -> Result<Vec<DocHit>, StoreError> {
        if q.limit < 1 {
            return Err(StoreError::BadQuery("limit must be at least 1".into()));
        }
        if q.keywords.is_empty() {
            return Err(StoreError::BadQuery("no keywords given".into()));
        }
        let model = match q.slice {
            Some(s) => self.slices()?.get(s).ok_or(StoreError::NoSuchSlice(s))?,
            None => self.compass()?,
        };
        if model.doc_ids().is_empty() {
            return Ok(Vec::new());
        }
        let mut missing = Vec::new();
        let mut query = vec![0f32; model.dim()];
        let mut found = 0usize;
        for k in &q.keywords {
            match model.word_vector(&k.to_lowercase()) {
                Some(v) => {
                    found += 1;
                    for (a, b) in query.iter_mut().zip(v) {
                        *a += b;
                    }
                }
                None => missing.push(k.clone()),
            }
        }
        if found == 0 {
            return Err(StoreError::UnknownKeywords(missing));
        }
        for a in &mut query {
            *a /= found as f32;
        }
        let mut scored: Vec<(f64, &String)> = model
            .doc_ids()
            .iter()
            .map(|id| (cosine(&query, model.doc_vector(id).unwrap()), id))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let corpus = self.corpus.as_ref();
        Ok(scored
            .into_iter()
            .skip(q.offset)
            .take(q.limit)
            .map(|(score, id)| {
                let doc = self
                    .doc_index
                    .get(id)
                    .and_then(|&(s, d)| corpus.map(|c| (s, &c.slices[s].documents[d])));
                DocHit {
                    id: id.clone(),
                    slice: doc.map(|(s, _)| s),
                    timestamp: doc.map(|(_, d)| d.timestamp),
                    snippet: doc
                        .map(|(_, d)| d.text.chars().take(SNIPPET_CHARS).collect())
                        .unwrap_or_default(),
                    score,
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummaryView {
    pub id: String,
    pub config_hash: Option<String>,
    pub stages: Vec<String>,
    pub artifacts: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceView {
    pub index: usize,
    pub label: String,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub documents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocQuery {
    pub keywords: Vec<String>,
    pub slice: Option<usize>,
    pub limit: usize,
    #[serde(default)]
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocHit {
    pub id: String,
    pub slice: Option<usize>,
    pub timestamp: Option<DateTime<Utc>>,
    pub snippet: String,
    pub score: f64,
}

/// All runs under a root. The root is either one run directory or a
/// directory whose subdirectories are runs.
#[derive(Debug, Default)]
pub struct ArtifactStore {
    runs: BTreeMap<String, RunArtifacts>,
}

impl ArtifactStore {
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        let mut runs = Vec::new();
        if root.join(MANIFEST_FILE).is_file() {
            runs.push(RunArtifacts::open(root)?);
        } else {
            let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join(MANIFEST_FILE).is_file())
                .collect();
            dirs.sort();
            for d in dirs {
                runs.push(RunArtifacts::open(&d)?);
            }
        }
        if runs.is_empty() {
            return Err(StoreError::Invalid {
                path: root.to_path_buf(),
                message: format!("no {MANIFEST_FILE} found"),
            });
        }
        Ok(Self::from_runs(runs))
    }

    pub fn from_runs(runs: Vec<RunArtifacts>) -> Self {
        Self {
            runs: runs.into_iter().map(|r| (r.id.clone(), r)).collect(),
        }
    }

    /// Runs in id order.
    pub fn runs(&self) -> impl Iterator<Item = &RunArtifacts> {
        self.runs.values()
    }

    /// The named run, or the first run by id when `id` is `None`.
    pub fn run(&self, id: Option<&str>) -> Result<&RunArtifacts, StoreError> {
        match id {
            Some(id) => self
                .runs
                .get(id)
                .ok_or_else(|| StoreError::UnknownRun(id.to_string())),
            None => self
                .runs
                .values()
                .next()
                .ok_or_else(|| StoreError::UnknownRun(String::new())),
        }
    }
}
