//! Stage orchestration and the run manifest.
//!
//! Stages run in dependency order:
//! corpus → compass → slices → topics → assignments / flow → eval.
//! Each stage records a fingerprint of its configuration and of its inputs'
//! bytes; a stage whose fingerprint and outputs are unchanged is skipped.
//! Progress is logged as `stage=<name> event=<start|skip|done> elapsed=<s>`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::LoadedConfig;
use crate::corpus::{self, TimeSlicedCorpus};
use crate::embed::{self, EmbeddingModel, TrainingParams};
use crate::eval::{self, ProtocolParams};
use crate::flow::{self, FlowParams};
use crate::topicspace::{self, GlobalTopicSpace, HttpLabeler, Labeler};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
const MANIFEST_FORMAT: &str = "ttec-manifest/1";

/// Artifact paths, relative to the run directory.
pub mod paths {
    pub const CORPUS_DIR: &str = "corpus";
    pub const CORPUS_MANIFEST: &str = "corpus/manifest.json";
    pub const SKIPPED: &str = "corpus/skipped.json";
    pub const COMPASS: &str = "models/compass.bin";
    pub const TOPIC_SPACE: &str = "topics/space.bin";
    pub const TOPICS: &str = "topics/topics.json";
    pub const SANKEY: &str = "flow/sankey.json";
    pub const HEATMAP: &str = "flow/heatmap.json";
    pub const HEATMAP_CSV: &str = "flow/heatmap.csv";
    pub const KEYWORDS: &str = "flow/keywords.json";
    pub const METRICS: &str = "metrics/report.json";
    pub const METRICS_CSV: &str = "metrics/table.csv";

    pub fn slice_model(i: usize) -> String {
        format!("models/slice_{i:04}.bin")
    }

    pub fn assignment(i: usize) -> String {
        format!("assignments/slice_{i:04}.json")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Corpus,
    Compass,
    Slices,
    Topics,
    Assignments,
    Flow,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Corpus,
        Stage::Compass,
        Stage::Slices,
        Stage::Topics,
        Stage::Assignments,
        Stage::Flow,
        Stage::Eval,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Corpus => "corpus",
            Stage::Compass => "compass",
            Stage::Slices => "slices",
            Stage::Topics => "topics",
            Stage::Assignments => "assignments",
            Stage::Flow => "flow",
            Stage::Eval => "eval",
        }
    }

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Corpus => &[],
            Stage::Compass => &[Stage::Corpus],
            Stage::Slices => &[Stage::Corpus, Stage::Compass],
            Stage::Topics => &[Stage::Compass],
            Stage::Assignments => &[Stage::Slices, Stage::Topics],
            Stage::Flow => &[Stage::Corpus, Stage::Compass, Stage::Slices, Stage::Topics],
            Stage::Eval => &[Stage::Corpus, Stage::Compass, Stage::Slices, Stage::Topics],
        }
    }

    /// The artifact class the stage writes.
    pub fn artifact_class(self) -> &'static str {
        match self {
            Stage::Corpus => "corpus",
            Stage::Compass | Stage::Slices => "models",
            Stage::Topics => "topics",
            Stage::Assignments => "assignments",
            Stage::Flow => "flow",
            Stage::Eval => "metrics",
        }
    }

    /// Seed of the stage's stochastic steps.
    pub fn seed(self, base: u64) -> u64 {
        base.wrapping_add(self.index() as u64)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| {
                let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
                format!("unknown stage `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("stage `{stage}` needs the `{needs}` artifacts; run stage `{needs}` first")]
    MissingDependency { stage: Stage, needs: Stage },
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("artifact store: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub fingerprint: String,
    pub seed: u64,
    pub outputs: Vec<OutputRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl Manifest {
    fn new(config_hash: String, seed: u64) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            run_id: config_hash[..12].to_string(),
            config_hash,
            seed,
            stages: BTreeMap::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let bytes = fs::read(dir.join(MANIFEST_FILE))?;
        let m: Manifest =
            serde_json::from_slice(&bytes).map_err(|e| PipelineError::Manifest(e.to_string()))?;
        if m.format != MANIFEST_FORMAT {
            return Err(PipelineError::Manifest(format!(
                "unsupported format {}",
                m.format
            )));
        }
        Ok(m)
    }

    fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let mut bytes =
            serde_json::to_vec_pretty(self).map_err(|e| PipelineError::Manifest(e.to_string()))?;
        bytes.push(b'\n');
        fs::write(&tmp, bytes)?;
        fs::rename(tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }

    /// Artifact class to the paths written for it.
    pub fn artifacts(&self) -> BTreeMap<&'static str, Vec<&str>> {
        let mut out: BTreeMap<&'static str, Vec<&str>> = BTreeMap::new();
        for (stage, rec) in &self.stages {
            out.entry(stage.artifact_class())
                .or_default()
                .extend(rec.outputs.iter().map(|o| o.path.as_str()));
        }
        out
    }

    /// Verifies that every recorded output exists with its recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<(), PipelineError> {
        for (stage, rec) in &self.stages {
            if !outputs_intact(dir, rec) {
                return Err(PipelineError::Manifest(format!(
                    "outputs of stage `{stage}` are missing or modified"
                )));
            }
        }
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> std::io::Result<(String, u64)> {
    let mut hasher = Sha256::new();
    let mut r = BufReader::new(File::open(path)?);
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex::encode(hasher.finalize()), total))
}

fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn outputs_intact(dir: &Path, rec: &StageRecord) -> bool {
    rec.outputs.iter().all(
        |o| matches!(sha256_file(&dir.join(&o.path)), Ok((h, n)) if h == o.sha256 && n == o.bytes),
    )
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stages to execute; all when `None`.
    pub stages: Option<Vec<Stage>>,
    /// Rebuild the requested stages even when they are current.
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Ran,
    Skipped,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub outcomes: Vec<(Stage, Outcome, Duration)>,
    pub manifest: Manifest,
}

/// Artifacts loaded during a run, shared between stages.
#[derive(Default)]
struct Loaded {
    corpus: Option<TimeSlicedCorpus>,
    compass: Option<EmbeddingModel>,
    slices: Option<Vec<EmbeddingModel>>,
    topics: Option<GlobalTopicSpace>,
}

pub struct Pipeline {
    cfg: LoadedConfig,
    dir: PathBuf,
    config_json: Vec<u8>,
    loaded: Loaded,
}

fn stage_err(stage: Stage) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage { stage, message }
}

impl Pipeline {
    pub fn new(cfg: LoadedConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let mut config_json = serde_json::to_vec_pretty(&cfg.config)
            .map_err(|e| PipelineError::Manifest(e.to_string()))?;
        config_json.push(b'\n');
        let dir = cfg.output_dir();
        Ok(Self {
            cfg,
            dir,
            config_json,
            loaded: Loaded::default(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config_hash(&self) -> String {
        sha256_bytes(&self.config_json)
    }

    pub fn run(&mut self, opts: &RunOptions) -> Result<RunSummary, PipelineError> {
        fs::create_dir_all(&self.dir)?;
        let config_hash = self.config_hash();
        let seed = self.cfg.config.seed;
        let mut manifest = match Manifest::load(&self.dir) {
            Ok(m) if m.config_hash == config_hash => m,
            Ok(mut m) => {
                // Stage records stay; their fingerprints decide what reruns.
                m.run_id = config_hash[..12].to_string();
                m.config_hash = config_hash.clone();
                m.seed = seed;
                m
            }
            Err(_) => Manifest::new(config_hash, seed),
        };
        fs::write(self.dir.join(CONFIG_FILE), &self.config_json)?;

        let mut requested: Vec<Stage> = opts.stages.clone().unwrap_or_else(|| Stage::ALL.to_vec());
        requested.sort();
        requested.dedup();
        let mut outcomes = Vec::new();
        for &stage in &requested {
            for &dep in stage.deps() {
                let ready = manifest
                    .stages
                    .get(&dep)
                    .is_some_and(|rec| outputs_intact(&self.dir, rec));
                if !ready {
                    return Err(PipelineError::MissingDependency { stage, needs: dep });
                }
            }
            let fingerprint = self.fingerprint(stage, &manifest)?;
            let start = Instant::now();
            let current = manifest.stages.get(&stage).is_some_and(|rec| {
                rec.fingerprint == fingerprint && outputs_intact(&self.dir, rec)
            });
            if current && !opts.force {
                log::info!("stage={stage} event=skip elapsed=0.000s");
                outcomes.push((stage, Outcome::Skipped, start.elapsed()));
                continue;
            }
            log::info!("stage={stage} event=start elapsed=0.000s");
            let written = self.execute(stage)?;
            let mut outputs = Vec::with_capacity(written.len());
            for rel in written {
                let (sha256, bytes) = sha256_file(&self.dir.join(&rel))?;
                outputs.push(OutputRecord {
                    path: rel,
                    sha256,
                    bytes,
                });
            }
            manifest.stages.insert(
                stage,
                StageRecord {
                    fingerprint,
                    seed: stage.seed(seed),
                    outputs,
                },
            );
            manifest.save(&self.dir)?;
            let elapsed = start.elapsed();
            log::info!(
                "stage={stage} event=done elapsed={:.3}s",
                elapsed.as_secs_f64()
            );
            outcomes.push((stage, Outcome::Ran, elapsed));
        }
        manifest.save(&self.dir)?;
        Ok(RunSummary {
            dir: self.dir.clone(),
            outcomes,
            manifest,
        })
    }

    /// Hash of the stage's settings, its seed, its external input files and
    /// the recorded outputs of its dependencies.
    fn fingerprint(&self, stage: Stage, manifest: &Manifest) -> Result<String, PipelineError> {
        let c = &self.cfg.config;
        let settings = match stage {
            Stage::Corpus => serde_json::to_value(&c.corpus),
            Stage::Compass | Stage::Slices => serde_json::to_value(&c.training),
            Stage::Topics => serde_json::to_value((&c.topics, &c.labeler)),
            Stage::Assignments => Ok(serde_json::Value::Null),
            Stage::Flow => serde_json::to_value(&c.flow),
            Stage::Eval => serde_json::to_value(&c.eval),
        }
        .map_err(|e| PipelineError::Manifest(e.to_string()))?;
        let mut files: Vec<Option<&PathBuf>> = Vec::new();
        match stage {
            Stage::Corpus => {
                files.push(Some(&c.corpus.input));
                files.push(c.corpus.stopwords.as_ref());
                files.push(c.corpus.lemmas.as_ref());
            }
            Stage::Flow => files.push(c.flow.keywords.as_ref()),
            _ => {}
        }
        let mut inputs = Vec::new();
        for f in files.into_iter().flatten() {
            inputs.push(sha256_file(&self.cfg.resolve(f))?.0);
        }
        let deps: BTreeMap<Stage, &Vec<OutputRecord>> = stage
            .deps()
            .iter()
            .filter_map(|d| manifest.stages.get(d).map(|r| (*d, &r.outputs)))
            .collect();
        let doc = serde_json::json!({
            "stage": stage,
            "seed": stage.seed(c.seed),
            "settings": settings,
            "inputs": inputs,
            "deps": deps,
        });
        Ok(sha256_bytes(doc.to_string().as_bytes()))
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn training(&self, stage: Stage) -> TrainingParams {
        TrainingParams {
            seed: stage.seed(self.cfg.config.seed),
            ..self.cfg.config.training.clone()
        }
    }

    fn corpus(&mut self) -> Result<&TimeSlicedCorpus, PipelineError> {
        if self.loaded.corpus.is_none() {
            let c = TimeSlicedCorpus::load(&self.path(paths::CORPUS_DIR))
                .map_err(|e| stage_err(Stage::Corpus)(e.to_string()))?;
            self.loaded.corpus = Some(c);
        }
        Ok(self.loaded.corpus.as_ref().unwrap())
    }

    fn compass(&mut self) -> Result<&EmbeddingModel, PipelineError> {
        if self.loaded.compass.is_none() {
            let m = EmbeddingModel::load(&self.path(paths::COMPASS))
                .map_err(|e| stage_err(Stage::Compass)(e.to_string()))?;
            self.loaded.compass = Some(m);
        }
        Ok(self.loaded.compass.as_ref().unwrap())
    }

    fn slices(&mut self) -> Result<&[EmbeddingModel], PipelineError> {
        if self.loaded.slices.is_none() {
            let n = self.corpus()?.slices.len();
            let models = (0..n)
                .map(|i| EmbeddingModel::load(&self.path(&paths::slice_model(i))))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| stage_err(Stage::Slices)(e.to_string()))?;
            self.loaded.slices = Some(models);
        }
        Ok(self.loaded.slices.as_deref().unwrap())
    }

    fn topics(&mut self) -> Result<&GlobalTopicSpace, PipelineError> {
        if self.loaded.topics.is_none() {
            let t = GlobalTopicSpace::load(&self.path(paths::TOPIC_SPACE))
                .map_err(|e| stage_err(Stage::Topics)(e.to_string()))?;
            self.loaded.topics = Some(t);
        }
        Ok(self.loaded.topics.as_ref().unwrap())
    }

    /// Runs one stage and returns the relative paths it wrote.
    fn execute(&mut self, stage: Stage) -> Result<Vec<String>, PipelineError> {
        let fail = stage_err(stage);
        let fail = |e: &dyn fmt::Display| fail(e.to_string());
        match stage {
            Stage::Corpus => {
                let opts = self.cfg.preprocess_options()?;
                let input = self.cfg.resolve(&self.cfg.config.corpus.input);
                let report = corpus::ingest_path(&input).map_err(|e| fail(&e))?;
                if !report.skipped.is_empty() {
                    log::warn!(
                        "stage=corpus event=skipped_records count={} first={:?}",
                        report.skipped.len(),
                        report.skipped[0].reason
                    );
                }
                let docs = corpus::preprocess(&report.documents, &opts);
                let sliced = corpus::slice(
                    &docs,
                    &self.cfg.config.corpus.slicing(),
                    self.cfg.config.corpus.min_count,
                )
                .map_err(|e| fail(&e))?;
                let dir = self.path(paths::CORPUS_DIR);
                if dir.exists() {
                    fs::remove_dir_all(&dir)?;
                }
                sliced.save(&dir).map_err(|e| fail(&e))?;
                write_json(&self.path(paths::SKIPPED), &report.skipped)?;
                let mut out = vec![paths::CORPUS_MANIFEST.to_string()];
                for s in &sliced.slices {
                    out.push(format!("{}/slice_{:04}.jsonl", paths::CORPUS_DIR, s.index));
                }
                out.push(paths::SKIPPED.to_string());
                self.loaded = Loaded {
                    corpus: Some(sliced),
                    ..Loaded::default()
                };
                Ok(out)
            }
            Stage::Compass => {
                let params = self.training(stage);
                let model = embed::train_compass(self.corpus()?, &params).map_err(|e| fail(&e))?;
                model
                    .save(&self.path(paths::COMPASS), &params)
                    .map_err(|e| fail(&e))?;
                self.loaded.compass = Some(model);
                self.loaded.slices = None;
                self.loaded.topics = None;
                Ok(vec![
                    paths::COMPASS.to_string(),
                    path_str(&embed::sidecar_path(Path::new(paths::COMPASS))),
                ])
            }
            Stage::Slices => {
                let params = self.training(stage);
                self.corpus()?;
                self.compass()?;
                let models = embed::train_slices(
                    self.loaded.compass.as_ref().unwrap(),
                    self.loaded.corpus.as_ref().unwrap(),
                    &params,
                )
                .map_err(|e| fail(&e))?;
                let mut out = Vec::new();
                for (i, m) in models.iter().enumerate() {
                    let rel = paths::slice_model(i);
                    m.save(&self.path(&rel), &params).map_err(|e| fail(&e))?;
                    out.push(rel.clone());
                    out.push(path_str(&embed::sidecar_path(Path::new(&rel))));
                }
                self.loaded.slices = Some(models);
                Ok(out)
            }
            Stage::Topics => {
                let mut params = self.cfg.config.topics.clone();
                params.reducer.seed = stage.seed(self.cfg.config.seed);
                let mut space = topicspace::build_global_topics(self.compass()?, &params)
                    .map_err(|e| fail(&e))?;
                let labeler = match &self.cfg.config.labeler {
                    Some(l) => Some(
                        HttpLabeler::new(
                            &l.url,
                            Duration::from_secs(l.timeout_secs),
                            l.prompt.clone(),
                        )
                        .map_err(|e| fail(&e))?,
                    ),
                    None => None,
                };
                for w in topicspace::label_topics(
                    &mut space,
                    labeler.as_ref().map(|l| l as &dyn Labeler),
                ) {
                    log::warn!("stage=topics event=label_fallback detail={w:?}");
                }
                fs::create_dir_all(self.path("topics"))?;
                space
                    .save(&self.path(paths::TOPIC_SPACE))
                    .map_err(|e| fail(&e))?;
                write_json(&self.path(paths::TOPICS), &space.artifact())?;
                self.loaded.topics = Some(space);
                Ok(vec![
                    paths::TOPIC_SPACE.to_string(),
                    paths::TOPICS.to_string(),
                ])
            }
            Stage::Assignments => {
                self.corpus()?;
                self.slices()?;
                self.topics()?;
                let space = self.loaded.topics.as_ref().unwrap();
                let assignments = self
                    .loaded
                    .slices
                    .as_ref()
                    .unwrap()
                    .par_iter()
                    .map(|m| topicspace::assign_slice(space, m))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| fail(&e))?;
                fs::create_dir_all(self.path("assignments"))?;
                let mut out = Vec::new();
                for (i, a) in assignments.iter().enumerate() {
                    let rel = paths::assignment(i);
                    write_json(&self.path(&rel), a)?;
                    out.push(rel);
                }
                Ok(out)
            }
            Stage::Flow => {
                let seed = stage.seed(self.cfg.config.seed);
                let fc = self.cfg.config.flow.clone();
                let params = FlowParams {
                    reducer: crate::reduce::ReducerParams {
                        seed,
                        ..fc.params.reducer.clone()
                    },
                    scatter: crate::reduce::ReducerParams {
                        seed,
                        ..fc.params.scatter.clone()
                    },
                    ..fc.params.clone()
                };
                let labels: Vec<String> = {
                    let c = self.corpus()?;
                    (0..c.slices.len()).map(|i| c.slice_label(i)).collect()
                };
                let keywords = match &fc.keywords {
                    Some(p) => read_keywords(&self.cfg.resolve(p))?,
                    None => flow::default_keywords(self.compass()?, fc.keyword_count),
                };
                self.slices()?;
                self.topics()?;
                let slices = self.loaded.slices.as_ref().unwrap();
                let topics = &self.loaded.topics.as_ref().unwrap().topics;
                let result = flow::build_flow(slices, &labels, &keywords, topics, &params)
                    .map_err(|e| fail(&e))?;
                let heatmap =
                    flow::movement_heatmap(slices, &result.space.keywords.terms, params.heatmap)
                        .map_err(|e| fail(&e))?;
                fs::create_dir_all(self.path("flow"))?;
                write_json(&self.path(paths::SANKEY), &result.graph)?;
                write_json(&self.path(paths::KEYWORDS), &result.space.keywords)?;
                write_json(&self.path(paths::HEATMAP), &heatmap)?;
                let mut w = BufWriter::new(File::create(self.path(paths::HEATMAP_CSV))?);
                heatmap.write_csv(&mut w)?;
                w.flush()?;
                Ok(vec![
                    paths::SANKEY.to_string(),
                    paths::KEYWORDS.to_string(),
                    paths::HEATMAP.to_string(),
                    paths::HEATMAP_CSV.to_string(),
                ])
            }
            Stage::Eval => {
                let ec = self.cfg.config.eval.clone();
                self.corpus()?;
                self.compass()?;
                self.slices()?;
                self.topics()?;
                let l = &self.loaded;
                let report = eval::run_protocol(
                    l.topics.as_ref().unwrap(),
                    l.compass.as_ref().unwrap(),
                    l.slices.as_ref().unwrap(),
                    l.corpus.as_ref().unwrap(),
                    &ProtocolParams {
                        topic_counts: ec.topic_counts,
                        reference: ec.reference,
                        dataset: ec.dataset,
                        ..ProtocolParams::default()
                    },
                )
                .map_err(|e| fail(&e))?;
                fs::create_dir_all(self.path("metrics"))?;
                write_json(&self.path(paths::METRICS), &report)?;
                let mut w = BufWriter::new(File::create(self.path(paths::METRICS_CSV))?);
                eval::write_table(&mut w, std::slice::from_ref(&report))?;
                w.flush()?;
                Ok(vec![
                    paths::METRICS.to_string(),
                    paths::METRICS_CSV.to_string(),
                ])
            }
        }
    }
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// One keyword per line; blank lines and `#` comments are ignored.
pub fn read_keywords(path: &Path) -> Result<Vec<String>, PipelineError> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect())
}
