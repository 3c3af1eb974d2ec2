//! Compass and time-slice embedding training.
//!
//! All architectures optimise the negative-sampling objective with a
//! unigram^0.75 noise distribution. The compass is trained on the whole
//! corpus; every slice model copies the compass output ("target") rows for
//! its local vocabulary and never updates them, which places all slice word
//! and document vectors in one shared coordinate system.
//!
//! Training is single-threaded per model so a fixed seed gives bit-identical
//! matrices. Independent slices are trained in parallel by [`train_slices`].

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusSlice, TimeSlicedCorpus};
use crate::vector::{axpy, dot, dot_f64, norm_f64};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("invalid training parameters: {0}")]
    InvalidParams(String),
    #[error("cannot train on an empty vocabulary")]
    EmptyVocabulary,
    #[error("slice term {0:?} is missing from the compass vocabulary")]
    MissingCompassTerm(String),
    #[error("expected a compass model")]
    NotCompass,
    #[error("slice architecture {slice:?} does not match compass architecture {compass:?}")]
    ArchitectureMismatch {
        compass: Architecture,
        slice: Architecture,
    },
    #[error("no token is in the model vocabulary")]
    NoKnownTokens,
    #[error("model artifact: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Word2Vec CBOW; word vectors only.
    Cbow,
    /// Distributed memory paragraph vectors: the mean of the document vector
    /// and the context word vectors predicts the centre word.
    PvDm,
    /// Distributed bag-of-words paragraph vectors. Word vectors are trained
    /// alongside with interleaved skip-gram updates so words and documents
    /// share one space.
    PvDbow,
}

impl Architecture {
    pub fn has_documents(self) -> bool {
        !matches!(self, Architecture::Cbow)
    }

    fn code(self) -> u8 {
        match self {
            Architecture::Cbow => 0,
            Architecture::PvDm => 1,
            Architecture::PvDbow => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Architecture::Cbow),
            1 => Some(Architecture::PvDm),
            2 => Some(Architecture::PvDbow),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingParams {
    pub dim: usize,
    /// Maximum context radius in tokens.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    /// Final learning rate of the linear decay.
    pub min_learning_rate: f32,
    pub subsample_threshold: f64,
    pub architecture: Architecture,
    pub seed: u64,
    /// Passes used by [`infer_doc`].
    pub inference_epochs: usize,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            dim: 128,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_learning_rate: 1e-4,
            subsample_threshold: 1e-3,
            architecture: Architecture::PvDbow,
            seed: 0,
            inference_epochs: 50,
        }
    }
}

impl TrainingParams {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: &str| Err(EmbedError::InvalidParams(m.to_string()));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.negatives < 1 {
            return bad("negatives must be at least 1");
        }
        if self.window < 1 {
            return bad("window must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.subsample_threshold > 0.0 && self.subsample_threshold <= 1.0) {
            return bad("subsample_threshold must be in (0, 1]");
        }
        if self.min_learning_rate < 0.0 || self.min_learning_rate > self.learning_rate {
            return bad("min_learning_rate must be in [0, learning_rate]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type", content = "index")]
pub enum ModelKind {
    Compass,
    Slice(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub kind: ModelKind,
    pub architecture: Architecture,
    terms: Vec<String>,
    /// Occurrences of each term in the training text.
    counts: Vec<u64>,
    term_index: HashMap<String, usize>,
    doc_ids: Vec<String>,
    doc_index: HashMap<String, usize>,
    pub word_input: Array2<f32>,
    pub doc_input: Option<Array2<f32>>,
    pub target: Array2<f32>,
    /// Mean negative-sampling loss per prediction, one entry per epoch.
    pub epoch_losses: Vec<f64>,
}

impl EmbeddingModel {
    fn empty_shell(
        kind: ModelKind,
        architecture: Architecture,
        terms: Vec<String>,
        counts: Vec<u64>,
        doc_ids: Vec<String>,
        dim: usize,
    ) -> Self {
        let term_index = index_of(&terms);
        let doc_index = index_of(&doc_ids);
        let nw = terms.len();
        let nd = doc_ids.len();
        Self {
            kind,
            architecture,
            terms,
            counts,
            term_index,
            doc_ids,
            doc_index,
            word_input: Array2::zeros((nw, dim)),
            doc_input: architecture
                .has_documents()
                .then(|| Array2::zeros((nd, dim))),
            target: Array2::zeros((nw, dim)),
            epoch_losses: Vec::new(),
        }
    }

    /// Assembles a model from precomputed matrices. Row `i` of `word_input`
    /// and `target` belongs to `terms[i]`; row `j` of `doc_input` to
    /// `doc_ids[j]`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        kind: ModelKind,
        architecture: Architecture,
        terms: Vec<String>,
        counts: Vec<u64>,
        doc_ids: Vec<String>,
        word_input: Array2<f32>,
        doc_input: Option<Array2<f32>>,
        target: Array2<f32>,
    ) -> Result<Self, EmbedError> {
        let dim = word_input.ncols();
        let shape_ok = word_input.nrows() == terms.len()
            && counts.len() == terms.len()
            && target.dim() == (terms.len(), dim)
            && doc_input
                .as_ref()
                .is_none_or(|d| d.dim() == (doc_ids.len(), dim));
        if !shape_ok {
            return Err(EmbedError::Format("matrix shapes do not match maps".into()));
        }
        Ok(Self {
            kind,
            architecture,
            term_index: index_of(&terms),
            doc_index: index_of(&doc_ids),
            terms,
            counts,
            doc_ids,
            word_input: word_input.as_standard_layout().to_owned(),
            doc_input: doc_input.map(|d| d.as_standard_layout().to_owned()),
            target: target.as_standard_layout().to_owned(),
            epoch_losses: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.word_input.ncols()
    }

    /// A slice model trained on zero documents.
    pub fn is_degenerate(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn term_row(&self, term: &str) -> Option<usize> {
        self.term_index.get(term).copied()
    }

    pub fn doc_row(&self, id: &str) -> Option<usize> {
        self.doc_index.get(id).copied()
    }

    pub fn word_vector(&self, term: &str) -> Option<&[f32]> {
        self.term_row(term)
            .map(|r| self.word_input.row(r).to_slice().expect("standard layout"))
    }

    pub fn doc_vector(&self, id: &str) -> Option<&[f32]> {
        let row = self.doc_row(id)?;
        self.doc_input
            .as_ref()
            .map(|m| m.row(row).to_slice().expect("standard layout"))
    }

    pub fn target_row(&self, term: &str) -> Option<&[f32]> {
        self.term_row(term)
            .map(|r| self.target.row(r).to_slice().expect("standard layout"))
    }
}

fn index_of(items: &[String]) -> HashMap<String, usize> {
    items
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect()
}

/// Cumulative unigram^0.75 table sampled by binary search.
struct NoiseTable {
    cumulative: Vec<f64>,
}

impl NoiseTable {
    fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        Self { cumulative }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.cumulative.last().unwrap();
        let u = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One negative-sampling prediction: `hidden` predicts `positive` against
/// `negatives` noise words. Accumulates the input gradient into `grad` and,
/// when `update_target` is set, updates the target rows in place. Returns the
/// loss.
#[allow(clippy::too_many_arguments)]
fn predict(
    hidden: &[f32],
    positive: usize,
    target: &mut [f32],
    dim: usize,
    noise: &NoiseTable,
    negatives: usize,
    lr: f32,
    update_target: bool,
    grad: &mut [f32],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut loss = 0.0f64;
    for k in 0..=negatives {
        let (word, label) = if k == 0 {
            (positive, 1.0f32)
        } else {
            let w = noise.sample(rng);
            if w == positive {
                continue;
            }
            (w, 0.0f32)
        };
        let row = &mut target[word * dim..(word + 1) * dim];
        let f = dot(hidden, row);
        let p = sigmoid(f);
        loss -= if label > 0.5 {
            (p.max(1e-7) as f64).ln()
        } else {
            ((1.0 - p).max(1e-7) as f64).ln()
        };
        let g = (label - p) * lr;
        axpy(g, row, grad);
        if update_target {
            axpy(g, hidden, row);
        }
    }
    loss
}

/// [`predict`] against read-only target rows.
#[allow(clippy::too_many_arguments)]
fn predict_frozen(
    hidden: &[f32],
    positive: usize,
    target: &[f32],
    dim: usize,
    noise: &NoiseTable,
    negatives: usize,
    lr: f32,
    grad: &mut [f32],
    rng: &mut ChaCha8Rng,
) {
    for k in 0..=negatives {
        let (word, label) = if k == 0 {
            (positive, 1.0f32)
        } else {
            let w = noise.sample(rng);
            if w == positive {
                continue;
            }
            (w, 0.0f32)
        };
        let row = &target[word * dim..(word + 1) * dim];
        let g = (label - sigmoid(dot(hidden, row))) * lr;
        axpy(g, row, grad);
    }
}

fn init_uniform(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Array2<f32> {
    let scale = 0.5 / dim as f32;
    Array2::from_shape_fn((rows, dim), |_| (rng.random::<f32>() * 2.0 - 1.0) * scale)
}

/// Documents as local row ids.
struct TrainingSet {
    docs: Vec<Vec<usize>>,
    total_tokens: u64,
}

struct Trainer<'a> {
    params: &'a TrainingParams,
    noise: NoiseTable,
    keep_prob: Vec<f32>,
    update_target: bool,
    rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    fn new(params: &'a TrainingParams, counts: &[u64], update_target: bool, seed: u64) -> Self {
        let total: u64 = counts.iter().sum();
        let t = params.subsample_threshold * total as f64;
        let keep_prob = counts
            .iter()
            .map(|&c| {
                let f = c as f64;
                (((f / t).sqrt() + 1.0) * t / f).min(1.0) as f32
            })
            .collect();
        Self {
            params,
            noise: NoiseTable::new(counts),
            keep_prob,
            update_target,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn train(&mut self, model: &mut EmbeddingModel, data: &TrainingSet) -> Vec<f64> {
        let p = self.params;
        let dim = model.dim();
        let total_work = (p.epochs as u64 * data.total_tokens).max(1) as f64;
        let mut done = 0u64;
        let mut order: Vec<usize> = (0..data.docs.len()).collect();
        let mut losses = Vec::with_capacity(p.epochs);
        let mut hidden = vec![0f32; dim];
        let mut grad = vec![0f32; dim];
        let mut sentence = Vec::new();

        for _ in 0..p.epochs {
            order.shuffle(&mut self.rng);
            let mut epoch_loss = 0.0;
            let mut predictions = 0u64;
            for &d in &order {
                let progress = done as f64 / total_work;
                let lr = (p.learning_rate as f64
                    - (p.learning_rate - p.min_learning_rate) as f64 * progress)
                    .max(p.min_learning_rate as f64) as f32;
                done += data.docs[d].len() as u64;

                sentence.clear();
                for &w in &data.docs[d] {
                    if self.keep_prob[w] >= 1.0 || self.rng.random::<f32>() < self.keep_prob[w] {
                        sentence.push(w);
                    }
                }
                let (loss, n) = match model.architecture {
                    Architecture::Cbow => {
                        self.cbow_doc(model, &sentence, None, lr, &mut hidden, &mut grad)
                    }
                    Architecture::PvDm => {
                        self.cbow_doc(model, &sentence, Some(d), lr, &mut hidden, &mut grad)
                    }
                    Architecture::PvDbow => self.dbow_doc(model, &sentence, d, lr, &mut grad),
                };
                epoch_loss += loss;
                predictions += n;
            }
            losses.push(if predictions > 0 {
                epoch_loss / predictions as f64
            } else {
                0.0
            });
        }
        losses
    }

    fn window_bounds(&mut self, pos: usize, len: usize) -> (usize, usize) {
        let reduced = self.rng.random_range(0..self.params.window);
        let radius = self.params.window - reduced;
        (pos.saturating_sub(radius), (pos + radius + 1).min(len))
    }

    /// CBOW, or PV-DM when `doc` is given.
    fn cbow_doc(
        &mut self,
        model: &mut EmbeddingModel,
        sentence: &[usize],
        doc: Option<usize>,
        lr: f32,
        hidden: &mut [f32],
        grad: &mut [f32],
    ) -> (f64, u64) {
        let dim = model.dim();
        let negatives = self.params.negatives;
        let mut loss = 0.0;
        let mut n = 0;
        for pos in 0..sentence.len() {
            let (lo, hi) = self.window_bounds(pos, sentence.len());
            hidden.fill(0.0);
            let mut count = 0usize;
            {
                let words = model.word_input.as_slice().unwrap();
                for c in (lo..hi).filter(|&c| c != pos) {
                    let w = sentence[c];
                    axpy(1.0, &words[w * dim..(w + 1) * dim], hidden);
                    count += 1;
                }
                if let Some(d) = doc {
                    let docs = model.doc_input.as_ref().unwrap().as_slice().unwrap();
                    axpy(1.0, &docs[d * dim..(d + 1) * dim], hidden);
                    count += 1;
                }
            }
            if count == 0 {
                continue;
            }
            let inv = 1.0 / count as f32;
            hidden.iter_mut().for_each(|h| *h *= inv);
            grad.fill(0.0);
            loss += predict(
                hidden,
                sentence[pos],
                model.target.as_slice_mut().unwrap(),
                dim,
                &self.noise,
                negatives,
                lr,
                self.update_target,
                grad,
                &mut self.rng,
            );
            n += 1;
            let words = model.word_input.as_slice_mut().unwrap();
            for c in (lo..hi).filter(|&c| c != pos) {
                let w = sentence[c];
                axpy(1.0, grad, &mut words[w * dim..(w + 1) * dim]);
            }
            if let Some(d) = doc {
                let docs = model.doc_input.as_mut().unwrap().as_slice_mut().unwrap();
                axpy(1.0, grad, &mut docs[d * dim..(d + 1) * dim]);
            }
        }
        (loss, n)
    }

    /// PV-DBOW with interleaved skip-gram word training.
    fn dbow_doc(
        &mut self,
        model: &mut EmbeddingModel,
        sentence: &[usize],
        d: usize,
        lr: f32,
        grad: &mut [f32],
    ) -> (f64, u64) {
        let dim = model.dim();
        let negatives = self.params.negatives;
        let mut loss = 0.0;
        let mut n = 0;
        let mut hidden = vec![0f32; dim];
        for pos in 0..sentence.len() {
            let target = sentence[pos];
            {
                let docs = model.doc_input.as_ref().unwrap().as_slice().unwrap();
                hidden.copy_from_slice(&docs[d * dim..(d + 1) * dim]);
            }
            grad.fill(0.0);
            loss += predict(
                &hidden,
                target,
                model.target.as_slice_mut().unwrap(),
                dim,
                &self.noise,
                negatives,
                lr,
                self.update_target,
                grad,
                &mut self.rng,
            );
            n += 1;
            {
                let docs = model.doc_input.as_mut().unwrap().as_slice_mut().unwrap();
                axpy(1.0, grad, &mut docs[d * dim..(d + 1) * dim]);
            }

            let (lo, hi) = self.window_bounds(pos, sentence.len());
            for c in (lo..hi).filter(|&c| c != pos) {
                let w = sentence[c];
                {
                    let words = model.word_input.as_slice().unwrap();
                    hidden.copy_from_slice(&words[w * dim..(w + 1) * dim]);
                }
                grad.fill(0.0);
                loss += predict(
                    &hidden,
                    target,
                    model.target.as_slice_mut().unwrap(),
                    dim,
                    &self.noise,
                    negatives,
                    lr,
                    self.update_target,
                    grad,
                    &mut self.rng,
                );
                n += 1;
                let words = model.word_input.as_slice_mut().unwrap();
                axpy(1.0, grad, &mut words[w * dim..(w + 1) * dim]);
            }
        }
        (loss, n)
    }
}

/// Trains the atemporal compass over every document of every slice.
pub fn train_compass(
    corpus: &TimeSlicedCorpus,
    params: &TrainingParams,
) -> Result<EmbeddingModel, EmbedError> {
    params.validate()?;
    let vocab = &corpus.vocabulary;
    if vocab.is_empty() {
        return Err(EmbedError::EmptyVocabulary);
    }
    let docs: Vec<_> = corpus.documents().collect();
    let mut model = EmbeddingModel::empty_shell(
        ModelKind::Compass,
        params.architecture,
        vocab.terms().to_vec(),
        vocab.counts().to_vec(),
        docs.iter().map(|d| d.id.clone()).collect(),
        params.dim,
    );
    let data = TrainingSet {
        total_tokens: docs.iter().map(|d| d.tokens.len() as u64).sum(),
        docs: docs
            .iter()
            .map(|d| d.tokens.iter().map(|&t| t as usize).collect())
            .collect(),
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(params.seed);
    model.word_input = init_uniform(model.terms.len(), params.dim, &mut init_rng);
    if let Some(doc_input) = model.doc_input.as_mut() {
        *doc_input = init_uniform(docs.len(), params.dim, &mut init_rng);
    }
    let counts = model.counts.clone();
    let mut trainer = Trainer::new(params, &counts, true, params.seed.wrapping_add(1));
    model.epoch_losses = trainer.train(&mut model, &data);
    Ok(model)
}

/// Trains one slice model whose target rows are copied from the compass and
/// frozen. Input word and document vectors start from a fresh random
/// initialisation. An empty slice yields a degenerate model with no rows.
pub fn train_slice(
    compass: &EmbeddingModel,
    corpus: &TimeSlicedCorpus,
    slice: &CorpusSlice,
    params: &TrainingParams,
) -> Result<EmbeddingModel, EmbedError> {
    params.validate()?;
    if compass.kind != ModelKind::Compass {
        return Err(EmbedError::NotCompass);
    }
    if compass.architecture != params.architecture {
        return Err(EmbedError::ArchitectureMismatch {
            compass: compass.architecture,
            slice: params.architecture,
        });
    }
    let dim = compass.dim();
    let terms: Vec<String> = slice
        .local_vocab
        .iter()
        .map(|&t| corpus.vocabulary.term(t).to_string())
        .collect();
    let mut model = EmbeddingModel::empty_shell(
        ModelKind::Slice(slice.index),
        params.architecture,
        terms,
        slice.local_counts(),
        slice.documents.iter().map(|d| d.id.clone()).collect(),
        dim,
    );
    if slice.is_empty() {
        return Ok(model);
    }
    for (row, term) in model.terms.iter().enumerate() {
        let src = compass
            .target_row(term)
            .ok_or_else(|| EmbedError::MissingCompassTerm(term.clone()))?;
        model
            .target
            .row_mut(row)
            .as_slice_mut()
            .unwrap()
            .copy_from_slice(src);
    }
    let local: HashMap<u32, usize> = slice
        .local_vocab
        .iter()
        .enumerate()
        .map(|(i, &g)| (g, i))
        .collect();
    let data = TrainingSet {
        total_tokens: slice.documents.iter().map(|d| d.tokens.len() as u64).sum(),
        docs: slice
            .documents
            .iter()
            .map(|d| d.tokens.iter().map(|t| local[t]).collect())
            .collect(),
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(params.seed);
    model.word_input = init_uniform(model.terms.len(), dim, &mut init_rng);
    if let Some(doc_input) = model.doc_input.as_mut() {
        *doc_input = init_uniform(slice.documents.len(), dim, &mut init_rng);
    }
    let counts = model.counts.clone();
    let mut trainer = Trainer::new(params, &counts, false, params.seed.wrapping_add(1));
    model.epoch_losses = trainer.train(&mut model, &data);
    Ok(model)
}

/// Seed used for slice `index` given the stage seed.
pub fn slice_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains every slice in parallel. Each slice is trained single-threaded
/// with its own derived seed, so results do not depend on the thread count.
pub fn train_slices(
    compass: &EmbeddingModel,
    corpus: &TimeSlicedCorpus,
    params: &TrainingParams,
) -> Result<Vec<EmbeddingModel>, EmbedError> {
    corpus
        .slices
        .par_iter()
        .map(|s| {
            let p = TrainingParams {
                seed: slice_seed(params.seed, s.index),
                ..params.clone()
            };
            train_slice(compass, corpus, s, &p)
        })
        .collect()
}

/// Places an unseen token sequence into the model's document space by
/// optimising a fresh document row with every other weight frozen. Models
/// without document vectors return the mean of the known word vectors.
pub fn infer_doc<S: AsRef<str>>(
    model: &EmbeddingModel,
    tokens: &[S],
    params: &TrainingParams,
) -> Result<Vec<f32>, EmbedError> {
    let rows: Vec<usize> = tokens
        .iter()
        .filter_map(|t| model.term_row(t.as_ref()))
        .collect();
    if rows.is_empty() {
        return Err(EmbedError::NoKnownTokens);
    }
    let dim = model.dim();
    if !model.architecture.has_documents() {
        let words = model.word_input.as_slice().unwrap();
        return Ok(crate::vector::mean_rows(
            rows.iter().map(|&r| &words[r * dim..(r + 1) * dim]),
            dim,
        )
        .unwrap());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let scale = 0.5 / dim as f32;
    let mut doc: Vec<f32> = (0..dim)
        .map(|_| (rng.random::<f32>() * 2.0 - 1.0) * scale)
        .collect();
    let noise = NoiseTable::new(&model.counts);
    let target = model.target.as_slice().unwrap();
    let words = model.word_input.as_slice().unwrap();
    let epochs = params.inference_epochs.max(1);
    let mut hidden = vec![0f32; dim];
    let mut grad = vec![0f32; dim];
    for epoch in 0..epochs {
        let progress = epoch as f32 / epochs as f32;
        let lr = (params.learning_rate
            - (params.learning_rate - params.min_learning_rate) * progress)
            .max(params.min_learning_rate);
        for pos in 0..rows.len() {
            grad.fill(0.0);
            match model.architecture {
                Architecture::PvDbow => {
                    hidden.copy_from_slice(&doc);
                }
                Architecture::PvDm => {
                    let reduced = rng.random_range(0..params.window);
                    let radius = params.window - reduced;
                    let lo = pos.saturating_sub(radius);
                    let hi = (pos + radius + 1).min(rows.len());
                    hidden.copy_from_slice(&doc);
                    let mut count = 1;
                    for c in (lo..hi).filter(|&c| c != pos) {
                        axpy(1.0, &words[rows[c] * dim..(rows[c] + 1) * dim], &mut hidden);
                        count += 1;
                    }
                    let inv = 1.0 / count as f32;
                    hidden.iter_mut().for_each(|h| *h *= inv);
                }
                Architecture::Cbow => unreachable!(),
            }
            predict_frozen(
                &hidden,
                rows[pos],
                target,
                dim,
                &noise,
                params.negatives,
                lr,
                &mut grad,
                &mut rng,
            );
            axpy(1.0, &grad, &mut doc);
        }
    }
    Ok(doc)
}

/// Precomputed norms for repeated exact cosine top-n queries over the word
/// input vectors.
pub struct WordSearch<'a> {
    model: &'a EmbeddingModel,
    norms: Vec<f64>,
}

impl<'a> WordSearch<'a> {
    pub fn new(model: &'a EmbeddingModel) -> Self {
        let norms = model
            .word_input
            .rows()
            .into_iter()
            .map(|r| norm_f64(r.as_slice().unwrap()))
            .collect();
        Self { model, norms }
    }

    /// All words scored by cosine, best first, ties by term.
    pub fn nearest(&self, query: &[f32], n: usize) -> Vec<(String, f64)> {
        self.nearest_rows(query, n)
            .into_iter()
            .map(|(r, c)| (self.model.terms[r].clone(), c))
            .collect()
    }

    pub fn nearest_rows(&self, query: &[f32], n: usize) -> Vec<(usize, f64)> {
        let qn = norm_f64(query);
        let words = self.model.word_input.as_slice().unwrap();
        let dim = self.model.dim();
        let mut scored: Vec<(usize, f64)> = self
            .norms
            .iter()
            .enumerate()
            .map(|(r, &wn)| {
                let c = if wn == 0.0 || qn == 0.0 {
                    0.0
                } else {
                    dot_f64(query, &words[r * dim..(r + 1) * dim]) / (wn * qn)
                };
                (r, c)
            })
            .collect();
        let terms = &self.model.terms;
        let cmp = |a: &(usize, f64), b: &(usize, f64)| {
            b.1.total_cmp(&a.1)
                .then_with(|| terms[a.0].cmp(&terms[b.0]))
        };
        let n = n.min(scored.len());
        if n == 0 {
            return Vec::new();
        }
        if n < scored.len() {
            scored.select_nth_unstable_by(n - 1, cmp);
            scored.truncate(n);
        }
        scored.sort_by(cmp);
        scored
    }
}

/// Exact top-`n` words by cosine to `query`, descending, ties broken by term.
/// Returns at most `|V|` entries.
pub fn nearest_words(model: &EmbeddingModel, query: &[f32], n: usize) -> Vec<(String, f64)> {
    WordSearch::new(model).nearest(query, n)
}

const MAGIC: &[u8; 8] = b"TTECEMB\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Sidecar {
    kind: ModelKind,
    params: TrainingParams,
    epoch_losses: Vec<f64>,
}

fn write_matrix<W: Write>(w: &mut W, m: &Array2<f32>) -> std::io::Result<()> {
    for &x in m.iter() {
        w.write_f32::<LittleEndian>(x)?;
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> std::io::Result<Array2<f32>> {
    let mut data = vec![0f32; rows * cols];
    r.read_f32_into::<LittleEndian>(&mut data)?;
    Ok(Array2::from_shape_vec((rows, cols), data).expect("shape matches buffer"))
}

fn write_strings<W: Write>(w: &mut W, items: &[String]) -> std::io::Result<()> {
    for s in items {
        w.write_u32::<LittleEndian>(s.len() as u32)?;
        w.write_all(s.as_bytes())?;
    }
    Ok(())
}

fn read_strings<R: Read>(r: &mut R, n: usize) -> Result<Vec<String>, EmbedError> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        out.push(String::from_utf8(buf).map_err(|e| EmbedError::Format(e.to_string()))?);
    }
    Ok(out)
}

impl EmbeddingModel {
    /// Binary layout (little endian): magic, version u32, kind u8, slice index
    /// u32, architecture u8, has-doc u8, dim u32, word count u32, doc count
    /// u32; then word_input, doc_input (if present) and target as row-major
    /// f32; then term counts u64, terms and doc ids as length-prefixed UTF-8.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), EmbedError> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        let (kind, index) = match self.kind {
            ModelKind::Compass => (0u8, 0u32),
            ModelKind::Slice(i) => (1u8, i as u32),
        };
        w.write_u8(kind)?;
        w.write_u32::<LittleEndian>(index)?;
        w.write_u8(self.architecture.code())?;
        w.write_u8(self.doc_input.is_some() as u8)?;
        w.write_u32::<LittleEndian>(self.dim() as u32)?;
        w.write_u32::<LittleEndian>(self.terms.len() as u32)?;
        w.write_u32::<LittleEndian>(self.doc_ids.len() as u32)?;
        write_matrix(w, &self.word_input)?;
        if let Some(d) = &self.doc_input {
            write_matrix(w, d)?;
        }
        write_matrix(w, &self.target)?;
        for &c in &self.counts {
            w.write_u64::<LittleEndian>(c)?;
        }
        write_strings(w, &self.terms)?;
        write_strings(w, &self.doc_ids)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, EmbedError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(EmbedError::Format("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(EmbedError::Format(format!("unsupported version {version}")));
        }
        let kind = match (r.read_u8()?, r.read_u32::<LittleEndian>()?) {
            (0, _) => ModelKind::Compass,
            (1, i) => ModelKind::Slice(i as usize),
            (k, _) => return Err(EmbedError::Format(format!("unknown kind {k}"))),
        };
        let code = r.read_u8()?;
        let architecture = Architecture::from_code(code)
            .ok_or_else(|| EmbedError::Format(format!("unknown architecture {code}")))?;
        let has_docs = r.read_u8()? == 1;
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let nw = r.read_u32::<LittleEndian>()? as usize;
        let nd = r.read_u32::<LittleEndian>()? as usize;
        let word_input = read_matrix(r, nw, dim)?;
        let doc_input = if has_docs {
            Some(read_matrix(r, nd, dim)?)
        } else {
            None
        };
        let target = read_matrix(r, nw, dim)?;
        let mut counts = vec![0u64; nw];
        r.read_u64_into::<LittleEndian>(&mut counts)?;
        let terms = read_strings(r, nw)?;
        let doc_ids = read_strings(r, nd)?;
        Ok(Self {
            kind,
            architecture,
            term_index: index_of(&terms),
            doc_index: index_of(&doc_ids),
            terms,
            counts,
            doc_ids,
            word_input,
            doc_input,
            target,
            epoch_losses: Vec::new(),
        })
    }

    /// Writes `<path>` (binary) and `<path>.json` (parameters and losses).
    pub fn save(&self, path: &Path, params: &TrainingParams) -> Result<(), EmbedError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        let sidecar = Sidecar {
            kind: self.kind,
            params: params.clone(),
            epoch_losses: self.epoch_losses.clone(),
        };
        fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let mut model = Self::read_from(&mut BufReader::new(File::open(path)?))?;
        if let Ok(bytes) = fs::read(sidecar_path(path)) {
            let sidecar: Sidecar = serde_json::from_slice(&bytes)?;
            model.epoch_losses = sidecar.epoch_losses;
        }
        Ok(model)
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
