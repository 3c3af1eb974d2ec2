//! Topic coherence (NPMI) and topic diversity, and the sweep protocol that
//! averages them over topic counts and time slices.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TimeSlicedCorpus;
use crate::embed::EmbeddingModel;
use crate::reduce::csv_field;
use crate::topicspace::{
    assign_placement, place_slice, GlobalTopicSpace, SlicePlacement, TopicError,
};

/// Descriptor terms per topic that enter both metrics.
pub const TOP_N: usize = 10;

pub const TOPIC_COUNTS: [usize; 5] = [10, 20, 30, 40, 50];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("reference corpus has no documents")]
    EmptyReference,
    #[error("no topics to evaluate")]
    NoTopics,
    #[error("no slice produced topics for any topic count")]
    NothingEvaluated,
    #[error(transparent)]
    Topics(#[from] TopicError),
}

/// Document frequencies of a reference corpus, kept as an inverted index.
#[derive(Debug, Clone, Default)]
pub struct ReferenceCorpus {
    n_docs: usize,
    postings: HashMap<String, Vec<u32>>,
}

impl ReferenceCorpus {
    /// One entry per document; repeated terms within a document count once.
    pub fn from_documents<I, D, S>(docs: I) -> Self
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut postings: HashMap<String, Vec<u32>> = HashMap::new();
        let mut n_docs = 0;
        for (i, doc) in docs.into_iter().enumerate() {
            n_docs += 1;
            for term in doc {
                let list = postings.entry(term.as_ref().to_string()).or_default();
                if list.last() != Some(&(i as u32)) {
                    list.push(i as u32);
                }
            }
        }
        Self { n_docs, postings }
    }

    /// The documents of one slice.
    pub fn slice(corpus: &TimeSlicedCorpus, index: usize) -> Self {
        let vocab = &corpus.vocabulary;
        Self::from_documents(
            corpus.slices[index]
                .documents
                .iter()
                .map(|d| d.tokens.iter().map(|&t| vocab.term(t))),
        )
    }

    /// Every document of the corpus.
    pub fn whole(corpus: &TimeSlicedCorpus) -> Self {
        let vocab = &corpus.vocabulary;
        Self::from_documents(
            corpus
                .documents()
                .map(|d| d.tokens.iter().map(|&t| vocab.term(t))),
        )
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn doc_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn co_frequency(&self, a: &str, b: &str) -> usize {
        let (Some(x), Some(y)) = (self.postings.get(a), self.postings.get(b)) else {
            return 0;
        };
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < x.len() && j < y.len() {
            match x[i].cmp(&y[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// NPMI of one pair from document counts. Pairs that never co-occur score
/// -1; pairs present in every document score 1.
pub fn npmi_pair(df_a: usize, df_b: usize, co: usize, n_docs: usize) -> f64 {
    if co == 0 {
        return -1.0;
    }
    let n = n_docs as f64;
    let p_ab = co as f64 / n;
    let p_a = df_a as f64 / n;
    let p_b = df_b as f64 / n;
    if p_ab >= 1.0 {
        return 1.0;
    }
    ((p_ab / (p_a * p_b)).ln() / -p_ab.ln()).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    pub tc: f64,
    pub per_topic: Vec<f64>,
    /// Pairs scored across all topics.
    pub pairs: usize,
    /// Pairs skipped because a term is absent from the reference corpus.
    pub skipped_pairs: usize,
}

impl Coherence {
    pub fn skip_rate(&self) -> f64 {
        let total = self.pairs + self.skipped_pairs;
        if total == 0 {
            0.0
        } else {
            self.skipped_pairs as f64 / total as f64
        }
    }
}

fn dedup(terms: &[String]) -> Vec<&str> {
    let mut seen = HashSet::new();
    terms
        .iter()
        .map(String::as_str)
        .filter(|t| seen.insert(*t))
        .collect()
}

/// Mean over topics of the mean pairwise NPMI of each topic's terms. Pairs
/// with a term missing from the reference are skipped; a topic with fewer
/// than two reference terms scores -1.
pub fn npmi(topics: &[Vec<String>], reference: &ReferenceCorpus) -> Result<Coherence, EvalError> {
    if reference.n_docs == 0 {
        return Err(EvalError::EmptyReference);
    }
    if topics.is_empty() {
        return Err(EvalError::NoTopics);
    }
    let mut per_topic = Vec::with_capacity(topics.len());
    let (mut pairs, mut skipped) = (0, 0);
    for topic in topics {
        let terms = dedup(topic);
        let present: Vec<&str> = terms
            .iter()
            .copied()
            .filter(|t| reference.doc_frequency(t) > 0)
            .collect();
        let total = terms.len() * terms.len().saturating_sub(1) / 2;
        let scored = present.len() * present.len().saturating_sub(1) / 2;
        skipped += total - scored;
        if present.len() < 2 {
            per_topic.push(-1.0);
            continue;
        }
        let mut sum = 0.0;
        for i in 0..present.len() {
            for j in i + 1..present.len() {
                sum += npmi_pair(
                    reference.doc_frequency(present[i]),
                    reference.doc_frequency(present[j]),
                    reference.co_frequency(present[i], present[j]),
                    reference.n_docs,
                );
            }
        }
        pairs += scored;
        per_topic.push(sum / scored as f64);
    }
    let tc = per_topic.iter().sum::<f64>() / per_topic.len() as f64;
    Ok(Coherence {
        tc,
        per_topic,
        pairs,
        skipped_pairs: skipped,
    })
}

/// Unique terms over all topics' first [`TOP_N`] terms, divided by the
/// number of terms considered. Longer lists are truncated; shorter lists
/// are not padded.
pub fn topic_diversity(topics: &[Vec<String>]) -> Result<f64, EvalError> {
    let considered: usize = topics.iter().map(|t| t.len().min(TOP_N)).sum();
    if considered == 0 {
        return Err(EvalError::NoTopics);
    }
    let unique: HashSet<&str> = topics
        .iter()
        .flat_map(|t| t.iter().take(TOP_N).map(String::as_str))
        .collect();
    Ok(unique.len() as f64 / considered as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceMode {
    /// Each slice is scored against its own documents.
    Slice,
    /// Every slice is scored against the whole corpus.
    Corpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub topic_counts: Vec<usize>,
    pub reference: ReferenceMode,
    pub method: String,
    pub dataset: String,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            topic_counts: TOPIC_COUNTS.to_vec(),
            reference: ReferenceMode::Slice,
            method: "TTEC".into(),
            dataset: "corpus".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub slice: usize,
    pub topic_count: usize,
    /// Topics with documents in the slice.
    pub topics: usize,
    pub tc: f64,
    pub td: f64,
    pub skip_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceAverage {
    pub slice: usize,
    pub tc: f64,
    pub td: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub dataset: String,
    pub reference: ReferenceMode,
    pub topic_counts: Vec<usize>,
    pub cells: Vec<MetricCell>,
    /// Mean over topic counts, per slice.
    pub slices: Vec<SliceAverage>,
    /// `(slice, topic_count)` pairs with no topics, left out of the means.
    pub excluded: Vec<(usize, usize)>,
    /// Mean over slices of the per-slice means.
    pub tc: f64,
    pub td: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

/// Rebuilds the global topics at every topic count, scores each slice's
/// descriptors, and averages over topic counts and then over slices.
/// `slices[i]` must be the model of `corpus.slices[i]`.
pub fn run_protocol(
    base: &GlobalTopicSpace,
    compass: &EmbeddingModel,
    slices: &[EmbeddingModel],
    corpus: &TimeSlicedCorpus,
    params: &ProtocolParams,
) -> Result<MetricReport, EvalError> {
    let placements: Vec<SlicePlacement> = slices
        .par_iter()
        .map(|s| place_slice(base, s))
        .collect::<Result<_, _>>()?;
    let references: Vec<ReferenceCorpus> = match params.reference {
        ReferenceMode::Slice => (0..slices.len())
            .into_par_iter()
            .map(|i| ReferenceCorpus::slice(corpus, i))
            .collect(),
        ReferenceMode::Corpus => vec![ReferenceCorpus::whole(corpus)],
    };
    let spaces: Vec<GlobalTopicSpace> = params
        .topic_counts
        .par_iter()
        .map(|&k| base.retarget(compass, k))
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..params.topic_counts.len())
        .flat_map(|k| (0..slices.len()).map(move |s| (k, s)))
        .collect();
    let results: Vec<Result<Option<MetricCell>, EvalError>> = jobs
        .par_iter()
        .map(|&(ki, s)| {
            let a = assign_placement(&spaces[ki], &placements[s], &slices[s])?;
            let topics: Vec<Vec<String>> = a
                .descriptors
                .into_values()
                .map(|mut d| {
                    d.truncate(TOP_N);
                    d
                })
                .filter(|d| !d.is_empty())
                .collect();
            let reference = &references[if references.len() == 1 { 0 } else { s }];
            if topics.is_empty() || reference.n_docs() == 0 {
                return Ok(None);
            }
            let c = npmi(&topics, reference)?;
            Ok(Some(MetricCell {
                slice: s,
                topic_count: params.topic_counts[ki],
                topics: topics.len(),
                tc: c.tc,
                td: topic_diversity(&topics)?,
                skip_rate: c.skip_rate(),
            }))
        })
        .collect();
    let mut cells = Vec::new();
    let mut excluded = Vec::new();
    for (&(ki, s), r) in jobs.iter().zip(results) {
        match r? {
            Some(c) => cells.push(c),
            None => {
                log::warn!(
                    "slice={s} topic_count={} has no topics; excluded",
                    params.topic_counts[ki]
                );
                excluded.push((s, params.topic_counts[ki]));
            }
        }
    }
    cells.sort_by_key(|c| (c.slice, c.topic_count));
    let per_slice: Vec<SliceAverage> = (0..slices.len())
        .filter_map(|s| {
            let mine: Vec<&MetricCell> = cells.iter().filter(|c| c.slice == s).collect();
            Some(SliceAverage {
                slice: s,
                tc: mean(mine.iter().map(|c| c.tc))?,
                td: mean(mine.iter().map(|c| c.td))?,
            })
        })
        .collect();
    let tc = mean(per_slice.iter().map(|s| s.tc)).ok_or(EvalError::NothingEvaluated)?;
    let td = mean(per_slice.iter().map(|s| s.td)).ok_or(EvalError::NothingEvaluated)?;
    Ok(MetricReport {
        method: params.method.clone(),
        dataset: params.dataset.clone(),
        reference: params.reference,
        topic_counts: params.topic_counts.clone(),
        cells,
        slices: per_slice,
        excluded,
        tc,
        td,
    })
}

/// `method,dataset,tc,td`, one row per report.
pub fn write_table<W: Write>(mut w: W, reports: &[MetricReport]) -> std::io::Result<()> {
    writeln!(w, "method,dataset,tc,td")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{:.3},{:.3}",
            csv_field(&r.method),
            csv_field(&r.dataset),
            r.tc,
            r.td
        )?;
    }
    Ok(())
}
