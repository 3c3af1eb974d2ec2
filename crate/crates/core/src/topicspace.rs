//! Global topic space over compass document vectors.
//!
//! Compass document vectors are reduced with [`crate::reduce`], clustered
//! with HDBSCAN and merged down to the configured topic count. Slice
//! documents and words are placed into the fixed global layout and assigned
//! to the nearest topic, so topic ids mean the same thing in every slice.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{
    assign_nearest, hdbscan, merge_to_target, ClusterError, ClusterParams, Clustering, NOISE,
};
use crate::embed::{EmbeddingModel, ModelKind, WordSearch};
use crate::reduce::{fit, FittedReducer, ReduceError, ReducerParams};
use crate::vector::mean_rows;

#[derive(Debug, Error)]
pub enum TopicError {
    #[error("the compass model has no document vectors; use a document architecture")]
    NoDocumentVectors,
    #[error(
        "density clustering found no topics among {documents} documents; \
         try a smaller min_cluster_size (currently {min_cluster_size})"
    )]
    NoClusters {
        documents: usize,
        min_cluster_size: usize,
    },
    #[error("slice model has dimension {got}, compass has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid topic parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Reduce(#[from] ReduceError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("artifact encoding: {0}")]
    Encoding(#[from] bincode::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorMethod {
    Centroid,
    Voting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorParams {
    pub n: usize,
    pub method: DescriptorMethod,
    /// Similar words collected per member document when voting; defaults
    /// to `n`.
    pub vote_pool: Option<usize>,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        Self {
            n: 10,
            method: DescriptorMethod::Voting,
            vote_pool: None,
        }
    }
}

impl DescriptorParams {
    pub fn pool(&self) -> usize {
        self.vote_pool.unwrap_or(self.n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicParams {
    pub reducer: ReducerParams,
    pub cluster: ClusterParams,
    pub target_k: usize,
    pub descriptors: DescriptorParams,
    /// Place compass words into the layout and attach them to topics.
    pub assign_words: bool,
}

impl Default for TopicParams {
    fn default() -> Self {
        Self {
            reducer: ReducerParams::default(),
            cluster: ClusterParams::default(),
            target_k: 10,
            descriptors: DescriptorParams::default(),
            assign_words: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub term: String,
    /// Member documents that voted for the term (1 for the centroid method).
    pub votes: usize,
    /// Cosine to the topic vector, or mean cosine over the votes.
    pub score: f64,
}

/// Mean of the member vectors, then the `n` nearest words by cosine.
pub fn descriptors_centroid(members: &[&[f32]], search: &WordSearch, n: usize) -> Vec<Descriptor> {
    let Some(dim) = members.first().map(|m| m.len()) else {
        return Vec::new();
    };
    let centroid = mean_rows(members.iter().copied(), dim).expect("non-empty");
    search
        .nearest(&centroid, n)
        .into_iter()
        .map(|(term, score)| Descriptor {
            term,
            votes: 1,
            score,
        })
        .collect()
}

/// Each member contributes its `pool` most similar words; words are ranked
/// by vote count, then summed cosine, then term.
pub fn descriptors_voting(
    members: &[&[f32]],
    search: &WordSearch,
    n: usize,
    pool: usize,
) -> Vec<Descriptor> {
    let pools: Vec<Vec<(String, f64)>> = members.iter().map(|m| search.nearest(m, pool)).collect();
    tally_votes(&pools, n)
}

pub fn tally_votes(pools: &[Vec<(String, f64)>], n: usize) -> Vec<Descriptor> {
    let mut tally: HashMap<&str, (usize, f64)> = HashMap::new();
    for pool in pools {
        for (term, cos) in pool {
            let e = tally.entry(term.as_str()).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += cos;
        }
    }
    let mut ranked: Vec<(&str, usize, f64)> =
        tally.into_iter().map(|(t, (v, s))| (t, v, s)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(n)
        .map(|(t, v, s)| Descriptor {
            term: t.to_string(),
            votes: v,
            score: s / v as f64,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicTerm {
    pub term: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalTopic {
    pub id: usize,
    pub label: String,
    pub descriptors: Vec<Descriptor>,
    /// Member document ids, in compass order.
    pub members: Vec<String>,
    /// Centroid in the reduced space.
    pub centroid: Vec<f64>,
    /// Descriptors plus compass words placed in the topic, most probable
    /// first.
    pub terms: Vec<TopicTerm>,
}

impl GlobalTopic {
    pub fn descriptor_terms(&self) -> Vec<String> {
        self.descriptors.iter().map(|d| d.term.clone()).collect()
    }

    pub fn term_probability(&self, term: &str) -> Option<f64> {
        self.terms
            .iter()
            .find(|t| t.term == term)
            .map(|t| t.probability)
    }
}

/// Compass words placed into the reduced space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordPlacement {
    pub terms: Vec<String>,
    pub coords: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalTopicSpace {
    pub params: TopicParams,
    pub reducer: FittedReducer,
    /// Compass document ids, one per reducer training row.
    pub doc_ids: Vec<String>,
    /// HDBSCAN result before merging.
    pub raw: Clustering,
    /// Clustering after merging to the topic count.
    pub clustering: Clustering,
    pub topics: Vec<GlobalTopic>,
    pub words: Option<WordPlacement>,
}

fn doc_matrix(model: &EmbeddingModel) -> Result<&Array2<f32>, TopicError> {
    model
        .doc_input
        .as_ref()
        .ok_or(TopicError::NoDocumentVectors)
}

pub fn build_global_topics(
    compass: &EmbeddingModel,
    params: &TopicParams,
) -> Result<GlobalTopicSpace, TopicError> {
    if params.target_k < 1 {
        return Err(TopicError::InvalidParams(
            "target_k must be at least 1".into(),
        ));
    }
    if params.descriptors.n < 1 {
        return Err(TopicError::InvalidParams(
            "descriptor count must be at least 1".into(),
        ));
    }
    let docs = doc_matrix(compass)?;
    let reducer = fit(docs.view(), &params.reducer)?;
    let raw = hdbscan(reducer.embedding.view(), &params.cluster)?;
    if raw.n_clusters == 0 {
        return Err(TopicError::NoClusters {
            documents: docs.nrows(),
            min_cluster_size: params.cluster.min_cluster_size,
        });
    }
    let words = if params.assign_words && !compass.terms().is_empty() {
        let t = reducer.transform(compass.word_input.view())?;
        Some(WordPlacement {
            terms: compass.terms().to_vec(),
            coords: t.coords,
        })
    } else {
        None
    };
    let mut space = GlobalTopicSpace {
        params: params.clone(),
        reducer,
        doc_ids: compass.doc_ids().to_vec(),
        clustering: raw.clone(),
        raw,
        topics: Vec::new(),
        words,
    };
    space.rebuild(compass, params.target_k)?;
    Ok(space)
}

impl GlobalTopicSpace {
    pub fn n_topics(&self) -> usize {
        self.topics.len()
    }

    /// The same space merged to a different topic count, starting again
    /// from the raw clustering.
    pub fn retarget(&self, compass: &EmbeddingModel, target_k: usize) -> Result<Self, TopicError> {
        let mut s = self.clone();
        s.params.target_k = target_k;
        s.rebuild(compass, target_k)?;
        Ok(s)
    }

    fn rebuild(&mut self, compass: &EmbeddingModel, target_k: usize) -> Result<(), TopicError> {
        self.clustering = merge_to_target(&self.raw, target_k)?;
        let docs = doc_matrix(compass)?;
        let search = WordSearch::new(compass);
        let dp = self.params.descriptors;
        let word_assign = match &self.words {
            Some(w) => Some(assign_nearest(&self.clustering, w.coords.view())?),
            None => None,
        };
        let mut topics = Vec::with_capacity(self.clustering.n_clusters);
        for id in 0..self.clustering.n_clusters {
            let rows = self.clustering.members(id);
            let vecs: Vec<&[f32]> = rows
                .iter()
                .map(|&r| docs.row(r).to_slice().unwrap())
                .collect();
            let descriptors = match dp.method {
                DescriptorMethod::Centroid => descriptors_centroid(&vecs, &search, dp.n),
                DescriptorMethod::Voting => descriptors_voting(&vecs, &search, dp.n, dp.pool()),
            };
            let mut probs: BTreeMap<String, f64> = BTreeMap::new();
            for d in &descriptors {
                probs.insert(d.term.clone(), d.score.max(0.0));
            }
            if let (Some(w), Some(assign)) = (&self.words, &word_assign) {
                let radius = self.clustering.radii[id];
                for (term, a) in w.terms.iter().zip(assign) {
                    if a.label == id as i32 {
                        let p = term_probability(a.distance, radius);
                        let e = probs.entry(term.clone()).or_insert(0.0);
                        *e = e.max(p);
                    }
                }
            }
            let mut terms: Vec<TopicTerm> = probs
                .into_iter()
                .map(|(term, probability)| TopicTerm { term, probability })
                .collect();
            terms.sort_by(|a, b| {
                b.probability
                    .total_cmp(&a.probability)
                    .then(a.term.cmp(&b.term))
            });
            let label = fallback_label(&descriptors);
            topics.push(GlobalTopic {
                id,
                label,
                descriptors,
                members: rows.iter().map(|&r| self.doc_ids[r].clone()).collect(),
                centroid: self.clustering.centroids[id].clone(),
                terms,
            });
        }
        self.topics = topics;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), TopicError> {
        let mut w = BufWriter::new(File::create(path)?);
        bincode::serialize_into(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TopicError> {
        Ok(bincode::deserialize_from(BufReader::new(File::open(
            path,
        )?))?)
    }

    pub fn artifact(&self) -> TopicsArtifact {
        TopicsArtifact {
            format: TOPICS_FORMAT.to_string(),
            target_k: self.params.target_k,
            raw_clusters: self.raw.n_clusters,
            noise_documents: self.clustering.noise_count(),
            method: self.params.descriptors.method,
            topics: self
                .topics
                .iter()
                .map(|t| TopicSummary {
                    id: t.id,
                    label: t.label.clone(),
                    descriptors: t.descriptor_terms(),
                    member_count: t.members.len(),
                    centroid: t.centroid.clone(),
                })
                .collect(),
        }
    }
}

/// Membership of a placed word in its nearest topic: 1 at the centroid,
/// 1/2 at the topic's radius.
pub fn term_probability(distance: f64, radius: f64) -> f64 {
    if radius <= 0.0 {
        return if distance == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 / (1.0 + (distance / radius).powi(2))
}

pub fn fallback_label(descriptors: &[Descriptor]) -> String {
    descriptors
        .iter()
        .take(3)
        .map(|d| d.term.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

pub const TOPICS_FORMAT: &str = "ttec-topics/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub id: usize,
    pub label: String,
    pub descriptors: Vec<String>,
    pub member_count: usize,
    pub centroid: Vec<f64>,
}

/// JSON topic listing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicsArtifact {
    pub format: String,
    pub target_k: usize,
    pub raw_clusters: usize,
    pub noise_documents: usize,
    pub method: DescriptorMethod,
    pub topics: Vec<TopicSummary>,
}

/// A slice's documents and words placed into the global layout. Placement
/// does not depend on the topic count, so one placement serves every
/// merge level of the same space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicePlacement {
    pub slice_index: usize,
    pub doc_ids: Vec<String>,
    pub doc_coords: Array2<f64>,
    pub doc_low_confidence: Vec<bool>,
    pub terms: Vec<String>,
    pub word_coords: Array2<f64>,
    /// Per document, its most similar slice words (for voting descriptors).
    pub doc_pools: Vec<Vec<(String, f64)>>,
}

pub fn place_slice(
    space: &GlobalTopicSpace,
    slice: &EmbeddingModel,
) -> Result<SlicePlacement, TopicError> {
    let index = match slice.kind {
        ModelKind::Slice(i) => i,
        ModelKind::Compass => 0,
    };
    let out_dim = space.reducer.params.out_dim;
    let empty = SlicePlacement {
        slice_index: index,
        doc_ids: Vec::new(),
        doc_coords: Array2::zeros((0, out_dim)),
        doc_low_confidence: Vec::new(),
        terms: Vec::new(),
        word_coords: Array2::zeros((0, out_dim)),
        doc_pools: Vec::new(),
    };
    if slice.is_degenerate() {
        return Ok(empty);
    }
    if slice.dim() != space.reducer.input_dim() {
        return Err(TopicError::DimensionMismatch {
            expected: space.reducer.input_dim(),
            got: slice.dim(),
        });
    }
    let words = space.reducer.transform(slice.word_input.view())?;
    let mut placement = SlicePlacement {
        terms: slice.terms().to_vec(),
        word_coords: words.coords,
        ..empty
    };
    if let Some(docs) = slice.doc_input.as_ref().filter(|d| d.nrows() > 0) {
        let t = space.reducer.transform(docs.view())?;
        let search = WordSearch::new(slice);
        let pool = space.params.descriptors.pool();
        placement.doc_ids = slice.doc_ids().to_vec();
        placement.doc_coords = t.coords;
        placement.doc_low_confidence = t.low_confidence;
        placement.doc_pools = docs
            .axis_iter(Axis(0))
            .map(|r| search.nearest(r.to_slice().unwrap(), pool))
            .collect();
    }
    Ok(placement)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceTopicAssignment {
    pub slice_index: usize,
    /// Document id to topic id, [`NOISE`] when outside every topic.
    pub doc_topics: BTreeMap<String, i32>,
    pub word_topics: BTreeMap<String, i32>,
    /// Slice-specific descriptors of each topic with assigned documents.
    pub descriptors: BTreeMap<usize, Vec<String>>,
}

impl SliceTopicAssignment {
    pub fn topic_documents(&self, topic: usize) -> Vec<&str> {
        self.doc_topics
            .iter()
            .filter(|(_, &t)| t == topic as i32)
            .map(|(d, _)| d.as_str())
            .collect()
    }
}

pub fn assign_placement(
    space: &GlobalTopicSpace,
    placement: &SlicePlacement,
    slice: &EmbeddingModel,
) -> Result<SliceTopicAssignment, TopicError> {
    let mut out = SliceTopicAssignment {
        slice_index: placement.slice_index,
        doc_topics: BTreeMap::new(),
        word_topics: BTreeMap::new(),
        descriptors: BTreeMap::new(),
    };
    if placement.terms.is_empty() && placement.doc_ids.is_empty() {
        return Ok(out);
    }
    let words = assign_nearest(&space.clustering, placement.word_coords.view())?;
    for (t, a) in placement.terms.iter().zip(&words) {
        out.word_topics.insert(t.clone(), a.label);
    }
    if placement.doc_ids.is_empty() {
        return Ok(out);
    }
    let docs = assign_nearest(&space.clustering, placement.doc_coords.view())?;
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (id, a)) in placement.doc_ids.iter().zip(&docs).enumerate() {
        out.doc_topics.insert(id.clone(), a.label);
        if a.label != NOISE {
            members.entry(a.label as usize).or_default().push(i);
        }
    }
    let dp = space.params.descriptors;
    let doc_vecs = slice.doc_input.as_ref();
    let search = WordSearch::new(slice);
    for (topic, rows) in members {
        let terms: Vec<String> = match (dp.method, doc_vecs) {
            (DescriptorMethod::Centroid, Some(m)) => {
                let vecs: Vec<&[f32]> =
                    rows.iter().map(|&r| m.row(r).to_slice().unwrap()).collect();
                descriptors_centroid(&vecs, &search, dp.n)
                    .into_iter()
                    .map(|d| d.term)
                    .collect()
            }
            _ => {
                let pools: Vec<Vec<(String, f64)>> = rows
                    .iter()
                    .map(|&r| placement.doc_pools[r].clone())
                    .collect();
                tally_votes(&pools, dp.n)
                    .into_iter()
                    .map(|d| d.term)
                    .collect()
            }
        };
        out.descriptors.insert(topic, terms);
    }
    Ok(out)
}

/// Places and assigns a slice model. An empty slice yields an empty
/// assignment.
pub fn assign_slice(
    space: &GlobalTopicSpace,
    slice: &EmbeddingModel,
) -> Result<SliceTopicAssignment, TopicError> {
    let placement = place_slice(space, slice)?;
    assign_placement(space, &placement, slice)
}

/// External topic labeler.
pub trait Labeler {
    fn label(&self, topic_id: usize, terms: &[String]) -> Result<String, String>;
}

#[derive(Serialize)]
struct LabelRequest<'a> {
    topic_id: usize,
    terms: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt: Option<String>,
}

#[derive(Deserialize)]
struct LabelResponse {
    label: String,
}

/// POSTs `{topic_id, terms}` as JSON and expects `{label}` back. A
/// configured prompt template is sent along with `{terms}` replaced by the
/// comma-joined terms.
pub struct HttpLabeler {
    endpoint: String,
    prompt: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpLabeler {
    pub fn new(endpoint: &str, timeout: Duration, prompt: Option<String>) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self {
            endpoint: endpoint.to_string(),
            prompt,
            client,
        })
    }
}

impl Labeler for HttpLabeler {
    fn label(&self, topic_id: usize, terms: &[String]) -> Result<String, String> {
        let body = LabelRequest {
            topic_id,
            terms,
            prompt: self
                .prompt
                .as_ref()
                .map(|p| p.replace("{terms}", &terms.join(", "))),
        };
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("labeler answered {}", resp.status()));
        }
        let parsed: LabelResponse = resp.json().map_err(|e| e.to_string())?;
        let label = parsed.label.trim().to_string();
        if label.is_empty() {
            return Err("labeler returned an empty label".into());
        }
        Ok(label)
    }
}

/// Sets every topic's label, falling back to the top three descriptors when
/// no labeler is given or it fails. Returns one warning per failure.
pub fn label_topics(space: &mut GlobalTopicSpace, labeler: Option<&dyn Labeler>) -> Vec<String> {
    let mut warnings = Vec::new();
    for topic in &mut space.topics {
        let fallback = fallback_label(&topic.descriptors);
        topic.label = match labeler {
            None => fallback,
            Some(l) => match l.label(topic.id, &topic.descriptor_terms()) {
                Ok(label) => label,
                Err(e) => {
                    warnings.push(format!("topic {}: {e}; using fallback label", topic.id));
                    fallback
                }
            },
        };
    }
    warnings
}

/// Row view of a model's document vectors for the given ids, skipping
/// unknown ids.
pub fn doc_vectors<'a>(model: &'a EmbeddingModel, ids: &[String]) -> Vec<&'a [f32]> {
    ids.iter().filter_map(|id| model.doc_vector(id)).collect()
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), TopicError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::Architecture;
    use ndarray::array;

    fn toy_model() -> EmbeddingModel {
        let words = array![
            [1.0f32, 0.0],
            [0.9, 0.1],
            [0.0, 1.0],
            [0.1, 0.9],
            [0.7, 0.7]
        ];
        let terms: Vec<String> = ["a1", "a2", "b1", "b2", "mid"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        EmbeddingModel::from_parts(
            ModelKind::Compass,
            Architecture::PvDbow,
            terms,
            vec![1; 5],
            vec![],
            words.clone(),
            Some(Array2::zeros((0, 2))),
            words,
        )
        .unwrap()
    }

    #[test]
    fn single_member_voting_equals_centroid() {
        let m = toy_model();
        let s = WordSearch::new(&m);
        let doc: &[f32] = &[0.8, 0.3];
        let c = descriptors_centroid(&[doc], &s, 3);
        let v = descriptors_voting(&[doc], &s, 3, 3);
        let terms = |d: &[Descriptor]| d.iter().map(|x| x.term.clone()).collect::<Vec<_>>();
        assert_eq!(terms(&c), terms(&v));
    }

    #[test]
    fn hand_tally() {
        let p = |xs: &[(&str, f64)]| {
            xs.iter()
                .map(|(t, c)| (t.to_string(), *c))
                .collect::<Vec<_>>()
        };
        let pools = vec![
            p(&[("x", 0.9), ("y", 0.8), ("z", 0.7)]),
            p(&[("y", 0.9), ("x", 0.5), ("w", 0.4)]),
            p(&[("y", 0.6), ("z", 0.5), ("v", 0.3)]),
            p(&[("w", 0.9), ("v", 0.8), ("x", 0.2)]),
            p(&[("z", 0.9), ("y", 0.2), ("u", 0.1)]),
        ];
        let t = tally_votes(&pools, 6);
        let got: Vec<(&str, usize)> = t.iter().map(|d| (d.term.as_str(), d.votes)).collect();
        // y: 4 votes; x: 3 (1.6); z: 3 (2.1); w: 2; v: 2 (1.1 vs w 1.3); u: 1.
        assert_eq!(
            got,
            vec![("y", 4), ("z", 3), ("x", 3), ("w", 2), ("v", 2), ("u", 1)]
        );
        assert!((t[0].score - 2.5 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn empty_topic_has_no_descriptors() {
        let m = toy_model();
        let s = WordSearch::new(&m);
        assert!(descriptors_centroid(&[], &s, 3).is_empty());
        assert!(descriptors_voting(&[], &s, 3, 3).is_empty());
    }

    #[test]
    fn fallback_uses_top_three() {
        let d: Vec<Descriptor> = ["reactor", "fuel", "plant", "uranium"]
            .iter()
            .map(|t| Descriptor {
                term: t.to_string(),
                votes: 1,
                score: 0.5,
            })
            .collect();
        assert_eq!(fallback_label(&d), "reactor, fuel, plant");
    }

    #[test]
    fn probability_curve() {
        assert_eq!(term_probability(0.0, 2.0), 1.0);
        assert_eq!(term_probability(2.0, 2.0), 0.5);
        assert_eq!(term_probability(0.0, 0.0), 1.0);
        assert_eq!(term_probability(1.0, 0.0), 0.0);
    }
}
