//! Keyword flow across time slices.
//!
//! Selected keywords are laid out jointly over all slices with the aligned
//! reducer, clustered per slice, matched across adjacent slices and labelled
//! with the global topic they share most terms with. The result is a Sankey
//! graph whose nodes are per-slice clusters (plus one noise node per slice)
//! and whose links are single keywords moving between adjacent slices.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::cluster::{hdbscan, ClusterError, ClusterParams, Clustering, NOISE};
use crate::embed::{EmbeddingModel, WordSearch};
use crate::reduce::{csv_field, fit_aligned, layout_diameter, Metric, ReduceError, ReducerParams};
use crate::topicspace::GlobalTopic;
use crate::vector::{cosine, euclidean};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("keyword flow needs at least two slices, got {0}")]
    TooFewSlices(usize),
    #[error("none of the keywords occur in any slice")]
    NoKeywords,
    #[error("term {term:?} is not in the vocabulary of slice {slice}")]
    MissingTerm { term: String, slice: usize },
    #[error("slice {0} does not exist")]
    NoSuchSlice(usize),
    #[error("too few distinct points for a layout ({0})")]
    TooFewPoints(usize),
    #[error(transparent)]
    Reduce(#[from] ReduceError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMethod {
    Centroid,
    Vocabulary,
}

impl fmt::Display for MatchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchMethod::Centroid => "centroid",
            MatchMethod::Vocabulary => "vocabulary",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeatmapMode {
    /// `1 - cos` between a term's vectors in adjacent slices.
    SelfDisplacement,
    /// Mean absolute change of a term's cosine to every other keyword.
    NeighborhoodChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    pub reducer: ReducerParams,
    pub cluster: ClusterParams,
    pub matching: MatchMethod,
    /// Centroid matches farther than this fraction of the layout diameter
    /// have no successor.
    pub max_match_fraction: f64,
    pub heatmap: HeatmapMode,
    /// Layout of the two-slice context scatter. Its sets hold only a focus
    /// term and its neighbours, too few points for the layout objective
    /// alone to pin them, so the cross-slice tie is stronger.
    pub scatter: ReducerParams,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            reducer: ReducerParams {
                out_dim: 5,
                ..ReducerParams::default()
            },
            cluster: ClusterParams::new(3),
            matching: MatchMethod::Centroid,
            max_match_fraction: 0.25,
            heatmap: HeatmapMode::SelfDisplacement,
            scatter: ReducerParams {
                out_dim: 2,
                alignment_weight: 0.1,
                ..ReducerParams::default()
            },
        }
    }
}

/// Keywords resolved against every slice model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub terms: Vec<String>,
    /// Per slice, the keyword indices present in that slice, in keyword
    /// order. Row `r` of the slice's matrices belongs to `present[t][r]`.
    pub present: Vec<Vec<usize>>,
    /// Requested terms found in no slice.
    pub dropped: Vec<String>,
}

impl KeywordSet {
    pub fn resolve(slices: &[EmbeddingModel], requested: &[String]) -> Self {
        let mut seen = BTreeSet::new();
        let mut terms = Vec::new();
        let mut dropped = Vec::new();
        for t in requested {
            if !seen.insert(t.clone()) {
                continue;
            }
            if slices.iter().any(|s| s.term_row(t).is_some()) {
                terms.push(t.clone());
            } else {
                dropped.push(t.clone());
            }
        }
        let present = slices
            .iter()
            .map(|s| {
                (0..terms.len())
                    .filter(|&i| s.term_row(&terms[i]).is_some())
                    .collect()
            })
            .collect();
        Self {
            terms,
            present,
            dropped,
        }
    }

    /// Row of keyword `k` in slice `t`.
    pub fn row_of(&self, t: usize, k: usize) -> Option<usize> {
        self.present[t].binary_search(&k).ok()
    }

    pub fn matrix(&self, slices: &[EmbeddingModel], t: usize) -> Array2<f32> {
        let rows = &self.present[t];
        let dim = slices[t].dim();
        let mut m = Array2::zeros((rows.len(), dim));
        for (r, &k) in rows.iter().enumerate() {
            let v = slices[t].word_vector(&self.terms[k]).expect("present term");
            m.row_mut(r).assign(&ndarray::ArrayView1::from(v));
        }
        m
    }
}

/// The `n` most frequent compass terms; the default keyword list.
pub fn default_keywords(compass: &EmbeddingModel, n: usize) -> Vec<String> {
    let mut idx: Vec<usize> = (0..compass.terms().len()).collect();
    idx.sort_by(|&a, &b| {
        compass.counts()[b]
            .cmp(&compass.counts()[a])
            .then(compass.terms()[a].cmp(&compass.terms()[b]))
    });
    idx.into_iter()
        .take(n)
        .map(|i| compass.terms()[i].clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordSpace {
    pub keywords: KeywordSet,
    /// Per slice, one row per present keyword.
    pub coords: Vec<Array2<f64>>,
    pub diameter: f64,
}

impl KeywordSpace {
    /// Euclidean movement of every keyword between adjacent slices, as
    /// `(term, transition, distance)`.
    pub fn displacements(&self) -> Vec<(String, usize, f64)> {
        let mut out = Vec::new();
        for t in 0..self.coords.len().saturating_sub(1) {
            for (k, term) in self.keywords.terms.iter().enumerate() {
                if let (Some(a), Some(b)) =
                    (self.keywords.row_of(t, k), self.keywords.row_of(t + 1, k))
                {
                    let pa: Vec<f64> = self.coords[t].row(a).to_vec();
                    let pb: Vec<f64> = self.coords[t + 1].row(b).to_vec();
                    out.push((term.clone(), t, euclidean(&pa, &pb)));
                }
            }
        }
        out
    }
}

/// Aligned layout of the keywords over all slices; a keyword present in
/// adjacent slices is tied to itself across them.
pub fn build_keyword_space(
    slices: &[EmbeddingModel],
    terms: &[String],
    params: &ReducerParams,
) -> Result<KeywordSpace, FlowError> {
    if slices.len() < 2 {
        return Err(FlowError::TooFewSlices(slices.len()));
    }
    let keywords = KeywordSet::resolve(slices, terms);
    if keywords.terms.is_empty() {
        return Err(FlowError::NoKeywords);
    }
    let matrices: Vec<Array2<f32>> = (0..slices.len())
        .map(|t| keywords.matrix(slices, t))
        .collect();
    let relations: Vec<Vec<(usize, usize)>> = (0..slices.len() - 1)
        .map(|t| {
            keywords.present[t]
                .iter()
                .enumerate()
                .filter_map(|(r, &k)| keywords.row_of(t + 1, k).map(|r1| (r, r1)))
                .collect()
        })
        .collect();
    let views: Vec<_> = matrices.iter().map(|m| m.view()).collect();
    let aligned = fit_aligned(&views, &relations, params)?;
    let refs: Vec<&Array2<f64>> = aligned.embeddings.iter().collect();
    let diameter = layout_diameter(&refs);
    Ok(KeywordSpace {
        keywords,
        coords: aligned.embeddings,
        diameter,
    })
}

/// Independent HDBSCAN per slice.
pub fn cluster_slices(
    space: &KeywordSpace,
    params: &ClusterParams,
) -> Result<Vec<Clustering>, FlowError> {
    space
        .coords
        .par_iter()
        .map(|c| hdbscan(c.view(), params).map_err(FlowError::from))
        .collect()
}

/// Successor choice for one cluster of slice `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub source: usize,
    pub target: Option<usize>,
    /// Overlap fraction (vocabulary) or centroid distance (centroid).
    pub score: f64,
    /// Score against every cluster of `t + 1`, by cluster id.
    pub candidates: Vec<f64>,
}

/// Successor = cluster of `t + 1` holding the largest share of the source's
/// terms; ties go to the lower id. Sources sharing nothing have no successor.
pub fn match_by_vocabulary(
    clusters_t: &[Vec<String>],
    clusters_t1: &[Vec<String>],
) -> Vec<Correspondence> {
    let next: Vec<BTreeSet<&str>> = clusters_t1
        .iter()
        .map(|c| c.iter().map(String::as_str).collect())
        .collect();
    clusters_t
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let candidates: Vec<f64> = next
                .iter()
                .map(|n| {
                    if c.is_empty() {
                        0.0
                    } else {
                        c.iter().filter(|t| n.contains(t.as_str())).count() as f64 / c.len() as f64
                    }
                })
                .collect();
            let best = best_by(&candidates, |a, b| a > b);
            let target = best.filter(|&j| candidates[j] > 0.0);
            Correspondence {
                source: i,
                target,
                score: target.map_or(0.0, |j| candidates[j]),
                candidates,
            }
        })
        .collect()
}

/// Successor = nearest centroid of `t + 1`, ties to the lower id, unless
/// it is farther than `max_distance`.
pub fn match_by_centroid(
    centroids_t: &[Vec<f64>],
    centroids_t1: &[Vec<f64>],
    max_distance: f64,
) -> Vec<Correspondence> {
    centroids_t
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let candidates: Vec<f64> = centroids_t1.iter().map(|n| euclidean(c, n)).collect();
            let best = best_by(&candidates, |a, b| a < b);
            let target = best.filter(|&j| candidates[j] <= max_distance);
            Correspondence {
                source: i,
                target,
                score: best.map_or(f64::INFINITY, |j| candidates[j]),
                candidates,
            }
        })
        .collect()
}

fn best_by(xs: &[f64], better: impl Fn(f64, f64) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &x) in xs.iter().enumerate() {
        if best.is_none_or(|b| better(x, xs[b])) {
            best = Some(j);
        }
    }
    best
}

/// Member terms of every non-noise cluster of one slice.
pub fn cluster_terms(space: &KeywordSpace, t: usize, clustering: &Clustering) -> Vec<Vec<String>> {
    let mut out = vec![Vec::new(); clustering.n_clusters];
    for (r, &l) in clustering.labels.iter().enumerate() {
        if l != NOISE {
            out[l as usize].push(space.keywords.terms[space.keywords.present[t][r]].clone());
        }
    }
    out
}

pub fn noise_terms(space: &KeywordSpace, t: usize, clustering: &Clustering) -> Vec<String> {
    clustering
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == NOISE)
        .map(|(r, _)| space.keywords.terms[space.keywords.present[t][r]].clone())
        .collect()
}

/// Global topic sharing the most terms with each cluster; ties go to the
/// higher summed term probability, then the lower topic id. `None` when no
/// topic shares a term.
pub fn label_local_clusters(
    clusters: &[Vec<String>],
    topics: &[GlobalTopic],
) -> Vec<Option<usize>> {
    let sets: Vec<HashMap<&str, f64>> = topics
        .iter()
        .map(|t| {
            t.terms
                .iter()
                .map(|x| (x.term.as_str(), x.probability))
                .collect()
        })
        .collect();
    clusters
        .iter()
        .map(|c| {
            let mut best: Option<(usize, usize, f64)> = None;
            for (id, set) in topics.iter().map(|t| t.id).zip(&sets) {
                let mut shared = 0;
                let mut prob = 0.0;
                for term in c {
                    if let Some(p) = set.get(term.as_str()) {
                        shared += 1;
                        prob += p;
                    }
                }
                if shared == 0 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bid, bs, bp)) => {
                        shared > bs || (shared == bs && (prob > bp || (prob == bp && id < bid)))
                    }
                };
                if better {
                    best = Some((id, shared, prob));
                }
            }
            best.map(|b| b.0)
        })
        .collect()
}

/// Colour-blind-safe categorical palette (Paul Tol's "muted" scheme).
pub const PALETTE: &[&str] = &[
    "#CC6677", "#332288", "#DDCC77", "#117733", "#88CCEE", "#882255", "#44AA99", "#999933",
    "#AA4499",
];
pub const GRAY: &str = "#BBBBBB";

pub fn topic_color(topic: Option<usize>) -> &'static str {
    topic.map_or(GRAY, |t| PALETTE[t % PALETTE.len()])
}

/// Local cluster id; noise is its own reserved id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LocalCluster {
    Cluster(usize),
    Noise,
}

impl LocalCluster {
    pub fn node_id(&self, time: usize) -> String {
        match self {
            LocalCluster::Cluster(c) => format!("Time_{time}_{c}"),
            LocalCluster::Noise => format!("Time_{time}_noise"),
        }
    }
}

impl Serialize for LocalCluster {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LocalCluster::Cluster(c) => s.serialize_u64(*c as u64),
            LocalCluster::Noise => s.serialize_str("noise"),
        }
    }
}

impl<'de> Deserialize<'de> for LocalCluster {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Index(usize),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Index(i) => Ok(LocalCluster::Cluster(i)),
            Repr::Name(s) if s == "noise" => Ok(LocalCluster::Noise),
            Repr::Name(s) => Err(serde::de::Error::custom(format!(
                "unknown cluster id {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceInfo {
    pub index: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowNode {
    pub id: String,
    pub time: usize,
    pub cluster: LocalCluster,
    pub topic: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_label: Option<String>,
    pub color: String,
    pub terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowLink {
    pub term: String,
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEdge {
    pub source: String,
    pub target: String,
    pub method: MatchMethod,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterFlowGraph {
    pub slices: Vec<SliceInfo>,
    pub nodes: Vec<FlowNode>,
    pub links: Vec<FlowLink>,
    pub matches: Vec<MatchEdge>,
    /// Topic id to colour for every topic appearing on a node.
    #[serde(default)]
    pub palette: BTreeMap<usize, String>,
}

/// Per-slice input to [`build_sankey`]: the local clusters' member terms,
/// the slice's noise terms and each cluster's global topic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SliceClusters {
    pub label: String,
    pub clusters: Vec<Vec<String>>,
    pub noise: Vec<String>,
    pub topics: Vec<Option<usize>>,
}

/// Assembles the Sankey graph. `matches[t]` holds the correspondences from
/// slice `t` to `t + 1`; `topic_labels` maps topic ids to display labels.
pub fn build_sankey(
    slices: &[SliceClusters],
    matches: &[Vec<Correspondence>],
    method: MatchMethod,
    topic_labels: &BTreeMap<usize, String>,
) -> ClusterFlowGraph {
    let mut nodes = Vec::new();
    let mut term_node: Vec<HashMap<&str, String>> = vec![HashMap::new(); slices.len()];
    let mut palette = BTreeMap::new();
    for (t, s) in slices.iter().enumerate() {
        let entries = s
            .clusters
            .iter()
            .enumerate()
            .map(|(c, terms)| {
                (
                    LocalCluster::Cluster(c),
                    terms,
                    s.topics.get(c).copied().flatten(),
                )
            })
            .chain(std::iter::once((LocalCluster::Noise, &s.noise, None)));
        for (cluster, terms, topic) in entries {
            if terms.is_empty() {
                continue;
            }
            let id = cluster.node_id(t);
            for term in terms {
                term_node[t].insert(term.as_str(), id.clone());
            }
            if let Some(tp) = topic {
                palette.insert(tp, topic_color(Some(tp)).to_string());
            }
            nodes.push(FlowNode {
                id,
                time: t,
                cluster,
                topic,
                topic_label: topic.and_then(|tp| topic_labels.get(&tp).cloned()),
                color: topic_color(topic).to_string(),
                terms: terms.clone(),
            });
        }
    }
    let mut links = Vec::new();
    for t in 0..slices.len().saturating_sub(1) {
        let mut shared: Vec<(&str, &String)> = term_node[t]
            .iter()
            .filter_map(|(term, src)| term_node[t + 1].get(term).map(|_| (*term, src)))
            .collect();
        shared.sort();
        for (term, src) in shared {
            links.push(FlowLink {
                term: term.to_string(),
                source: src.clone(),
                target: term_node[t + 1][term].clone(),
            });
        }
    }
    let mut edges = Vec::new();
    for (t, corr) in matches.iter().enumerate() {
        for c in corr {
            if let Some(target) = c.target {
                edges.push(MatchEdge {
                    source: LocalCluster::Cluster(c.source).node_id(t),
                    target: LocalCluster::Cluster(target).node_id(t + 1),
                    method,
                    score: c.score,
                });
            }
        }
    }
    ClusterFlowGraph {
        slices: slices
            .iter()
            .enumerate()
            .map(|(index, s)| SliceInfo {
                index,
                label: s.label.clone(),
            })
            .collect(),
        nodes,
        links,
        matches: edges,
        palette,
    }
}

/// One step of a keyword's path through the graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    pub time: usize,
    pub node: String,
}

impl ClusterFlowGraph {
    pub fn node(&self, id: &str) -> Option<&FlowNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn find_node(&self, time: usize, cluster: LocalCluster) -> Option<&FlowNode> {
        self.nodes
            .iter()
            .find(|n| n.time == time && n.cluster == cluster)
    }

    /// Nodes holding `term`, one per slice where it is present.
    pub fn term_path(&self, term: &str) -> Vec<PathStep> {
        let mut steps: Vec<PathStep> = self
            .nodes
            .iter()
            .filter(|n| n.terms.iter().any(|t| t == term))
            .map(|n| PathStep {
                time: n.time,
                node: n.id.clone(),
            })
            .collect();
        steps.sort_by_key(|s| s.time);
        steps
    }

    /// The subgraph of the given keywords: their links, the nodes holding
    /// them (restricted to those keywords) and matches between kept nodes.
    pub fn filter_terms(&self, terms: &[String]) -> ClusterFlowGraph {
        let keep: BTreeSet<&str> = terms.iter().map(String::as_str).collect();
        let nodes: Vec<FlowNode> = self
            .nodes
            .iter()
            .filter_map(|n| {
                let t: Vec<String> = n
                    .terms
                    .iter()
                    .filter(|x| keep.contains(x.as_str()))
                    .cloned()
                    .collect();
                (!t.is_empty()).then(|| FlowNode {
                    terms: t,
                    ..n.clone()
                })
            })
            .collect();
        let ids: BTreeSet<&str> = nodes.iter().map(|n| n.id.as_str()).collect();
        let matches = self
            .matches
            .iter()
            .filter(|m| ids.contains(m.source.as_str()) && ids.contains(m.target.as_str()))
            .cloned()
            .collect();
        let palette = self
            .palette
            .iter()
            .filter(|(tp, _)| nodes.iter().any(|n| n.topic == Some(**tp)))
            .map(|(k, v)| (*k, v.clone()))
            .collect();
        ClusterFlowGraph {
            slices: self.slices.clone(),
            links: self
                .links
                .iter()
                .filter(|l| keep.contains(l.term.as_str()))
                .cloned()
                .collect(),
            nodes,
            matches,
            palette,
        }
    }
}

/// Everything the flow stage produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub space: KeywordSpace,
    pub clusterings: Vec<Clustering>,
    pub matches: Vec<Vec<Correspondence>>,
    pub graph: ClusterFlowGraph,
}

/// Full flow stage: keyword space, per-slice clusters, matching, topic
/// labels and the Sankey graph.
pub fn build_flow(
    slices: &[EmbeddingModel],
    slice_labels: &[String],
    terms: &[String],
    topics: &[GlobalTopic],
    params: &FlowParams,
) -> Result<FlowResult, FlowError> {
    let space = build_keyword_space(slices, terms, &params.reducer)?;
    let clusterings = cluster_slices(&space, &params.cluster)?;
    let per_slice: Vec<Vec<Vec<String>>> = clusterings
        .iter()
        .enumerate()
        .map(|(t, c)| cluster_terms(&space, t, c))
        .collect();
    let max_distance = params.max_match_fraction * space.diameter;
    let matches: Vec<Vec<Correspondence>> = (0..slices.len() - 1)
        .map(|t| match params.matching {
            MatchMethod::Vocabulary => match_by_vocabulary(&per_slice[t], &per_slice[t + 1]),
            MatchMethod::Centroid => match_by_centroid(
                &clusterings[t].centroids,
                &clusterings[t + 1].centroids,
                max_distance,
            ),
        })
        .collect();
    let inputs: Vec<SliceClusters> = (0..slices.len())
        .map(|t| SliceClusters {
            label: slice_labels
                .get(t)
                .cloned()
                .unwrap_or_else(|| t.to_string()),
            topics: label_local_clusters(&per_slice[t], topics),
            clusters: per_slice[t].clone(),
            noise: noise_terms(&space, t, &clusterings[t]),
        })
        .collect();
    let labels: BTreeMap<usize, String> = topics.iter().map(|t| (t.id, t.label.clone())).collect();
    let graph = build_sankey(&inputs, &matches, params.matching, &labels);
    Ok(FlowResult {
        space,
        clusterings,
        matches,
        graph,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub mode: HeatmapMode,
    pub terms: Vec<String>,
    /// Transition `t` compares slice `t` with slice `t + 1`.
    pub transitions: usize,
    /// `cells[term][transition]`; `None` when the term is missing from
    /// either slice.
    pub cells: Vec<Vec<Option<f64>>>,
}

pub fn movement_heatmap(
    slices: &[EmbeddingModel],
    terms: &[String],
    mode: HeatmapMode,
) -> Result<Heatmap, FlowError> {
    if slices.len() < 2 {
        return Err(FlowError::TooFewSlices(slices.len()));
    }
    let transitions = slices.len() - 1;
    let mut cells = vec![vec![None; transitions]; terms.len()];
    for t in 0..transitions {
        let (a, b) = (&slices[t], &slices[t + 1]);
        let both: Vec<usize> = (0..terms.len())
            .filter(|&i| a.word_vector(&terms[i]).is_some() && b.word_vector(&terms[i]).is_some())
            .collect();
        for &i in &both {
            let va = a.word_vector(&terms[i]).unwrap();
            let vb = b.word_vector(&terms[i]).unwrap();
            cells[i][t] = Some(match mode {
                HeatmapMode::SelfDisplacement => (1.0 - cosine(va, vb)).clamp(0.0, 2.0),
                HeatmapMode::NeighborhoodChange => {
                    let others: Vec<usize> = both.iter().copied().filter(|&j| j != i).collect();
                    if others.is_empty() {
                        0.0
                    } else {
                        others
                            .iter()
                            .map(|&j| {
                                let ca = cosine(va, a.word_vector(&terms[j]).unwrap());
                                let cb = cosine(vb, b.word_vector(&terms[j]).unwrap());
                                (ca - cb).abs()
                            })
                            .sum::<f64>()
                            / others.len() as f64
                    }
                }
            });
        }
    }
    Ok(Heatmap {
        mode,
        terms: terms.to_vec(),
        transitions,
        cells,
    })
}

impl Heatmap {
    /// `term,transition,displacement`; missing cells have an empty value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "term,transition,displacement")?;
        for (term, row) in self.terms.iter().zip(&self.cells) {
            for (t, cell) in row.iter().enumerate() {
                match cell {
                    Some(v) => writeln!(w, "{},{t},{v}", csv_field(term))?,
                    None => writeln!(w, "{},{t},", csv_field(term))?,
                }
            }
        }
        Ok(())
    }

    /// Column maximum for a transition, as `(term, value)`.
    pub fn column_max(&self, t: usize) -> Option<(&str, f64)> {
        self.terms
            .iter()
            .zip(&self.cells)
            .filter_map(|(term, row)| row[t].map(|v| (term.as_str(), v)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(a.0)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub term: String,
    /// Slice the point was taken from.
    pub time: usize,
    pub focus: bool,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextScatter {
    pub focus: String,
    pub neighbors: Vec<Vec<String>>,
    pub points: Vec<ScatterPoint>,
}

impl ContextScatter {
    pub fn focus_points(&self) -> Vec<&ScatterPoint> {
        self.points.iter().filter(|p| p.focus).collect()
    }

    pub fn diameter(&self) -> f64 {
        let m = Array2::from_shape_fn((self.points.len(), 2), |(i, d)| {
            if d == 0 {
                self.points[i].x
            } else {
                self.points[i].y
            }
        });
        layout_diameter(&[&m])
    }
}

/// The focus term and its `k` nearest words in slices `t` and `t + 1`, laid
/// out as two aligned 2D sets tied through the terms they share.
pub fn context_scatter(
    slices: &[EmbeddingModel],
    t: usize,
    focus: &str,
    k: usize,
    params: &ReducerParams,
) -> Result<ContextScatter, FlowError> {
    if t + 1 >= slices.len() {
        return Err(FlowError::NoSuchSlice(t + 1));
    }
    let mut rows: Vec<(usize, String, bool)> = Vec::new();
    let mut neighbors = Vec::new();
    for s in [t, t + 1] {
        let model = &slices[s];
        let v = model
            .word_vector(focus)
            .ok_or_else(|| FlowError::MissingTerm {
                term: focus.to_string(),
                slice: s,
            })?;
        let k = k.min(model.terms().len().saturating_sub(1));
        let near: Vec<String> = WordSearch::new(model)
            .nearest(v, k + 1)
            .into_iter()
            .map(|(w, _)| w)
            .filter(|w| w != focus)
            .take(k)
            .collect();
        rows.push((s, focus.to_string(), true));
        rows.extend(near.iter().map(|w| (s, w.clone(), false)));
        neighbors.push(near);
    }
    let sets: Vec<Vec<&(usize, String, bool)>> = [t, t + 1]
        .iter()
        .map(|&s| rows.iter().filter(|r| r.0 == s).collect())
        .collect();
    let matrices: Vec<Array2<f32>> = sets
        .iter()
        .map(|set| {
            let mut m = Array2::<f32>::zeros((set.len(), slices[t].dim()));
            for (i, (s, w, _)) in set.iter().enumerate() {
                m.row_mut(i).assign(&ndarray::ArrayView1::from(
                    slices[*s].word_vector(w).unwrap(),
                ));
            }
            m
        })
        .collect();
    let relation: Vec<(usize, usize)> = sets[0]
        .iter()
        .enumerate()
        .filter_map(|(i, a)| sets[1].iter().position(|b| b.1 == a.1).map(|j| (i, j)))
        .collect();
    let p = ReducerParams {
        out_dim: 2,
        metric: Metric::Cosine,
        ..params.clone()
    };
    let views: Vec<_> = matrices.iter().map(|m| m.view()).collect();
    let aligned = fit_aligned(&views, &[relation], &p)?;
    let points = sets
        .iter()
        .zip(&aligned.embeddings)
        .flat_map(|(set, emb)| {
            set.iter()
                .enumerate()
                .map(move |(i, (s, term, focus))| ScatterPoint {
                    term: term.clone(),
                    time: *s,
                    focus: *focus,
                    x: emb[[i, 0]],
                    y: emb[[i, 1]],
                })
        })
        .collect();
    Ok(ContextScatter {
        focus: focus.to_string(),
        neighbors,
        points,
    })
}
