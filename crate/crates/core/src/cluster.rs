//! HDBSCAN density clustering and centroid-based cluster reduction.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reduce::csv_field;
use crate::vector::euclidean;

pub const NOISE: i32 = -1;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("invalid clustering parameters: {0}")]
    InvalidParams(String),
    #[error("point set has {got} columns, clustering has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    pub min_cluster_size: usize,
    /// Neighbour count for core distances; defaults to `min_cluster_size`.
    pub min_samples: Option<usize>,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            min_cluster_size: 15,
            min_samples: None,
        }
    }
}

impl ClusterParams {
    pub fn new(min_cluster_size: usize) -> Self {
        Self {
            min_cluster_size,
            min_samples: None,
        }
    }

    pub fn min_samples(&self) -> usize {
        self.min_samples.unwrap_or(self.min_cluster_size)
    }

    fn validate(&self) -> Result<(), ClusterError> {
        if self.min_cluster_size < 2 {
            return Err(ClusterError::InvalidParams(
                "min_cluster_size must be at least 2".into(),
            ));
        }
        if self.min_samples() < 1 {
            return Err(ClusterError::InvalidParams(
                "min_samples must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One merge performed by [`merge_to_target`], in original cluster labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub absorbed: usize,
    pub into: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Coordinates the clustering was computed on.
    pub points: Array2<f64>,
    /// Per point; [`NOISE`] for noise.
    pub labels: Vec<i32>,
    pub n_clusters: usize,
    pub centroids: Vec<Vec<f64>>,
    pub membership_strengths: Vec<f64>,
    /// Per cluster: 95th percentile of member-to-centroid distances.
    pub radii: Vec<f64>,
    /// Per cluster: the labels it had before any merging, ascending.
    pub lineage: Vec<Vec<usize>>,
    pub merges: Vec<MergeRecord>,
    /// Set when fewer than two points were given.
    pub degenerate: bool,
}

impl Clustering {
    pub fn members(&self, label: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == label as i32)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_clusters];
        for &l in &self.labels {
            if l >= 0 {
                s[l as usize] += 1;
            }
        }
        s
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }

    fn from_labels(
        points: Array2<f64>,
        labels: Vec<i32>,
        strengths: Vec<f64>,
        degenerate: bool,
    ) -> Self {
        let n_clusters = labels.iter().map(|&l| l + 1).max().unwrap_or(0).max(0) as usize;
        let mut c = Clustering {
            points,
            labels,
            n_clusters,
            centroids: Vec::new(),
            membership_strengths: strengths,
            radii: Vec::new(),
            lineage: (0..n_clusters).map(|l| vec![l]).collect(),
            merges: Vec::new(),
            degenerate,
        };
        c.recompute_geometry();
        c
    }

    fn recompute_geometry(&mut self) {
        let dim = self.points.ncols();
        let mut sums = vec![vec![0.0; dim]; self.n_clusters];
        let mut counts = vec![0usize; self.n_clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= 0 {
                let l = l as usize;
                counts[l] += 1;
                for d in 0..dim {
                    sums[l][d] += self.points[[i, d]];
                }
            }
        }
        self.centroids = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| s.into_iter().map(|x| x / c.max(1) as f64).collect())
            .collect();
        let mut dists: Vec<Vec<f64>> = vec![Vec::new(); self.n_clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= 0 {
                let row: Vec<f64> = self.points.row(i).to_vec();
                dists[l as usize].push(euclidean(&row, &self.centroids[l as usize]));
            }
        }
        self.radii = dists.into_iter().map(|d| percentile(d, 0.95)).collect();
    }
}

/// Nearest-rank percentile; 0 for an empty list.
pub fn percentile(mut values: Vec<f64>, q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[rank - 1]
}

fn row<'a>(points: &'a ArrayView2<'_, f64>, i: usize) -> &'a [f64] {
    points.row(i).to_slice().expect("standard layout")
}

/// Distance to the `k`-th nearest point, counting the point itself as the
/// first.
pub fn core_distances(points: ArrayView2<f64>, k: usize) -> Vec<f64> {
    let owned = points.as_standard_layout();
    let points = owned.view();
    let n = points.nrows();
    let k = k.clamp(1, n.max(1));
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .map(|j| euclidean(row(&points, i), row(&points, j)))
                .collect();
            d.select_nth_unstable_by(k - 1, f64::total_cmp);
            d[k - 1]
        })
        .collect()
}

pub fn mutual_reachability(points: ArrayView2<f64>, core: &[f64], i: usize, j: usize) -> f64 {
    euclidean(row(&points, i), row(&points, j))
        .max(core[i])
        .max(core[j])
}

/// Minimum spanning tree of the mutual reachability graph by dense Prim,
/// as `(i, j, weight)` in insertion order.
pub fn mutual_reachability_mst(
    points: ArrayView2<f64>,
    min_samples: usize,
) -> Vec<(usize, usize, f64)> {
    let points = points.as_standard_layout();
    let points = points.view();
    let n = points.nrows();
    if n < 2 {
        return Vec::new();
    }
    let core = core_distances(points, min_samples);
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = mutual_reachability(points, &core, current, j);
            if d < best[j] {
                best[j] = d;
                from[j] = current;
            }
        }
        let mut next = usize::MAX;
        for j in 0..n {
            if !in_tree[j] && (next == usize::MAX || best[j] < best[next]) {
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((from[next], next, best[next]));
        current = next;
    }
    edges
}

struct Dendrogram {
    n: usize,
    left: Vec<usize>,
    right: Vec<usize>,
    dist: Vec<f64>,
    size: Vec<usize>,
}

impl Dendrogram {
    fn size_of(&self, node: usize) -> usize {
        if node < self.n {
            1
        } else {
            self.size[node - self.n]
        }
    }

    fn leaves(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < self.n {
                out.push(x);
            } else {
                stack.push(self.right[x - self.n]);
                stack.push(self.left[x - self.n]);
            }
        }
        out
    }
}

fn single_linkage(n: usize, mut mst: Vec<(usize, usize, f64)>) -> Dendrogram {
    mst.sort_by(|a, b| {
        a.2.total_cmp(&b.2)
            .then(a.0.min(a.1).cmp(&b.0.min(b.1)))
            .then(a.0.max(a.1).cmp(&b.0.max(b.1)))
    });
    let mut parent: Vec<usize> = (0..2 * n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut d = Dendrogram {
        n,
        left: Vec::new(),
        right: Vec::new(),
        dist: Vec::new(),
        size: Vec::new(),
    };
    for (a, b, w) in mst {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        let node = n + d.left.len();
        let s = d.size_of(ra) + d.size_of(rb);
        d.left.push(ra);
        d.right.push(rb);
        d.dist.push(w);
        d.size.push(s);
        parent[ra] = node;
        parent[rb] = node;
    }
    d
}

/// Condensed tree edge. Children below `n` are points, at or above are
/// clusters; the root cluster is `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondensedEdge {
    pub parent: usize,
    pub child: usize,
    pub lambda: f64,
    pub size: usize,
}

fn condense(d: &Dendrogram, min_cluster_size: usize) -> Vec<CondensedEdge> {
    let n = d.n;
    let root = n + d.left.len() - 1;
    let max_finite = d
        .dist
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| 1.0 / x)
        .fold(0.0, f64::max);
    // Zero distances get a finite lambda above every real one.
    let cap = if max_finite > 0.0 {
        2.0 * max_finite
    } else {
        1.0
    };
    let mut label = vec![0usize; 2 * n];
    let mut next = n;
    label[root] = next;
    next += 1;
    let mut out = Vec::new();
    let mut queue = vec![root];
    let mut qi = 0;
    while qi < queue.len() {
        let node = queue[qi];
        qi += 1;
        let k = node - n;
        let (l, r, dist) = (d.left[k], d.right[k], d.dist[k]);
        let lambda = if dist > 0.0 { 1.0 / dist } else { cap };
        let parent = label[node];
        let (ls, rs) = (d.size_of(l), d.size_of(r));
        let fall_out = |sub: usize, out: &mut Vec<CondensedEdge>| {
            for p in d.leaves(sub) {
                out.push(CondensedEdge {
                    parent,
                    child: p,
                    lambda,
                    size: 1,
                });
            }
        };
        if dist == 0.0 {
            // Coincident points cannot be separated; they leave together.
            fall_out(l, &mut out);
            fall_out(r, &mut out);
        } else if ls >= min_cluster_size && rs >= min_cluster_size {
            for (c, s) in [(l, ls), (r, rs)] {
                label[c] = next;
                next += 1;
                out.push(CondensedEdge {
                    parent,
                    child: label[c],
                    lambda,
                    size: s,
                });
                if c >= n {
                    queue.push(c);
                }
            }
        } else if ls < min_cluster_size && rs < min_cluster_size {
            fall_out(l, &mut out);
            fall_out(r, &mut out);
        } else {
            let (big, small) = if ls >= min_cluster_size {
                (l, r)
            } else {
                (r, l)
            };
            fall_out(small, &mut out);
            if big >= n {
                label[big] = parent;
                queue.push(big);
            } else {
                out.push(CondensedEdge {
                    parent,
                    child: big,
                    lambda,
                    size: 1,
                });
            }
        }
    }
    out
}

/// Excess-of-mass selection. Returns `(selected, stability)` indexed by
/// cluster id minus `n`. The root is eligible only if the tree never splits.
fn select_eom(tree: &[CondensedEdge], n: usize) -> (Vec<bool>, Vec<f64>) {
    let n_clusters = tree
        .iter()
        .map(|e| e.parent.max(if e.child >= n { e.child } else { n }))
        .max()
        .map_or(1, |m| m - n + 1);
    let mut birth = vec![0.0; n_clusters];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for e in tree.iter().filter(|e| e.child >= n) {
        birth[e.child - n] = e.lambda;
        children[e.parent - n].push(e.child - n);
    }
    let mut stability = vec![0.0; n_clusters];
    for e in tree {
        stability[e.parent - n] += (e.lambda - birth[e.parent - n]) * e.size as f64;
    }
    let mut selected = vec![true; n_clusters];
    if !children[0].is_empty() {
        selected[0] = false;
    }
    for c in (0..n_clusters).rev() {
        if children[c].is_empty() {
            continue;
        }
        let sub: f64 = children[c].iter().map(|&x| stability[x]).sum();
        if c == 0 {
            break;
        }
        if sub > stability[c] {
            selected[c] = false;
            stability[c] = sub;
        } else {
            let mut stack = children[c].clone();
            while let Some(x) = stack.pop() {
                selected[x] = false;
                stack.extend(children[x].iter().copied());
            }
        }
    }
    (selected, stability)
}

/// Condensed cluster tree with per-cluster stability and the excess-of-mass
/// selection, both indexed by cluster id minus the point count.
pub fn condensed_tree(
    points: ArrayView2<f64>,
    params: &ClusterParams,
) -> Result<(Vec<CondensedEdge>, Vec<f64>, Vec<bool>), ClusterError> {
    params.validate()?;
    let n = points.nrows();
    if n < 2 {
        return Ok((Vec::new(), Vec::new(), Vec::new()));
    }
    let mst = mutual_reachability_mst(points, params.min_samples());
    let tree = condense(&single_linkage(n, mst), params.min_cluster_size);
    let (selected, stability) = select_eom(&tree, n);
    Ok((tree, stability, selected))
}

pub fn hdbscan(
    points: ArrayView2<f64>,
    params: &ClusterParams,
) -> Result<Clustering, ClusterError> {
    params.validate()?;
    let owned = points.as_standard_layout().to_owned();
    let n = owned.nrows();
    if n < 2 {
        return Ok(Clustering::from_labels(
            owned,
            vec![NOISE; n],
            vec![0.0; n],
            true,
        ));
    }
    if n < params.min_cluster_size {
        return Ok(Clustering::from_labels(
            owned,
            vec![NOISE; n],
            vec![0.0; n],
            false,
        ));
    }
    let mst = mutual_reachability_mst(owned.view(), params.min_samples());
    let dendro = single_linkage(n, mst);
    let tree = condense(&dendro, params.min_cluster_size);
    let (selected, _) = select_eom(&tree, n);

    let n_tree = selected.len();
    let mut parent_of = vec![usize::MAX; n_tree];
    for e in tree.iter().filter(|e| e.child >= n) {
        parent_of[e.child - n] = e.parent - n;
    }
    // Selected ancestor (or self) of each cluster; parents precede children.
    let mut owner = vec![usize::MAX; n_tree];
    for c in 0..n_tree {
        owner[c] = if selected[c] {
            c
        } else if parent_of[c] != usize::MAX {
            owner[parent_of[c]]
        } else {
            usize::MAX
        };
    }
    let chosen: Vec<usize> = (0..n_tree).filter(|&c| selected[c]).collect();
    let label_of: BTreeMap<usize, i32> = chosen
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i as i32))
        .collect();
    let mut labels = vec![NOISE; n];
    let mut lambdas = vec![0.0; n];
    for e in tree.iter().filter(|e| e.child < n) {
        lambdas[e.child] = e.lambda;
        let o = owner[e.parent - n];
        if o != usize::MAX {
            labels[e.child] = label_of[&o];
        }
    }
    let mut max_lambda = vec![0.0f64; chosen.len()];
    for i in 0..n {
        if labels[i] >= 0 {
            let l = labels[i] as usize;
            max_lambda[l] = max_lambda[l].max(lambdas[i]);
        }
    }
    let strengths = (0..n)
        .map(|i| {
            if labels[i] < 0 {
                0.0
            } else {
                let m = max_lambda[labels[i] as usize];
                if m > 0.0 {
                    (lambdas[i] / m).clamp(0.0, 1.0)
                } else {
                    1.0
                }
            }
        })
        .collect();
    Ok(Clustering::from_labels(owned, labels, strengths, false))
}

/// Repeatedly merges the smallest cluster (ties: lowest label) into the
/// cluster with the nearest centroid (ties: lowest label) until `target_k`
/// remain. Surviving clusters are renumbered in order of their labels.
pub fn merge_to_target(
    clustering: &Clustering,
    target_k: usize,
) -> Result<Clustering, ClusterError> {
    if target_k < 1 {
        return Err(ClusterError::InvalidParams(
            "target_k must be at least 1".into(),
        ));
    }
    if target_k >= clustering.n_clusters {
        return Ok(clustering.clone());
    }
    let dim = clustering.points.ncols();
    let mut members: BTreeMap<usize, Vec<usize>> = (0..clustering.n_clusters)
        .map(|l| (l, clustering.members(l)))
        .collect();
    let mut centroid: BTreeMap<usize, Vec<f64>> = (0..clustering.n_clusters)
        .map(|l| (l, clustering.centroids[l].clone()))
        .collect();
    let mut lineage: BTreeMap<usize, Vec<usize>> = (0..clustering.n_clusters)
        .map(|l| (l, clustering.lineage[l].clone()))
        .collect();
    let mut merges = clustering.merges.clone();
    while members.len() > target_k {
        let (&small, _) = members
            .iter()
            .min_by(|a, b| a.1.len().cmp(&b.1.len()).then(a.0.cmp(b.0)))
            .expect("non-empty");
        let (into, distance) = centroid
            .iter()
            .filter(|(&l, _)| l != small)
            .map(|(&l, c)| (l, euclidean(c, &centroid[&small])))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("at least two clusters");
        let moved = members.remove(&small).unwrap();
        centroid.remove(&small);
        let moved_lineage = lineage.remove(&small).unwrap();
        let target = members.get_mut(&into).unwrap();
        target.extend(moved);
        target.sort_unstable();
        let mut c = vec![0.0; dim];
        for &i in target.iter() {
            for d in 0..dim {
                c[d] += clustering.points[[i, d]];
            }
        }
        c.iter_mut().for_each(|x| *x /= target.len() as f64);
        centroid.insert(into, c);
        let lin = lineage.get_mut(&into).unwrap();
        lin.extend(moved_lineage);
        lin.sort_unstable();
        merges.push(MergeRecord {
            absorbed: small,
            into,
            distance,
        });
    }
    let mut labels = vec![NOISE; clustering.labels.len()];
    for (new, (_, ms)) in members.iter().enumerate() {
        for &i in ms {
            labels[i] = new as i32;
        }
    }
    let mut out = Clustering::from_labels(
        clustering.points.clone(),
        labels,
        clustering.membership_strengths.clone(),
        clustering.degenerate,
    );
    out.n_clusters = members.len();
    out.lineage = lineage.into_values().collect();
    out.merges = merges;
    out.recompute_geometry();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Radius {
    /// Each cluster's 95th-percentile member distance.
    Percentile,
    Fixed(f64),
    Unlimited,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub label: i32,
    /// Distance to the nearest centroid (infinite with no clusters).
    pub distance: f64,
    /// Nearest cluster regardless of the radius cut-off.
    pub nearest: i32,
}

pub fn assign_nearest(
    clustering: &Clustering,
    points: ArrayView2<f64>,
) -> Result<Vec<Assignment>, ClusterError> {
    assign_nearest_within(clustering, points, Radius::Percentile)
}

/// Nearest-centroid assignment; ties go to the lower label. Points beyond
/// the radius of their nearest cluster are noise.
pub fn assign_nearest_within(
    clustering: &Clustering,
    points: ArrayView2<f64>,
    radius: Radius,
) -> Result<Vec<Assignment>, ClusterError> {
    let dim = clustering.points.ncols();
    if points.nrows() > 0 && points.ncols() != dim {
        return Err(ClusterError::DimensionMismatch {
            expected: dim,
            got: points.ncols(),
        });
    }
    Ok(points
        .rows()
        .into_iter()
        .map(|p| {
            let p: Vec<f64> = p.to_vec();
            let mut best: Option<(usize, f64)> = None;
            for (l, c) in clustering.centroids.iter().enumerate() {
                let d = euclidean(&p, c);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((l, d));
                }
            }
            match best {
                None => Assignment {
                    label: NOISE,
                    distance: f64::INFINITY,
                    nearest: NOISE,
                },
                Some((l, d)) => {
                    let limit = match radius {
                        Radius::Percentile => clustering.radii[l],
                        Radius::Fixed(r) => r,
                        Radius::Unlimited => f64::INFINITY,
                    };
                    Assignment {
                        label: if d <= limit { l as i32 } else { NOISE },
                        distance: d,
                        nearest: l as i32,
                    }
                }
            }
        })
        .collect())
}

/// Writes `point_id,label,strength` rows.
pub fn write_clustering_csv<W: Write>(
    mut w: W,
    ids: &[String],
    c: &Clustering,
) -> std::io::Result<()> {
    writeln!(w, "point_id,label,strength")?;
    for ((id, l), s) in ids.iter().zip(&c.labels).zip(&c.membership_strengths) {
        writeln!(w, "{},{l},{s}", csv_field(id))?;
    }
    Ok(())
}

pub fn save_clustering_csv(
    path: &Path,
    ids: &[String],
    c: &Clustering,
) -> Result<(), ClusterError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_clustering_csv(&mut w, ids, c)?;
    w.flush()?;
    Ok(())
}

/// Adjusted Rand index between two labelings (noise is an ordinary label).
pub fn adjusted_rand_index(a: &[i64], b: &[i64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut table: BTreeMap<(i64, i64), u64> = BTreeMap::new();
    let mut ra: BTreeMap<i64, u64> = BTreeMap::new();
    let mut rb: BTreeMap<i64, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&v| c2(v)).sum();
    let sa: f64 = ra.values().map(|&v| c2(v)).sum();
    let sb: f64 = rb.values().map(|&v| c2(v)).sum();
    let total = c2(n as u64);
    let expected = sa * sb / total;
    let max = (sa + sb) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
