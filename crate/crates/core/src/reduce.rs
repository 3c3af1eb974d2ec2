//! UMAP-style nonlinear dimensionality reduction.
//!
//! [`fit`] builds an exact k-nearest-neighbour graph, calibrates per-point
//! bandwidths so neighbour memberships sum to `log2(k)`, symmetrises with the
//! probabilistic t-conorm and optimises a low-dimensional layout by edge
//! sampling SGD with negative sampling. [`transform`] places new points into
//! a fitted layout without moving the training embedding, and [`fit_aligned`]
//! jointly lays out a sequence of related point sets, coupling points that
//! represent the same item in adjacent sets.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vector::{dot_f64, norm_f64, squared_euclidean};

#[derive(Debug, Error)]
pub enum ReduceError {
    #[error("invalid reducer parameters: {0}")]
    InvalidParams(String),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("row {0} contains a non-finite value")]
    NonFinite(usize),
    #[error("dimension mismatch: fitted on {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("relations for pair {0} refer to rows outside the point sets")]
    BadRelation(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("artifact encoding: {0}")]
    Encoding(#[from] bincode::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Pca,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReducerParams {
    pub n_neighbors: usize,
    pub out_dim: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub metric: Metric,
    /// Layout epochs; `None` picks 500 for up to 10k points and 200 above.
    pub n_epochs: Option<usize>,
    /// SGD refinement epochs in [`FittedReducer::transform`]. The default of
    /// zero keeps the membership-weighted mean of the neighbours' positions:
    /// a placed point has no reverse edges to balance negative sampling, so
    /// refinement pushes it to the rim of its cluster. `None` uses the usual
    /// UMAP schedule (a third of `n_epochs`, or 100 / 30 when unset).
    pub transform_epochs: Option<usize>,
    pub learning_rate: f64,
    pub negative_sample_rate: usize,
    pub init: Init,
    pub seed: u64,
    /// Spring coefficient between related points of adjacent sets
    /// ([`fit_aligned`] only).
    pub alignment_weight: f64,
}

impl Default for ReducerParams {
    fn default() -> Self {
        Self {
            n_neighbors: 15,
            out_dim: 2,
            min_dist: 0.1,
            spread: 1.0,
            metric: Metric::Cosine,
            n_epochs: None,
            transform_epochs: Some(0),
            learning_rate: 1.0,
            negative_sample_rate: 5,
            init: Init::Pca,
            seed: 0,
            alignment_weight: 0.01,
        }
    }
}

impl ReducerParams {
    fn validate(&self) -> Result<(), ReduceError> {
        let bad = |m: &str| Err(ReduceError::InvalidParams(m.to_string()));
        if self.n_neighbors < 2 {
            return bad("n_neighbors must be at least 2");
        }
        if self.out_dim < 2 {
            return bad("out_dim must be at least 2");
        }
        if !(self.min_dist >= 0.0) || !(self.spread > 0.0) || self.min_dist > self.spread {
            return bad("need 0 <= min_dist <= spread and spread > 0");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.alignment_weight >= 0.0) {
            return bad("alignment_weight must be non-negative");
        }
        Ok(())
    }

    fn epochs_for(&self, n: usize) -> usize {
        self.n_epochs
            .unwrap_or(if n <= 10_000 { 500 } else { 200 })
            .max(1)
    }
}

/// Exact neighbour lists, nearest first. A point is never its own neighbour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnGraph {
    pub indices: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
}

fn distance(metric: Metric, a: &[f32], na: f64, b: &[f32], nb: f64) -> f64 {
    match metric {
        Metric::Cosine => {
            if na == 0.0 || nb == 0.0 {
                return 1.0;
            }
            (1.0 - dot_f64(a, b) / (na * nb)).max(0.0)
        }
        Metric::Euclidean => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = x as f64 - y as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt(),
    }
}

fn row_norms(points: ArrayView2<f32>) -> Vec<f64> {
    points
        .rows()
        .into_iter()
        .map(|r| norm_f64(r.as_slice().expect("standard layout")))
        .collect()
}

fn nearest_of(
    query: &[f32],
    query_norm: f64,
    points: ArrayView2<f32>,
    norms: &[f64],
    k: usize,
    metric: Metric,
    exclude: Option<usize>,
) -> (Vec<usize>, Vec<f64>) {
    let mut cand: Vec<(f64, usize)> = points
        .rows()
        .into_iter()
        .enumerate()
        .filter(|&(j, _)| Some(j) != exclude)
        .map(|(j, r)| {
            (
                distance(metric, query, query_norm, r.as_slice().unwrap(), norms[j]),
                j,
            )
        })
        .collect();
    let k = k.min(cand.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k > 0 && k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand.into_iter().map(|(d, j)| (j, d)).unzip()
}

/// Exact kNN by full scan; ties broken by lower index.
pub fn exact_knn(points: ArrayView2<f32>, k: usize, metric: Metric) -> KnnGraph {
    let points = points.as_standard_layout();
    let view = points.view();
    let norms = row_norms(view);
    let (indices, distances) = (0..view.nrows())
        .into_par_iter()
        .map(|i| {
            nearest_of(
                view.row(i).as_slice().unwrap(),
                norms[i],
                view,
                &norms,
                k,
                metric,
                Some(i),
            )
        })
        .unzip();
    KnnGraph { indices, distances }
}

/// Per-point smooth-kNN calibration: `rho` is the distance to the nearest
/// neighbour and `sigma` solves `sum_j exp(-max(0, d_j - rho) / sigma) =
/// log2(k)` by bisection.
pub fn smooth_knn(distances: &[Vec<f64>], k: usize) -> (Vec<f64>, Vec<f64>) {
    let target = (k as f64).log2();
    distances
        .iter()
        .map(|d| {
            let rho = d.first().copied().unwrap_or(0.0);
            (rho, solve_sigma(d, rho, target))
        })
        .unzip()
}

pub fn membership_sum(dists: &[f64], rho: f64, sigma: f64) -> f64 {
    dists
        .iter()
        .map(|&d| {
            let x = (d - rho).max(0.0);
            if x == 0.0 {
                1.0
            } else {
                (-x / sigma).exp()
            }
        })
        .sum()
}

fn solve_sigma(dists: &[f64], rho: f64, target: f64) -> f64 {
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    let mut mid = 1.0f64;
    for _ in 0..200 {
        let s = membership_sum(dists, rho, mid);
        if (s - target).abs() < 1e-9 {
            break;
        }
        if s > target {
            hi = mid;
            mid = (lo + hi) / 2.0;
        } else {
            lo = mid;
            mid = if hi.is_infinite() {
                mid * 2.0
            } else {
                (lo + hi) / 2.0
            };
        }
        if mid <= f64::MIN_POSITIVE {
            break;
        }
    }
    mid.max(f64::MIN_POSITIVE)
}

/// Symmetric fuzzy graph as an undirected edge list `(i, j, w)` with
/// `i < j`, sorted.
pub fn fuzzy_graph(knn: &KnnGraph, rhos: &[f64], sigmas: &[f64]) -> Vec<(usize, usize, f64)> {
    let mut directed: HashMap<(usize, usize), (f64, f64)> = HashMap::new();
    for (i, (idx, dist)) in knn.indices.iter().zip(&knn.distances).enumerate() {
        for (&j, &d) in idx.iter().zip(dist) {
            let x = (d - rhos[i]).max(0.0);
            let w = if x == 0.0 {
                1.0
            } else {
                (-x / sigmas[i]).exp()
            };
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            let e = directed.entry((a, b)).or_insert((0.0, 0.0));
            if i < j {
                e.0 = w;
            } else {
                e.1 = w;
            }
        }
    }
    let mut edges: Vec<(usize, usize, f64)> = directed
        .into_iter()
        .map(|((i, j), (a, b))| (i, j, a + b - a * b))
        .filter(|e| e.2 > 0.0)
        .collect();
    edges.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    edges
}

/// Least-squares fit of `1 / (1 + a x^(2b))` to the target membership curve
/// (1 below `min_dist`, exponential decay with scale `spread` above).
pub fn fit_curve(min_dist: f64, spread: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..300).map(|i| 3.0 * spread * i as f64 / 299.0).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| {
            if x < min_dist {
                1.0
            } else {
                (-(x - min_dist) / spread).exp()
            }
        })
        .collect();
    let sse = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let r = 1.0 / (1.0 + a * x.powf(2.0 * b)) - y;
                r * r
            })
            .sum()
    };
    let (mut a, mut b) = (1.0f64, 1.0f64);
    let mut lambda = 1e-3;
    let mut err = sse(a, b);
    for _ in 0..500 {
        // Gauss-Newton normal equations with Levenberg damping.
        let (mut jtj, mut jtr) = ([[0.0f64; 2]; 2], [0.0f64; 2]);
        for (&x, &y) in xs.iter().zip(&ys) {
            let xp = if x > 0.0 { x.powf(2.0 * b) } else { 0.0 };
            let g = 1.0 / (1.0 + a * xp);
            let r = g - y;
            let da = -xp * g * g;
            let db = if x > 0.0 {
                -a * xp * 2.0 * x.ln() * g * g
            } else {
                0.0
            };
            let j = [da, db];
            for p in 0..2 {
                jtr[p] += j[p] * r;
                for q in 0..2 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        let m00 = jtj[0][0] * (1.0 + lambda);
        let m11 = jtj[1][1] * (1.0 + lambda);
        let det = m00 * m11 - jtj[0][1] * jtj[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let step_a = (m11 * jtr[0] - jtj[0][1] * jtr[1]) / det;
        let step_b = (m00 * jtr[1] - jtj[1][0] * jtr[0]) / det;
        let (na, nb) = (a - step_a, b - step_b);
        if na > 0.0 && nb > 0.0 {
            let ne = sse(na, nb);
            if ne < err {
                let converged = (err - ne) < 1e-15;
                a = na;
                b = nb;
                err = ne;
                lambda = (lambda / 10.0).max(1e-12);
                if converged {
                    break;
                }
                continue;
            }
        }
        lambda *= 10.0;
        if lambda > 1e12 {
            break;
        }
    }
    (a, b)
}

/// Top principal directions of the (row-normalised for cosine) data,
/// computed by power iteration with deflation.
fn pca_basis(points: ArrayView2<f32>, out_dim: usize, metric: Metric) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = points.ncols();
    let rows = prepared_rows(points, metric);
    let n = rows.len().max(1);
    let mut mean = vec![0.0; d];
    for r in &rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![vec![0.0; d]; d];
    for r in &rows {
        let c: Vec<f64> = r.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for p in 0..d {
            if c[p] == 0.0 {
                continue;
            }
            for q in p..d {
                cov[p][q] += c[p] * c[q];
            }
        }
    }
    for p in 0..d {
        for q in 0..p {
            cov[p][q] = cov[q][p];
        }
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(out_dim);
    for c in 0..out_dim {
        // Deterministic, non-degenerate start vector.
        let mut v: Vec<f64> = (0..d)
            .map(|i| 1.0 + ((i * 7 + c * 13) % 11) as f64 / 10.0)
            .collect();
        for _ in 0..300 {
            let mut w: Vec<f64> = (0..d).map(|p| dot64(&cov[p], &v)).collect();
            for b in &basis {
                let proj = dot64(&w, b);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
            let norm = dot64(&w, &w).sqrt();
            if norm < 1e-300 {
                break;
            }
            w.iter_mut().for_each(|x| *x /= norm);
            let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = w;
            if delta < 1e-12 {
                break;
            }
        }
        // Gram-Schmidt once more for safety against drift.
        for b in &basis {
            let proj = dot64(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = dot64(&v, &v).sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        basis.push(v);
    }
    (mean, basis)
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn prepared_rows(points: ArrayView2<f32>, metric: Metric) -> Vec<Vec<f64>> {
    points
        .rows()
        .into_iter()
        .map(|r| {
            let v: Vec<f64> = r.iter().map(|&x| x as f64).collect();
            match metric {
                Metric::Cosine => {
                    let n = dot64(&v, &v).sqrt();
                    if n > 0.0 {
                        v.into_iter().map(|x| x / n).collect()
                    } else {
                        v
                    }
                }
                Metric::Euclidean => v,
            }
        })
        .collect()
}

fn project(
    points: ArrayView2<f32>,
    metric: Metric,
    mean: &[f64],
    basis: &[Vec<f64>],
) -> Array2<f64> {
    let rows = prepared_rows(points, metric);
    let mut out = Array2::zeros((rows.len(), basis.len()));
    for (i, r) in rows.iter().enumerate() {
        let c: Vec<f64> = r.iter().zip(mean).map(|(x, m)| x - m).collect();
        for (k, b) in basis.iter().enumerate() {
            out[[i, k]] = dot64(&c, b);
        }
    }
    out
}

/// Scales so the largest absolute coordinate is 10.
fn rescale(emb: &mut [&mut Array2<f64>]) {
    let max = emb
        .iter()
        .flat_map(|e| e.iter())
        .fold(0.0f64, |m, &x| m.max(x.abs()));
    if max > 0.0 {
        for e in emb.iter_mut() {
            e.mapv_inplace(|x| x * 10.0 / max);
        }
    }
}

fn initial_layout(
    points: ArrayView2<f32>,
    params: &ReducerParams,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    match params.init {
        Init::Pca => {
            let (mean, basis) = pca_basis(points, params.out_dim, params.metric);
            let mut e = project(points, params.metric, &mean, &basis);
            rescale(&mut [&mut e]);
            e
        }
        Init::Random => Array2::from_shape_fn((points.nrows(), params.out_dim), |_| {
            rng.random::<f64>() * 20.0 - 10.0
        }),
    }
}

#[inline]
fn clip(x: f64) -> f64 {
    x.clamp(-4.0, 4.0)
}

/// Edge sampling schedule shared by fit, transform and the aligned variant.
struct Schedule {
    heads: Vec<usize>,
    tails: Vec<usize>,
    epochs_per_sample: Vec<f64>,
    next_sample: Vec<f64>,
    epochs_per_negative: Vec<f64>,
    next_negative: Vec<f64>,
}

impl Schedule {
    /// Each undirected edge contributes both directions.
    fn new(
        edges: &[(usize, usize, f64)],
        n_epochs: usize,
        negative_rate: usize,
        both: bool,
    ) -> Self {
        let max_w = edges.iter().fold(0.0f64, |m, e| m.max(e.2));
        let mut s = Schedule {
            heads: Vec::new(),
            tails: Vec::new(),
            epochs_per_sample: Vec::new(),
            next_sample: Vec::new(),
            epochs_per_negative: Vec::new(),
            next_negative: Vec::new(),
        };
        for &(i, j, w) in edges {
            if w < max_w / n_epochs as f64 {
                continue;
            }
            let eps = max_w / w;
            let dirs: &[(usize, usize)] = if both { &[(i, j), (j, i)] } else { &[(i, j)] };
            for &(h, t) in dirs {
                s.heads.push(h);
                s.tails.push(t);
                s.epochs_per_sample.push(eps);
                s.next_sample.push(eps);
                s.epochs_per_negative
                    .push(eps / negative_rate.max(1) as f64);
                s.next_negative.push(eps / negative_rate.max(1) as f64);
            }
        }
        s
    }
}

struct LayoutCtx<'a> {
    a: f64,
    b: f64,
    dim: usize,
    /// Alignment springs: per vertex, partner rows in neighbouring embeddings.
    springs: Option<(&'a [Vec<(usize, usize, f64)>], &'a [Array2<f64>], f64)>,
}

impl LayoutCtx<'_> {
    fn spring(&self, v: usize, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let Some((partners, snapshot, weight)) = self.springs else {
            return;
        };
        let ps = &partners[v];
        if ps.is_empty() || weight == 0.0 {
            return;
        }
        for &(set, row, w) in ps {
            let other = snapshot[set].row(row);
            for d in 0..self.dim {
                out[d] += w * (y[d] - other[d]);
            }
        }
        // Gradient of `weight * |y - partner|^2` averaged over partners.
        let scale = 2.0 * weight / ps.len() as f64;
        out.iter_mut().for_each(|g| *g = clip(-scale * *g));
    }
}

/// Source of negative samples. `Keyed` draws depend only on the epoch and
/// the edge, so two sets sharing an edge also share its negative samples
/// regardless of what else differs between their graphs.
enum Negatives<'a> {
    Stream(&'a mut ChaCha8Rng),
    Keyed(u64),
}

impl Negatives<'_> {
    fn draw(&mut self, n: usize, epoch: usize, head: usize, tail: usize, i: usize) -> usize {
        match self {
            Negatives::Stream(rng) => rng.random_range(0..n),
            Negatives::Keyed(seed) => {
                let mut h = *seed;
                for x in [epoch, head, tail, i] {
                    h = splitmix64(h ^ x as u64);
                }
                (h % n as u64) as usize
            }
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One epoch of edge-sampling SGD. `moving` marks rows that may be updated;
/// `negatives_from` is the pool negative samples are drawn from.
#[allow(clippy::too_many_arguments)]
fn layout_epoch(
    emb: &mut Array2<f64>,
    fixed: Option<&Array2<f64>>,
    sched: &mut Schedule,
    ctx: &LayoutCtx,
    epoch: usize,
    alpha: f64,
    move_other: bool,
    mut negatives: Negatives,
) {
    let dim = ctx.dim;
    let (a, b) = (ctx.a, ctx.b);
    let n_pool = fixed.map_or(emb.nrows(), |f| f.nrows());
    let mut current = vec![0.0; dim];
    let mut spring = vec![0.0; dim];
    let e_f = epoch as f64;
    for e in 0..sched.heads.len() {
        if sched.next_sample[e] > e_f {
            continue;
        }
        let j = sched.heads[e];
        let k = sched.tails[e];
        for d in 0..dim {
            current[d] = emb[[j, d]];
        }
        let other: Vec<f64> = match fixed {
            Some(f) => f.row(k).to_vec(),
            None => emb.row(k).to_vec(),
        };
        let d2 = squared_euclidean(&current, &other);
        let coeff = if d2 > 0.0 {
            -2.0 * a * b * d2.powf(b - 1.0) / (a * d2.powf(b) + 1.0)
        } else {
            0.0
        };
        ctx.spring(j, &current, &mut spring);
        for d in 0..dim {
            let g = clip(coeff * (current[d] - other[d]));
            current[d] += (g + spring[d]) * alpha;
            if move_other && fixed.is_none() {
                emb[[k, d]] -= g * alpha;
            }
        }
        if move_other && fixed.is_none() && ctx.springs.is_some() {
            let yk: Vec<f64> = emb.row(k).to_vec();
            ctx.spring(k, &yk, &mut spring);
            for d in 0..dim {
                emb[[k, d]] += spring[d] * alpha;
            }
        }
        sched.next_sample[e] += sched.epochs_per_sample[e];

        let n_neg = ((e_f - sched.next_negative[e]) / sched.epochs_per_negative[e]).floor();
        let n_neg = if n_neg > 0.0 { n_neg as usize } else { 0 };
        for i in 0..n_neg {
            let s = negatives.draw(n_pool, epoch, j, k, i);
            if fixed.is_none() && s == j {
                continue;
            }
            let other = match fixed {
                Some(f) => f.row(s),
                None => emb.row(s),
            };
            let d2: f64 = (0..dim).map(|d| (current[d] - other[d]).powi(2)).sum();
            // Coincident points exert no repulsion so duplicates stay together.
            if d2 <= 0.0 {
                continue;
            }
            let coeff = 2.0 * b / ((0.001 + d2) * (a * d2.powf(b) + 1.0));
            ctx.spring(j, &current, &mut spring);
            for d in 0..dim {
                current[d] += (clip(coeff * (current[d] - other[d])) + spring[d]) * alpha;
            }
        }
        sched.next_negative[e] += n_neg as f64 * sched.epochs_per_negative[e];
        for d in 0..dim {
            emb[[j, d]] = current[d];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedReducer {
    pub params: ReducerParams,
    pub training_points: Array2<f32>,
    pub embedding: Array2<f64>,
    pub distinct_rows: Vec<usize>,
    pub knn: KnnGraph,
    pub rhos: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// `(a, b)` of the low-dimensional membership curve.
    pub curve: (f64, f64),
    /// Largest k-th neighbour distance among training points; new points
    /// whose nearest training neighbour is farther are low-confidence.
    pub confidence_radius: f64,
}

fn check_points(points: ArrayView2<f32>) -> Result<(), ReduceError> {
    for (i, r) in points.rows().into_iter().enumerate() {
        if r.iter().any(|x| !x.is_finite()) {
            return Err(ReduceError::NonFinite(i));
        }
    }
    Ok(())
}

struct Layout {
    knn: KnnGraph,
    rhos: Vec<f64>,
    sigmas: Vec<f64>,
    edges: Vec<(usize, usize, f64)>,
}

fn build_graph(points: ArrayView2<f32>, k: usize, metric: Metric) -> Layout {
    let knn = exact_knn(points, k, metric);
    let (rhos, sigmas) = smooth_knn(&knn.distances, k);
    let edges = fuzzy_graph(&knn, &rhos, &sigmas);
    Layout {
        knn,
        rhos,
        sigmas,
        edges,
    }
}

/// Groups bitwise-identical rows. Returns the first row of each group in
/// order of appearance and, per row, the index of its group.
fn dedup_rows(points: ArrayView2<f32>) -> (Vec<usize>, Vec<usize>) {
    let mut seen: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut firsts = Vec::new();
    let mut group = Vec::with_capacity(points.nrows());
    for (i, r) in points.rows().into_iter().enumerate() {
        let key: Vec<u32> = r.iter().map(|x| x.to_bits()).collect();
        let g = *seen.entry(key).or_insert_with(|| {
            firsts.push(i);
            firsts.len() - 1
        });
        group.push(g);
    }
    (firsts, group)
}

/// Fits a layout. Identical input rows are laid out once and share a
/// coordinate; the neighbour graph, `rhos` and `sigmas` of the result refer
/// to the distinct rows, listed in `distinct_rows`.
pub fn fit(points: ArrayView2<f32>, params: &ReducerParams) -> Result<FittedReducer, ReduceError> {
    params.validate()?;
    check_points(points)?;
    let points = points.as_standard_layout().to_owned();
    let (firsts, group) = dedup_rows(points.view());
    if firsts.len() < params.n_neighbors + 1 {
        return Err(ReduceError::TooFewPoints {
            needed: params.n_neighbors + 1,
            got: firsts.len(),
        });
    }
    let distinct = points.select(Axis(0), &firsts);
    let graph = build_graph(distinct.view(), params.n_neighbors, params.metric);
    let curve = fit_curve(params.min_dist, params.spread);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut layout = initial_layout(distinct.view(), params, &mut rng);
    let n_epochs = params.epochs_for(firsts.len());
    let mut sched = Schedule::new(&graph.edges, n_epochs, params.negative_sample_rate, true);
    let ctx = LayoutCtx {
        a: curve.0,
        b: curve.1,
        dim: params.out_dim,
        springs: None,
    };
    for epoch in 0..n_epochs {
        let alpha = params.learning_rate * (1.0 - epoch as f64 / n_epochs as f64);
        layout_epoch(
            &mut layout,
            None,
            &mut sched,
            &ctx,
            epoch,
            alpha,
            true,
            Negatives::Stream(&mut rng),
        );
    }
    let embedding = layout.select(Axis(0), &group);
    let confidence_radius = graph
        .knn
        .distances
        .iter()
        .filter_map(|d| d.last().copied())
        .fold(0.0, f64::max);
    Ok(FittedReducer {
        params: params.clone(),
        training_points: points,
        embedding,
        distinct_rows: firsts,
        knn: graph.knn,
        rhos: graph.rhos,
        sigmas: graph.sigmas,
        curve,
        confidence_radius,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transformed {
    pub coords: Array2<f64>,
    /// Similarity to the nearest training point: `1 - d` for cosine,
    /// `1 / (1 + d)` for Euclidean distance.
    pub max_similarity: Vec<f64>,
    pub low_confidence: Vec<bool>,
}

/// Distance below which a new point is treated as a copy of a training point.
const COINCIDENT: f64 = 1e-10;

impl FittedReducer {
    pub fn n_points(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.training_points.ncols()
    }

    /// Places new points into the fitted layout. Each point starts at the
    /// membership-weighted mean of its training neighbours' coordinates and
    /// is refined by SGD against the fixed training embedding. A point that
    /// coincides with a training point takes that point's coordinate.
    pub fn transform(&self, new_points: ArrayView2<f32>) -> Result<Transformed, ReduceError> {
        if new_points.ncols() != self.input_dim() {
            return Err(ReduceError::DimensionMismatch {
                expected: self.input_dim(),
                got: new_points.ncols(),
            });
        }
        check_points(new_points)?;
        let new_points = new_points.as_standard_layout().to_owned();
        let train = self.training_points.view();
        let norms = row_norms(train);
        let k = self.params.n_neighbors.min(self.n_points());
        let metric = self.params.metric;
        let (a, b) = self.curve;
        let dim = self.params.out_dim;
        let n_epochs = match (self.params.transform_epochs, self.params.n_epochs) {
            (Some(e), _) => e,
            (None, Some(e)) => (e / 3).max(1),
            (None, None) => {
                if self.n_points() <= 10_000 {
                    100
                } else {
                    30
                }
            }
        };
        let results: Vec<(Vec<f64>, f64, f64)> = (0..new_points.nrows())
            .into_par_iter()
            .map(|i| {
                let q = new_points.row(i);
                let q = q.as_slice().unwrap();
                let (idx, dist) = nearest_of(q, norm_f64(q), train, &norms, k, metric, None);
                let nearest = dist[0];
                if nearest <= COINCIDENT {
                    return (self.embedding.row(idx[0]).to_vec(), nearest, nearest);
                }
                let rho = nearest;
                let sigma = solve_sigma(&dist, rho, (k as f64).log2());
                let weights: Vec<f64> = dist
                    .iter()
                    .map(|&d| {
                        let x = (d - rho).max(0.0);
                        if x == 0.0 {
                            1.0
                        } else {
                            (-x / sigma).exp()
                        }
                    })
                    .collect();
                let total: f64 = weights.iter().sum();
                let mut y = vec![0.0; dim];
                for (&j, &w) in idx.iter().zip(&weights) {
                    for d in 0..dim {
                        y[d] += w / total * self.embedding[[j, d]];
                    }
                }
                let edges: Vec<(usize, usize, f64)> =
                    idx.iter().zip(&weights).map(|(&j, &w)| (0, j, w)).collect();
                let mut sched = Schedule::new(
                    &edges,
                    n_epochs.max(1),
                    self.params.negative_sample_rate,
                    false,
                );
                let mut local = Array2::from_shape_vec((1, dim), y).unwrap();
                let ctx = LayoutCtx {
                    a,
                    b,
                    dim,
                    springs: None,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(
                    self.params.seed ^ (i as u64 + 1).wrapping_mul(0x2545_F491_4F6C_DD1D),
                );
                for epoch in 0..n_epochs {
                    let alpha =
                        self.params.learning_rate / 4.0 * (1.0 - epoch as f64 / n_epochs as f64);
                    layout_epoch(
                        &mut local,
                        Some(&self.embedding),
                        &mut sched,
                        &ctx,
                        epoch,
                        alpha,
                        false,
                        Negatives::Stream(&mut rng),
                    );
                }
                (local.row(0).to_vec(), nearest, nearest)
            })
            .collect();
        let mut coords = Array2::zeros((results.len(), dim));
        let mut max_similarity = Vec::with_capacity(results.len());
        let mut low_confidence = Vec::with_capacity(results.len());
        for (i, (y, nearest, _)) in results.into_iter().enumerate() {
            coords.row_mut(i).assign(&ndarray::ArrayView1::from(&y));
            max_similarity.push(match metric {
                Metric::Cosine => 1.0 - nearest,
                Metric::Euclidean => 1.0 / (1.0 + nearest),
            });
            low_confidence.push(nearest > self.confidence_radius);
        }
        Ok(Transformed {
            coords,
            max_similarity,
            low_confidence,
        })
    }

    /// Binary artifact: parameters, training points and embedding.
    pub fn save(&self, path: &Path) -> Result<(), ReduceError> {
        let mut w = BufWriter::new(File::create(path)?);
        bincode::serialize_into(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ReduceError> {
        Ok(bincode::deserialize_from(BufReader::new(File::open(
            path,
        )?))?)
    }
}

/// Layouts from [`fit_aligned`], one per point set.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedEmbedding {
    pub embeddings: Vec<Array2<f64>>,
    pub curve: (f64, f64),
}

/// Joint layout of a sequence of point sets. `relations[t]` maps rows of set
/// `t` to rows of set `t + 1` that represent the same item. Every set is
/// optimised with the usual layout objective plus `alignment_weight` times
/// the squared distance from each related point to its partners' positions
/// at the start of the epoch, scaled per relation by how much of the
/// point's neighbourhood survives into the next set. The spring acts on every update of
/// a point, attractive and repulsive alike.
///
/// Sets too small for `n_neighbors` use `n - 1` neighbours; sets of fewer
/// than two points get no layout edges.
pub fn fit_aligned(
    point_sets: &[ArrayView2<f32>],
    relations: &[Vec<(usize, usize)>],
    params: &ReducerParams,
) -> Result<AlignedEmbedding, ReduceError> {
    params.validate()?;
    let dims: Vec<usize> = point_sets
        .iter()
        .filter(|p| p.nrows() > 0)
        .map(|p| p.ncols())
        .collect();
    if let Some(&d0) = dims.first() {
        if let Some(&bad) = dims.iter().find(|&&d| d != d0) {
            return Err(ReduceError::DimensionMismatch {
                expected: d0,
                got: bad,
            });
        }
    }
    for p in point_sets {
        check_points(*p)?;
    }
    let m = point_sets.len();
    for (t, rel) in relations.iter().enumerate() {
        if t + 1 >= m {
            return Err(ReduceError::BadRelation(t));
        }
        if rel
            .iter()
            .any(|&(i, j)| i >= point_sets[t].nrows() || j >= point_sets[t + 1].nrows())
        {
            return Err(ReduceError::BadRelation(t));
        }
    }

    let owned: Vec<Array2<f32>> = point_sets
        .iter()
        .map(|p| p.as_standard_layout().to_owned())
        .collect();
    let graphs: Vec<Option<Layout>> = owned
        .iter()
        .map(|p| {
            let n = p.nrows();
            (n >= 2).then(|| build_graph(p.view(), params.n_neighbors.min(n - 1), params.metric))
        })
        .collect();
    let mut partners: Vec<Vec<Vec<(usize, usize, f64)>>> = point_sets
        .iter()
        .map(|p| vec![Vec::new(); p.nrows()])
        .collect();
    for (t, rel) in relations.iter().enumerate() {
        let forward: HashMap<usize, usize> = rel.iter().copied().collect();
        for &(i, j) in rel {
            let w = match (&graphs[t], &graphs[t + 1]) {
                (Some(a), Some(b)) => {
                    neighbourhood_overlap(&a.knn.indices[i], &b.knn.indices[j], &forward)
                }
                _ => 1.0,
            };
            partners[t][i].push((t + 1, j, w));
            partners[t + 1][j].push((t, i, w));
        }
    }

    // Shared initial basis so identical vectors start at identical positions.
    let d = dims.first().copied().unwrap_or(0);
    let total: usize = owned.iter().map(|p| p.nrows()).sum();
    let mut stacked = Array2::<f32>::zeros((total, d));
    let mut r = 0;
    for p in &owned {
        for row in p.rows() {
            stacked.row_mut(r).assign(&row);
            r += 1;
        }
    }
    let mut embeddings: Vec<Array2<f64>> = match params.init {
        Init::Pca => {
            let (mean, basis) = pca_basis(stacked.view(), params.out_dim, params.metric);
            owned
                .iter()
                .map(|p| project(p.view(), params.metric, &mean, &basis))
                .collect()
        }
        Init::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            let all = Array2::from_shape_fn((total, params.out_dim), |_| {
                rng.random::<f64>() * 20.0 - 10.0
            });
            let mut out = Vec::new();
            let mut r = 0;
            for p in &owned {
                out.push(all.slice(ndarray::s![r..r + p.nrows(), ..]).to_owned());
                r += p.nrows();
            }
            out
        }
    };
    {
        let mut refs: Vec<&mut Array2<f64>> = embeddings.iter_mut().collect();
        rescale(&mut refs);
    }

    let curve = fit_curve(params.min_dist, params.spread);
    let n_epochs = params.epochs_for(owned.iter().map(|p| p.nrows()).max().unwrap_or(0));
    let mut scheds: Vec<Option<Schedule>> = graphs
        .iter()
        .map(|g| {
            g.as_ref()
                .map(|g| Schedule::new(&g.edges, n_epochs, params.negative_sample_rate, true))
        })
        .collect();
    for epoch in 0..n_epochs {
        let alpha = params.learning_rate * (1.0 - epoch as f64 / n_epochs as f64);
        let snapshot = embeddings.clone();
        for t in 0..m {
            let Some(sched) = scheds[t].as_mut() else {
                continue;
            };
            let ctx = LayoutCtx {
                a: curve.0,
                b: curve.1,
                dim: params.out_dim,
                springs: Some((&partners[t], &snapshot, params.alignment_weight)),
            };
            layout_epoch(
                &mut embeddings[t],
                None,
                sched,
                &ctx,
                epoch,
                alpha,
                true,
                Negatives::Keyed(params.seed),
            );
        }
    }
    Ok(AlignedEmbedding { embeddings, curve })
}

/// Jaccard overlap of a point's neighbours in one set, mapped through the
/// relation, with its partner's neighbours in the next set.
fn neighbourhood_overlap(
    before: &[usize],
    after: &[usize],
    forward: &HashMap<usize, usize>,
) -> f64 {
    let mapped: BTreeSet<usize> = before
        .iter()
        .filter_map(|i| forward.get(i).copied())
        .collect();
    let after: BTreeSet<usize> = after.iter().copied().collect();
    let union = mapped.union(&after).count();
    if union == 0 {
        return 1.0;
    }
    mapped.intersection(&after).count() as f64 / union as f64
}

/// Largest pairwise Euclidean distance over all rows of all layouts.
pub fn layout_diameter(layouts: &[&Array2<f64>]) -> f64 {
    let rows: Vec<Vec<f64>> = layouts
        .iter()
        .flat_map(|l| l.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>())
        .collect();
    let mut best = 0.0f64;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            best = best.max(squared_euclidean(&rows[i], &rows[j]));
        }
    }
    best.sqrt()
}

/// Trustworthiness of a layout: penalises low-dimensional neighbours that
/// are not high-dimensional neighbours, weighted by their high-dimensional
/// rank. 1 means every low-dimensional `k`-neighbourhood is faithful.
pub fn trustworthiness(high: ArrayView2<f32>, low: &Array2<f64>, k: usize, metric: Metric) -> f64 {
    let n = high.nrows();
    assert_eq!(n, low.nrows());
    assert!(k < n / 2, "trustworthiness needs k < n / 2");
    let high = high.as_standard_layout();
    let norms = row_norms(high.view());
    let low_rows: Vec<Vec<f64>> = low.rows().into_iter().map(|r| r.to_vec()).collect();
    let penalty: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let hi = high.row(i);
            let hi = hi.as_slice().unwrap();
            let mut order: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    (
                        distance(
                            metric,
                            hi,
                            norms[i],
                            high.row(j).as_slice().unwrap(),
                            norms[j],
                        ),
                        j,
                    )
                })
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut rank = vec![0usize; n];
            for (r, &(_, j)) in order.iter().enumerate() {
                rank[j] = r + 1;
            }
            let mut low_order: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_euclidean(&low_rows[i], &low_rows[j]), j))
                .collect();
            low_order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            low_order[..k]
                .iter()
                .map(|&(_, j)| rank[j].saturating_sub(k) as f64)
                .sum::<f64>()
        })
        .sum();
    let (n, k) = (n as f64, k as f64);
    1.0 - 2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0)) * penalty
}

/// Writes `id,x,y[,...]` rows.
pub fn write_coordinates_csv<W: Write>(
    mut w: W,
    ids: &[String],
    coords: &Array2<f64>,
) -> std::io::Result<()> {
    let dims: Vec<String> = ["x", "y", "z"]
        .iter()
        .map(|s| s.to_string())
        .chain((3..coords.ncols()).map(|i| format!("d{i}")))
        .take(coords.ncols())
        .collect();
    writeln!(w, "id,{}", dims.join(","))?;
    for (id, row) in ids.iter().zip(coords.axis_iter(Axis(0))) {
        let vals: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{},{}", csv_field(id), vals.join(","))?;
    }
    Ok(())
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn save_coordinates_csv(
    path: &Path,
    ids: &[String],
    coords: &Array2<f64>,
) -> Result<(), ReduceError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_coordinates_csv(&mut w, ids, coords)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Array2<f32> {
        Array2::from_shape_fn((n, 3), |(i, j)| {
            ((i * (j + 3)) % 17) as f32 + j as f32 * 0.1
        })
    }

    #[test]
    fn curve_matches_reference_values() {
        // Values produced by the reference curve fit for the default settings.
        let (a, b) = fit_curve(0.1, 1.0);
        assert!((a - 1.577).abs() < 0.01, "a = {a}");
        assert!((b - 0.895).abs() < 0.01, "b = {b}");
    }

    #[test]
    fn sigma_calibration_hits_target() {
        let pts = grid(40);
        let knn = exact_knn(pts.view(), 10, Metric::Euclidean);
        let (rhos, sigmas) = smooth_knn(&knn.distances, 10);
        for i in 0..40 {
            let s = membership_sum(&knn.distances[i], rhos[i], sigmas[i]);
            assert!((s - 10f64.log2()).abs() < 1e-3, "point {i}: {s}");
        }
    }

    #[test]
    fn fuzzy_union_is_symmetric_t_conorm() {
        let knn = KnnGraph {
            indices: vec![vec![1], vec![0], vec![0]],
            distances: vec![vec![1.0], vec![1.0], vec![2.0]],
        };
        let rhos = vec![0.5, 1.0, 1.0];
        let sigmas = vec![1.0, 1.0, 1.0];
        let g = fuzzy_graph(&knn, &rhos, &sigmas);
        let w01 = (-0.5f64).exp();
        let expected = w01 + 1.0 - w01;
        assert_eq!(g.len(), 2);
        assert!((g[0].2 - expected).abs() < 1e-12);
        assert_eq!((g[1].0, g[1].1), (0, 2));
        assert!((g[1].2 - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let pts = grid(10);
        let p = ReducerParams {
            n_neighbors: 15,
            ..Default::default()
        };
        assert!(matches!(
            fit(pts.view(), &p),
            Err(ReduceError::TooFewPoints { .. })
        ));
        let mut bad = grid(20);
        bad[[3, 1]] = f32::NAN;
        let p = ReducerParams {
            n_neighbors: 5,
            ..Default::default()
        };
        assert!(matches!(
            fit(bad.view(), &p),
            Err(ReduceError::NonFinite(3))
        ));
        let r = fit(
            grid(20).view(),
            &ReducerParams {
                n_epochs: Some(10),
                ..p
            },
        )
        .unwrap();
        let wrong = Array2::<f32>::zeros((2, 4));
        assert!(matches!(
            r.transform(wrong.view()),
            Err(ReduceError::DimensionMismatch {
                expected: 3,
                got: 4
            })
        ));
    }

    #[test]
    fn coordinates_csv() {
        let mut buf = Vec::new();
        let coords = ndarray::array![[1.0, 2.0], [3.5, -1.0]];
        write_coordinates_csv(&mut buf, &["a".into(), "b,c".into()], &coords).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "id,x,y\na,1,2\n\"b,c\",3.5,-1\n"
        );
    }
}
