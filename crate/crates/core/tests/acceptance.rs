//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per
//! criterion and exits non-zero if any fails.
//!
//! `cargo test -p ttec-core --test acceptance` runs all nine;
//! `cargo test -p ttec-core --test acceptance -- 3 5` runs a subset.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ttec_core::cluster::{
    adjusted_rand_index, hdbscan, merge_to_target, mutual_reachability_mst, ClusterParams, NOISE,
};
use ttec_core::config::LoadedConfig;
use ttec_core::corpus::{write_jsonl, RawDocument, TimeSlicedCorpus};
use ttec_core::embed::{
    train_compass, train_slices, Architecture, EmbeddingModel, ModelKind, TrainingParams,
    WordSearch,
};
use ttec_core::eval::{npmi, run_protocol, topic_diversity, ProtocolParams, ReferenceCorpus};
use ttec_core::flow::{
    build_flow, build_sankey, match_by_centroid, match_by_vocabulary, ClusterFlowGraph, FlowParams,
    MatchMethod, SliceClusters,
};
use ttec_core::pipeline::{Pipeline, RunOptions, MANIFEST_FILE};
use ttec_core::reduce::{
    exact_knn, fit, fit_aligned, layout_diameter, membership_sum, smooth_knn, trustworthiness,
    Metric, ReducerParams,
};
use ttec_core::synthetic::{
    desk_documents, duplicate_slice_documents, gaussian_blobs, into_corpus,
    planted_drift_documents, template_corpus, template_documents, template_of, template_of_term,
    DeskSpec, TemplateSpec,
};
use ttec_core::topicspace::{
    build_global_topics, descriptors_centroid, descriptors_voting, DescriptorMethod,
    DescriptorParams, TopicParams,
};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn s(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|x| x.to_string()).collect()
}

fn train(corpus: &TimeSlicedCorpus, p: &TrainingParams) -> (EmbeddingModel, Vec<EmbeddingModel>) {
    let compass = train_compass(corpus, p).unwrap();
    let slices = train_slices(&compass, corpus, p).unwrap();
    (compass, slices)
}

fn params(dim: usize, epochs: usize, arch: Architecture) -> TrainingParams {
    TrainingParams {
        dim,
        epochs,
        seed: 7,
        architecture: arch,
        ..Default::default()
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    if took < limit {
        Ok(took)
    } else {
        Err(format!("took {took:.1?}, limit {limit:?}"))
    }
}

// 1 ------------------------------------------------------------------------

fn freeze_invariant() -> Check {
    let start = Instant::now();
    let template = template_corpus(&TemplateSpec::default());
    let fixtures: Vec<(&str, TimeSlicedCorpus)> = vec![
        ("template", template),
        (
            "duplicate",
            into_corpus(&duplicate_slice_documents(250, 3, 5), 1),
        ),
        ("drift", into_corpus(&planted_drift_documents(50, 9), 1)),
    ];
    let mut rows = 0usize;
    for (name, corpus) in &fixtures {
        for arch in [Architecture::PvDbow, Architecture::PvDm, Architecture::Cbow] {
            let (compass, slices) = train(corpus, &params(32, 3, arch));
            for slice in &slices {
                for term in slice.terms() {
                    let a = slice.target_row(term).unwrap();
                    let b = compass.target_row(term).unwrap();
                    ensure!(
                        a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
                        "{name} {arch:?} {:?}: target row of {term:?} differs",
                        slice.kind
                    );
                    rows += 1;
                }
            }
        }
    }
    let took = within(Duration::from_secs(60), start)?;
    Ok(format!(
        "{rows} target rows bit-identical over 3 fixtures x 3 architectures in {took:.1?}"
    ))
}

// 2 ------------------------------------------------------------------------

fn alignment() -> Check {
    let start = Instant::now();
    let dup = into_corpus(&duplicate_slice_documents(250, 3, 5), 1);
    let (_, slices) = train(&dup, &params(64, 5, Architecture::PvDbow));
    let sims: Vec<f64> = slices[0]
        .terms()
        .iter()
        .filter_map(|t| Some(cosine(slices[0].word_vector(t)?, slices[1].word_vector(t)?)))
        .collect();
    let mean = sims.iter().sum::<f64>() / sims.len() as f64;
    ensure!(
        mean >= 0.95,
        "duplicate slices: mean self-similarity {mean:.4} < 0.95"
    );

    let drift = into_corpus(&planted_drift_documents(50, 9), 1);
    let (_, slices) = train(&drift, &params(64, 5, Architecture::PvDbow));
    let mut change: Vec<(f64, &String)> = slices[0]
        .terms()
        .iter()
        .filter_map(|t| {
            Some((
                1.0 - cosine(slices[0].word_vector(t)?, slices[1].word_vector(t)?),
                t,
            ))
        })
        .collect();
    change.sort_by(|a, b| b.0.total_cmp(&a.0));
    ensure!(
        change[0].1 == "purex",
        "planted drift: top mover is {:?}, not purex",
        change[0].1
    );
    let took = within(Duration::from_secs(300), start)?;
    Ok(format!(
        "duplicate self-similarity {mean:.4} over {} terms; purex tops {} terms (1-cos {:.3}, runner-up {:.3}) in {took:.1?}",
        sims.len(),
        change.len(),
        change[0].0,
        change[1].0
    ))
}

// 3 ------------------------------------------------------------------------

const HAND: [&[&str]; 6] = [
    &["a", "b", "c"],
    &["a", "b"],
    &["a", "c", "d"],
    &["b", "d"],
    &["e", "f", "x", "y"],
    &["a", "b", "e"],
];

fn brute_npmi(docs: &[HashSet<&str>], a: &str, b: &str) -> f64 {
    let n = docs.len() as f64;
    let p = |f: &dyn Fn(&HashSet<&str>) -> bool| docs.iter().filter(|d| f(d)).count() as f64 / n;
    let (pa, pb, pab) = (
        p(&|d| d.contains(a)),
        p(&|d| d.contains(b)),
        p(&|d| d.contains(a) && d.contains(b)),
    );
    if pab == 0.0 {
        -1.0
    } else if pab == 1.0 {
        1.0
    } else {
        (pab / (pa * pb)).log2() / -pab.log2()
    }
}

fn brute_diversity(topics: &[Vec<String>]) -> f64 {
    let top: Vec<&[String]> = topics.iter().map(|t| &t[..t.len().min(10)]).collect();
    let unique: BTreeSet<&String> = top.iter().flat_map(|t| t.iter()).collect();
    unique.len() as f64 / top.iter().map(|t| t.len()).sum::<usize>() as f64
}

fn metric_oracles() -> Check {
    let sets: Vec<HashSet<&str>> = HAND.iter().map(|d| d.iter().copied().collect()).collect();
    let r = ReferenceCorpus::from_documents(HAND.iter().map(|d| d.iter()));
    let topics = vec![
        s(&["a", "b", "c", "d"]),
        s(&["e", "f", "x"]),
        s(&["c", "e", "y"]),
        s(&["x", "y"]),
        s(&["c", "e"]),
    ];
    let c = npmi(&topics, &r).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (topic, got) in topics.iter().zip(&c.per_topic) {
        let mut pairs = Vec::new();
        for i in 0..topic.len() {
            for j in i + 1..topic.len() {
                pairs.push(brute_npmi(&sets, &topic[i], &topic[j]));
            }
        }
        let want = pairs.iter().sum::<f64>() / pairs.len() as f64;
        worst = worst.max((got - want).abs());
    }
    ensure!(worst < 1e-9, "NPMI differs from counting by {worst:e}");
    ensure!(
        c.per_topic[3] == 1.0,
        "x/y always together: NPMI {}",
        c.per_topic[3]
    );
    ensure!(
        c.per_topic[4] == -1.0,
        "c/e never together: NPMI {}",
        c.per_topic[4]
    );

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cases: Vec<Vec<Vec<String>>> = (0..200)
        .map(|_| {
            let k = rng.random_range(1..8);
            (0..k)
                .map(|_| {
                    (0..rng.random_range(1..14))
                        .map(|_| format!("w{}", rng.random_range(0..30)))
                        .collect()
                })
                .collect()
        })
        .collect();
    let disjoint: Vec<Vec<String>> = (0..10)
        .map(|t| (0..10).map(|i| format!("t{t}w{i}")).collect())
        .collect();
    cases.push(vec![disjoint[0].clone(); 10]);
    cases.push(disjoint);
    for t in &cases {
        let got = topic_diversity(t).map_err(|e| e.to_string())?;
        ensure!(
            got == brute_diversity(t),
            "TD {got} vs oracle {} on {t:?}",
            brute_diversity(t)
        );
    }
    let same = topic_diversity(&cases[cases.len() - 2]).unwrap();
    ensure!(same == 0.1, "ten identical topics: TD {same}");
    Ok(format!(
        "NPMI max error {worst:.1e} incl. +1/-1 cases; TD equals set union on {} cases incl. 0.1",
        cases.len()
    ))
}

// 4 ------------------------------------------------------------------------

fn kruskal_weight(points: &Array2<f64>, k: usize) -> f64 {
    let n = points.nrows();
    let dist = |i: usize, j: usize| -> f64 {
        (0..points.ncols())
            .map(|d| (points[[i, d]] - points[[j, d]]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).map(|j| dist(i, j)).collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            edges.push((dist(i, j).max(core[i]).max(core[j]), i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    let mut total = 0.0;
    for (w, i, j) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
            total += w;
        }
    }
    total
}

fn clustering() -> Check {
    let centers = vec![vec![0.0, 0.0], vec![12.0, 0.0], vec![6.0, 10.0]];
    let mut aris = Vec::new();
    for seed in [21, 22, 23] {
        let (p, truth) = gaussian_blobs(&centers, 60, 1.0, 10, seed);
        let p = p.mapv(|x| x as f64);
        let c = hdbscan(p.view(), &ClusterParams::new(15)).map_err(|e| e.to_string())?;
        let truth: Vec<i64> = truth
            .iter()
            .map(|&l| if l == usize::MAX { -1 } else { l as i64 })
            .collect();
        let got: Vec<i64> = c.labels.iter().map(|&l| l as i64).collect();
        let ari = adjusted_rand_index(&truth, &got);
        ensure!(ari >= 0.9, "seed {seed}: ARI {ari:.3}");
        aris.push(ari);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mst_cases = 0;
    for n in [2usize, 5, 20, 60, 120, 200] {
        for k in [1usize, 3, 5] {
            if k > n {
                continue;
            }
            let pts = Array2::from_shape_fn((n, 3), |_| rng.random::<f64>() * 10.0);
            let mst = mutual_reachability_mst(pts.view(), k);
            ensure!(mst.len() == n - 1, "n {n}: {} MST edges", mst.len());
            let prim: f64 = mst.iter().map(|e| e.2).sum();
            let oracle = kruskal_weight(&pts, k);
            ensure!(
                (prim - oracle).abs() <= 1e-9 * oracle.max(1.0),
                "n {n} k {k}: MST {prim} vs {oracle}"
            );
            mst_cases += 1;
        }
    }

    let six: Vec<Vec<f64>> = (0..6)
        .map(|i| vec![(i % 3) as f64 * 15.0, (i / 3) as f64 * 15.0])
        .collect();
    let (p, _) = gaussian_blobs(&six, 40, 1.0, 5, 4);
    let p = p.mapv(|x| x as f64);
    let raw = hdbscan(p.view(), &ClusterParams::new(10)).map_err(|e| e.to_string())?;
    ensure!(
        raw.n_clusters >= 4,
        "six blobs gave {} raw clusters",
        raw.n_clusters
    );
    for k in 1..=raw.n_clusters {
        let m = merge_to_target(&raw, k).map_err(|e| e.to_string())?;
        ensure!(m.n_clusters == k, "target {k}: got {}", m.n_clusters);
        let mut covered = BTreeSet::new();
        for (topic, lineage) in m.lineage.iter().enumerate() {
            let replay: BTreeSet<usize> = (0..p.nrows())
                .filter(|&i| raw.labels[i] >= 0 && lineage.contains(&(raw.labels[i] as usize)))
                .collect();
            let members: BTreeSet<usize> = m.members(topic).into_iter().collect();
            ensure!(
                members == replay,
                "target {k} topic {topic}: members differ from lineage replay"
            );
            for l in lineage {
                ensure!(covered.insert(*l), "raw cluster {l} in two lineages");
            }
        }
        ensure!(
            covered.len() == raw.n_clusters,
            "target {k}: lineage covers {} raw clusters",
            covered.len()
        );
        ensure!(
            (0..p.nrows()).all(|i| (m.labels[i] == NOISE) == (raw.labels[i] == NOISE)),
            "target {k}: noise changed"
        );
    }
    Ok(format!(
        "ARI {:.3}/{:.3}/{:.3}; MST = Kruskal on {mst_cases} cases up to n=200; merge to k=1..{} replays lineage",
        aris[0], aris[1], aris[2], raw.n_clusters
    ))
}

// 5 ------------------------------------------------------------------------

fn brute_force_knn(points: &Array2<f32>, k: usize) -> Vec<Vec<usize>> {
    let n = points.nrows();
    (0..n)
        .map(|i| {
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = points
                        .row(i)
                        .iter()
                        .zip(points.row(j).iter())
                        .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                        .sum();
                    (d, j)
                })
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            all.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

fn reduction() -> Check {
    let centers = vec![
        vec![0.0, 0.0, 0.0, 0.0, 0.0],
        vec![10.0, 10.0, 0.0, 0.0, 0.0],
        vec![0.0, 10.0, 10.0, 10.0, 0.0],
    ];
    let (pts, _) = gaussian_blobs(&centers, 60, 1.0, 0, 3);
    for k in [1, 7, 15] {
        let knn = exact_knn(pts.view(), k, Metric::Euclidean);
        ensure!(
            knn.indices == brute_force_knn(&pts, k),
            "kNN k={k} differs from brute force"
        );
    }

    let knn = exact_knn(pts.view(), 15, Metric::Euclidean);
    let (rho, sigma) = smooth_knn(&knn.distances, 15);
    let target = 15f64.log2();
    let residual = (0..pts.nrows())
        .map(|i| (membership_sum(&knn.distances[i], rho[i], sigma[i]) - target).abs())
        .fold(0.0, f64::max);
    ensure!(residual < 1e-3, "sigma residual {residual:e}");

    let p = ReducerParams {
        n_neighbors: 10,
        metric: Metric::Euclidean,
        n_epochs: Some(200),
        seed: 5,
        ..Default::default()
    };
    let r = fit(pts.view(), &p).map_err(|e| e.to_string())?;
    let t = trustworthiness(pts.view(), &r.embedding, 10, Metric::Euclidean);
    ensure!(t >= 0.85, "trustworthiness {t:.3}");
    let back = r.transform(pts.view()).map_err(|e| e.to_string())?;
    let drift = (&back.coords - &r.embedding)
        .mapv(f64::abs)
        .fold(0.0, |a: f64, &b| a.max(b));
    ensure!(drift < 1e-9, "transform of training points moved {drift:e}");

    let mut worst_ratio = 0.0f64;
    for seed in [13, 14, 15, 16] {
        let c16: Vec<Vec<f64>> = (0..3)
            .map(|b| {
                (0..16)
                    .map(|d| if d % 3 == b { 4.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let (a, _) = gaussian_blobs(&c16, 20, 1.0, 0, seed);
        let mut b = a.clone();
        let far = a.row(a.nrows() - 1).mapv(|x| x + 0.05);
        b.row_mut(0).assign(&far);
        let rel: Vec<(usize, usize)> = (0..a.nrows()).map(|i| (i, i)).collect();
        let out = fit_aligned(
            &[a.view(), b.view()],
            &[rel],
            &ReducerParams {
                out_dim: 5,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let diam = layout_diameter(&[&out.embeddings[0], &out.embeddings[1]]);
        let shift = |i: usize| -> f64 {
            (0..5)
                .map(|d| (out.embeddings[0][[i, d]] - out.embeddings[1][[i, d]]).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let worst = (1..a.nrows()).map(shift).fold(0.0, f64::max);
        ensure!(
            worst < 0.05 * diam,
            "seed {seed}: unchanged point moved {:.1}% of diameter",
            100.0 * worst / diam
        );
        worst_ratio = worst_ratio.max(worst / diam);
    }
    Ok(format!(
        "kNN = brute force; max sigma residual {residual:.1e}; trustworthiness@10 {t:.3}; \
         transform drift {drift:.1e}; unchanged points move <= {:.2}% of diameter",
        100.0 * worst_ratio
    ))
}

// 6 ------------------------------------------------------------------------

fn majority_template(members: &[String]) -> Option<usize> {
    let mut counts = [0usize; 8];
    for m in members {
        counts[template_of(m)?] += 1;
    }
    let (t, &c) = counts.iter().enumerate().max_by_key(|(_, c)| **c)?;
    (c * 2 > members.len()).then_some(t)
}

fn dumbbell_holds() -> Result<(), String> {
    let mut terms = Vec::new();
    let mut rows = Vec::new();
    let h = std::f32::consts::FRAC_1_SQRT_2;
    for i in 0..10 {
        let e = 0.01 * i as f32;
        for (prefix, row) in [("a", [1.0, 0.0, e]), ("b", [0.0, 1.0, e]), ("m", [h, h, e])] {
            terms.push(format!("{prefix}{i}"));
            rows.push(row);
        }
    }
    let n = terms.len();
    let words = Array2::from_shape_fn((n, 3), |(i, d)| rows[i][d]);
    let model = EmbeddingModel::from_parts(
        ModelKind::Compass,
        Architecture::Cbow,
        terms,
        vec![1; n],
        Vec::new(),
        words.clone(),
        None,
        words,
    )
    .map_err(|e| e.to_string())?;
    let docs: Vec<Vec<f32>> = (0..60)
        .map(|j| vec![1.0, 0.0, 0.001 * (j % 7) as f32])
        .chain((0..40).map(|j| vec![0.0, 1.0, 0.001 * (j % 5) as f32]))
        .collect();
    let members: Vec<&[f32]> = docs.iter().map(Vec::as_slice).collect();
    let search = WordSearch::new(&model);
    let voting = descriptors_voting(&members, &search, 10, 10);
    ensure!(
        voting.iter().all(|d| d.term.starts_with('a')),
        "voting picked {voting:?}"
    );
    let centroid = descriptors_centroid(&members, &search, 10);
    ensure!(
        centroid.iter().any(|d| !d.term.starts_with('a')),
        "centroid stayed in the dense lobe"
    );
    Ok(())
}

fn topic_pipeline() -> Check {
    let corpus = template_corpus(&TemplateSpec::default());
    let (compass, _) = train(&corpus, &params(48, 20, Architecture::PvDbow));
    let mut purities = Vec::new();
    for method in [DescriptorMethod::Voting, DescriptorMethod::Centroid] {
        let tp = TopicParams {
            reducer: ReducerParams {
                seed: 3,
                ..Default::default()
            },
            cluster: ClusterParams::new(10),
            target_k: 3,
            descriptors: DescriptorParams {
                method,
                ..Default::default()
            },
            ..Default::default()
        };
        let space = build_global_topics(&compass, &tp).map_err(|e| e.to_string())?;
        ensure!(
            space.n_topics() == 3,
            "{method:?}: {} topics",
            space.n_topics()
        );
        let mut seen = BTreeSet::new();
        for t in &space.topics {
            let tmpl = majority_template(&t.members)
                .ok_or(format!("{method:?} topic {} has no majority", t.id))?;
            ensure!(
                seen.insert(tmpl),
                "{method:?}: two topics share template {tmpl}"
            );
            let pure = t
                .descriptors
                .iter()
                .filter(|d| template_of_term(&d.term) == Some(tmpl))
                .count();
            let purity = pure as f64 / t.descriptors.len() as f64;
            ensure!(
                purity >= 0.8,
                "{method:?} topic {}: purity {purity:.2}",
                t.id
            );
            purities.push(purity);
        }
    }

    let search = WordSearch::new(&compass);
    let mut singles = 0;
    for id in compass.doc_ids().iter().step_by(11) {
        let v = compass.doc_vector(id).unwrap();
        let voting: Vec<String> = descriptors_voting(&[v], &search, 10, 10)
            .into_iter()
            .map(|d| d.term)
            .collect();
        let centroid: Vec<String> = descriptors_centroid(&[v], &search, 10)
            .into_iter()
            .map(|d| d.term)
            .collect();
        ensure!(
            voting == centroid,
            "single member {id}: {voting:?} vs {centroid:?}"
        );
        singles += 1;
    }
    dumbbell_holds()?;
    let min = purities.iter().copied().fold(1.0, f64::min);
    Ok(format!(
        "3 topics, min descriptor purity {min:.2} (voting and centroid); voting = centroid on {singles} single members; \
         dumbbell voting keeps to the dense lobe"
    ))
}

// 7 ------------------------------------------------------------------------

fn conservation(graph: &ClusterFlowGraph, present: &[BTreeSet<String>]) -> Result<usize, String> {
    for (t, terms) in present.iter().enumerate() {
        let mut held: Vec<&String> = graph
            .nodes
            .iter()
            .filter(|n| n.time == t)
            .flat_map(|n| &n.terms)
            .collect();
        held.sort();
        ensure!(
            held == terms.iter().collect::<Vec<_>>(),
            "slice {t}: terms not held exactly once"
        );
    }
    for t in 0..present.len().saturating_sub(1) {
        let shared: BTreeSet<&String> = present[t].intersection(&present[t + 1]).collect();
        let links: Vec<_> = graph
            .links
            .iter()
            .filter(|l| graph.node(&l.source).unwrap().time == t)
            .collect();
        ensure!(
            links.len() == shared.len(),
            "transition {t}: {} links, {} shared terms",
            links.len(),
            shared.len()
        );
        let linked: BTreeSet<&String> = links.iter().map(|l| &l.term).collect();
        ensure!(
            linked == shared,
            "transition {t}: linked terms differ from shared terms"
        );
    }
    Ok(graph.links.len())
}

fn slice_input(clusters: &[&[&str]], noise: &[&str]) -> SliceClusters {
    SliceClusters {
        label: String::new(),
        clusters: clusters.iter().map(|c| s(c)).collect(),
        noise: s(noise),
        topics: vec![None; clusters.len()],
    }
}

fn flow_graph() -> Check {
    let mut checked = Vec::new();
    for (name, docs) in [
        ("template", template_documents(&TemplateSpec::default())),
        ("drift", planted_drift_documents(50, 9)),
        ("duplicate", duplicate_slice_documents(250, 3, 5)),
    ] {
        let corpus = into_corpus(&docs, 1);
        let (compass, slices) = train(&corpus, &params(48, 10, Architecture::PvDbow));
        let terms: Vec<String> = compass.terms().to_vec();
        let labels: Vec<String> = corpus.slices.iter().map(|s| s.index.to_string()).collect();
        let topics = build_global_topics(
            &compass,
            &TopicParams {
                cluster: ClusterParams::new(10),
                target_k: 3,
                ..Default::default()
            },
        )
        .map_err(|e| format!("{name}: {e}"))?;
        for matching in [MatchMethod::Centroid, MatchMethod::Vocabulary] {
            let fp = FlowParams {
                matching,
                ..Default::default()
            };
            let flow = build_flow(&slices, &labels, &terms, &topics.topics, &fp)
                .map_err(|e| format!("{name}: {e}"))?;
            let present: Vec<BTreeSet<String>> = slices
                .iter()
                .map(|m| {
                    terms
                        .iter()
                        .filter(|t| m.term_row(t).is_some())
                        .cloned()
                        .collect()
                })
                .collect();
            let links = conservation(&flow.graph, &present)
                .map_err(|e| format!("{name} {matching:?}: {e}"))?;
            if matching == MatchMethod::Centroid {
                let limit = fp.max_match_fraction * flow.space.diameter;
                for (t, got) in flow.matches.iter().enumerate() {
                    let (a, b) = (
                        &flow.clusterings[t].centroids,
                        &flow.clusterings[t + 1].centroids,
                    );
                    for (i, ca) in a.iter().enumerate() {
                        let mut best = (None, f64::INFINITY);
                        for (j, cb) in b.iter().enumerate() {
                            let d = ca
                                .iter()
                                .zip(cb)
                                .map(|(x, y)| (x - y).powi(2))
                                .sum::<f64>()
                                .sqrt();
                            if d < best.1 {
                                best = (Some(j), d);
                            }
                        }
                        let want = best.0.filter(|_| best.1 <= limit);
                        ensure!(
                            got[i].target == want,
                            "{name}: cluster {t}/{i} matched {:?}, scan says {want:?}",
                            got[i].target
                        );
                    }
                }
            }
            checked.push(format!("{name}/{matching:?}={links}"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let pts = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..3).map(|_| rng.random_range(-10.0..10.0)).collect())
                .collect()
        };
        let (na, nb) = (rng.random_range(1..6), rng.random_range(1..6));
        let (a, b) = (pts(na, &mut rng), pts(nb, &mut rng));
        let limit = rng.random_range(0.0..20.0);
        for (i, m) in match_by_centroid(&a, &b, limit).iter().enumerate() {
            let d: Vec<f64> = b
                .iter()
                .map(|cb| {
                    a[i].iter()
                        .zip(cb)
                        .map(|(x, y)| (x - y).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            let j = (0..d.len()).min_by(|&x, &y| d[x].total_cmp(&d[y])).unwrap();
            ensure!(
                m.target == (d[j] <= limit).then_some(j),
                "random centroid case disagrees with scan"
            );
        }
    }

    let m = match_by_vocabulary(
        &[s(&["a", "b", "c"])],
        &[s(&["a", "b", "d"]), s(&["c", "e"])],
    );
    ensure!(
        m[0].target == Some(0) && (m[0].score - 2.0 / 3.0).abs() < 1e-12,
        "2/3 case: target {:?} score {}",
        m[0].target,
        m[0].score
    );

    let split_merge = vec![
        slice_input(
            &[&["a", "b", "c", "d", "e", "f"], &["x", "y"], &["z", "w"]],
            &[],
        ),
        slice_input(
            &[&["a", "b", "c"], &["d", "e", "f"], &["x", "y", "z", "w"]],
            &[],
        ),
    ];
    let m = match_by_vocabulary(&split_merge[0].clusters, &split_merge[1].clusters);
    let g = build_sankey(
        &split_merge,
        &[m],
        MatchMethod::Vocabulary,
        &BTreeMap::new(),
    );
    let fan_out: BTreeSet<&String> = g
        .links
        .iter()
        .filter(|l| l.source == "Time_0_0")
        .map(|l| &l.target)
        .collect();
    let fan_in: BTreeSet<&String> = g
        .links
        .iter()
        .filter(|l| l.target == "Time_1_2")
        .map(|l| &l.source)
        .collect();
    ensure!(
        fan_out.len() == 2,
        "split fans out to {} nodes",
        fan_out.len()
    );
    ensure!(
        fan_in.len() == 2,
        "merge fans in from {} nodes",
        fan_in.len()
    );
    let present: Vec<BTreeSet<String>> = split_merge
        .iter()
        .map(|s| s.clusters.concat().into_iter().collect())
        .collect();
    conservation(&g, &present)?;
    Ok(format!(
        "conservation on {}; centroid matcher = scan; 2/3 overlap case; split fans out to 2, merge fans in from 2",
        checked.join(", ")
    ))
}

// 8 ------------------------------------------------------------------------

fn protocol_shape() -> Check {
    let start = Instant::now();
    let docs = desk_documents(&DeskSpec::default());
    let corpus = into_corpus(&docs, 2);
    let p = TrainingParams {
        seed: 1,
        ..Default::default()
    };
    let (compass, slices) = train(&corpus, &p);
    let base = build_global_topics(&compass, &TopicParams::default()).map_err(|e| e.to_string())?;
    let report = run_protocol(
        &base,
        &compass,
        &slices,
        &corpus,
        &ProtocolParams::default(),
    )
    .map_err(|e| e.to_string())?;
    let took = within(Duration::from_secs(30 * 60), start)?;
    ensure!(report.td >= 0.8, "TD {:.3} < 0.8", report.td);
    ensure!(
        (-0.5..=0.2).contains(&report.tc),
        "TC {:.3} outside [-0.5, 0.2]",
        report.tc
    );
    Ok(format!(
        "{} paragraphs, {} slices, k in {:?}: TC {:.3}, TD {:.3}, {} cells excluded, {took:.1?}",
        corpus.num_documents(),
        corpus.slices.len(),
        report.topic_counts,
        report.tc,
        report.td,
        report.excluded.len()
    ))
}

// 9 ------------------------------------------------------------------------

const CONFIG: &str = r#"
seed = 21
output = "run"

[corpus]
input = "docs.jsonl"
min_count = 1

[training]
dim = 32
epochs = 10

[topics]
target_k = 3
[topics.cluster]
min_cluster_size = 10

[flow]
keyword_count = 30

[eval]
topic_counts = [2, 3]
"#;

fn run_in(dir: &Path, docs: &[RawDocument]) -> Result<Vec<u8>, String> {
    write_jsonl(
        docs,
        File::create(dir.join("docs.jsonl")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let config = dir.join("ttec.toml");
    fs::write(&config, CONFIG).map_err(|e| e.to_string())?;
    let loaded = LoadedConfig::load(&config).map_err(|e| e.to_string())?;
    let summary = Pipeline::new(loaded)
        .and_then(|mut p| p.run(&RunOptions::default()))
        .map_err(|e| e.to_string())?;
    fs::read(summary.dir.join(MANIFEST_FILE)).map_err(|e| e.to_string())
}

fn determinism() -> Check {
    let docs = template_documents(&TemplateSpec {
        slices: 3,
        ..Default::default()
    });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = pool.install(|| run_in(a.path(), &docs))?;
    let mb = pool.install(|| run_in(b.path(), &docs))?;
    ensure!(ma == mb, "manifests differ between reruns");
    let parsed: serde_json::Value = serde_json::from_slice(&ma).map_err(|e| e.to_string())?;
    let outputs: usize = parsed["stages"]
        .as_object()
        .map(|st| {
            st.values()
                .map(|r| r["outputs"].as_array().map_or(0, Vec::len))
                .sum()
        })
        .unwrap_or(0);
    Ok(format!(
        "two single-worker runs give byte-identical manifests ({} bytes, {outputs} hashed outputs)",
        ma.len()
    ))
}

// --------------------------------------------------------------------------

const CRITERIA: [(&str, fn() -> Check); 9] = [
    ("freeze invariant", freeze_invariant),
    ("cross-slice alignment", alignment),
    ("metric oracles", metric_oracles),
    ("clustering", clustering),
    ("reduction", reduction),
    ("topic pipeline", topic_pipeline),
    ("flow graph", flow_graph),
    ("protocol shape", protocol_shape),
    ("determinism", determinism),
];

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in CRITERIA.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
