use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use ttec_core::cluster::ClusterParams;
use ttec_core::embed::{
    train_compass, train_slices, Architecture, EmbeddingModel, ModelKind, TrainingParams,
};
use ttec_core::flow::{
    build_flow, build_keyword_space, build_sankey, cluster_slices, context_scatter,
    label_local_clusters, match_by_centroid, match_by_vocabulary, movement_heatmap,
    ClusterFlowGraph, FlowParams, HeatmapMode, KeywordSet, KeywordSpace, LocalCluster, MatchMethod,
    SliceClusters, GRAY,
};
use ttec_core::reduce::{layout_diameter, ReducerParams};
use ttec_core::synthetic::{
    duplicate_slice_documents, gaussian_blobs, into_corpus, planted_drift_documents,
    template_corpus, template_of_term, TemplateSpec,
};
use ttec_core::topicspace::{
    build_global_topics, DescriptorParams, GlobalTopic, TopicParams, TopicTerm,
};

fn s(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|x| x.to_string()).collect()
}

fn train(
    docs: &[ttec_core::corpus::RawDocument],
    dim: usize,
    epochs: usize,
) -> (EmbeddingModel, Vec<EmbeddingModel>) {
    let corpus = into_corpus(docs, 1);
    let p = TrainingParams {
        dim,
        epochs,
        seed: 7,
        ..Default::default()
    };
    let compass = train_compass(&corpus, &p).unwrap();
    let slices = train_slices(&compass, &corpus, &p).unwrap();
    (compass, slices)
}

fn duplicate() -> &'static (EmbeddingModel, Vec<EmbeddingModel>) {
    static F: OnceLock<(EmbeddingModel, Vec<EmbeddingModel>)> = OnceLock::new();
    F.get_or_init(|| train(&duplicate_slice_documents(250, 3, 5), 64, 5))
}

fn drift() -> &'static (EmbeddingModel, Vec<EmbeddingModel>) {
    static F: OnceLock<(EmbeddingModel, Vec<EmbeddingModel>)> = OnceLock::new();
    F.get_or_init(|| train(&planted_drift_documents(50, 9), 64, 5))
}

fn template() -> &'static (EmbeddingModel, Vec<EmbeddingModel>) {
    static F: OnceLock<(EmbeddingModel, Vec<EmbeddingModel>)> = OnceLock::new();
    F.get_or_init(|| {
        let corpus = template_corpus(&TemplateSpec::default());
        let p = TrainingParams {
            dim: 48,
            epochs: 20,
            seed: 7,
            ..Default::default()
        };
        let compass = train_compass(&corpus, &p).unwrap();
        let slices = train_slices(&compass, &corpus, &p).unwrap();
        (compass, slices)
    })
}

fn shared_terms(slices: &[EmbeddingModel]) -> Vec<String> {
    slices[0]
        .terms()
        .iter()
        .filter(|t| slices.iter().all(|m| m.term_row(t).is_some()))
        .cloned()
        .collect()
}

/// Link conservation and noise totality against an independent count.
fn check_conservation(graph: &ClusterFlowGraph, present: &[BTreeSet<String>]) {
    for (t, terms) in present.iter().enumerate() {
        let mut held: Vec<&String> = graph
            .nodes
            .iter()
            .filter(|n| n.time == t)
            .flat_map(|n| &n.terms)
            .collect();
        held.sort();
        let expected: Vec<&String> = terms.iter().collect();
        assert_eq!(held, expected, "slice {t}: every term in exactly one node");
    }
    for t in 0..present.len().saturating_sub(1) {
        let shared: BTreeSet<&String> = present[t].intersection(&present[t + 1]).collect();
        let links: Vec<_> = graph
            .links
            .iter()
            .filter(|l| graph.node(&l.source).unwrap().time == t)
            .collect();
        assert_eq!(links.len(), shared.len(), "transition {t}");
        let linked: BTreeSet<&String> = links.iter().map(|l| &l.term).collect();
        assert_eq!(linked, shared);
        for l in links {
            let (a, b) = (
                graph.node(&l.source).unwrap(),
                graph.node(&l.target).unwrap(),
            );
            assert_eq!(b.time, a.time + 1);
            assert!(a.terms.contains(&l.term) && b.terms.contains(&l.term));
        }
    }
    let ids: BTreeSet<(usize, LocalCluster)> =
        graph.nodes.iter().map(|n| (n.time, n.cluster)).collect();
    assert_eq!(ids.len(), graph.nodes.len(), "one node per (time, cluster)");
    for n in &graph.nodes {
        assert!(!n.terms.is_empty());
        assert_eq!(n.id, n.cluster.node_id(n.time));
        match n.topic {
            Some(tp) => assert_eq!(graph.palette[&tp], n.color),
            None => assert_eq!(n.color, GRAY),
        }
    }
}

fn slice_input(clusters: &[&[&str]], noise: &[&str]) -> SliceClusters {
    SliceClusters {
        label: String::new(),
        clusters: clusters.iter().map(|c| s(c)).collect(),
        noise: s(noise),
        topics: vec![None; clusters.len()],
    }
}

#[test]
fn ten_terms_three_slices_give_twenty_links() {
    let terms: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
    let refs: Vec<&str> = terms.iter().map(String::as_str).collect();
    let slices = vec![
        slice_input(&[&refs[0..4], &refs[4..8]], &refs[8..10]),
        slice_input(&[&refs[0..6]], &refs[6..10]),
        slice_input(&[&refs[0..3], &refs[3..6], &refs[6..9]], &refs[9..10]),
    ];
    let g = build_sankey(
        &slices,
        &[vec![], vec![]],
        MatchMethod::Centroid,
        &BTreeMap::new(),
    );
    assert_eq!(g.links.len(), 20);
    let present: Vec<BTreeSet<String>> = vec![terms.iter().cloned().collect(); 3];
    check_conservation(&g, &present);
}

#[test]
fn absent_term_skips_its_transition() {
    let slices = vec![
        slice_input(&[&["a", "b", "gone"]], &[]),
        slice_input(&[&["a", "b"]], &[]),
        slice_input(&[&["a"]], &["b", "gone"]),
    ];
    let g = build_sankey(
        &slices,
        &[vec![], vec![]],
        MatchMethod::Vocabulary,
        &BTreeMap::new(),
    );
    assert!(g.links.iter().all(|l| l.term != "gone"));
    assert_eq!(g.term_path("gone").len(), 2);
    assert_eq!(g.links.iter().filter(|l| l.term == "b").count(), 2);
    assert_eq!(g.node("Time_2_noise").unwrap().terms, s(&["b", "gone"]));
}

#[test]
fn link_multiset_replays_by_hand() {
    // Slice 0: {a,b,c} {d,e}; slice 1: {a,b} {c,d} noise {e}.
    let slices = vec![
        slice_input(&[&["a", "b", "c"], &["d", "e"]], &[]),
        slice_input(&[&["a", "b"], &["c", "d"]], &["e"]),
    ];
    let g = build_sankey(&slices, &[vec![]], MatchMethod::Centroid, &BTreeMap::new());
    let got: BTreeSet<(String, String, String)> = g
        .links
        .iter()
        .map(|l| (l.term.clone(), l.source.clone(), l.target.clone()))
        .collect();
    let want: BTreeSet<(String, String, String)> = [
        ("a", "Time_0_0", "Time_1_0"),
        ("b", "Time_0_0", "Time_1_0"),
        ("c", "Time_0_0", "Time_1_1"),
        ("d", "Time_0_1", "Time_1_1"),
        ("e", "Time_0_1", "Time_1_noise"),
    ]
    .iter()
    .map(|(a, b, c)| (a.to_string(), b.to_string(), c.to_string()))
    .collect();
    assert_eq!(got, want);
}

#[test]
fn split_and_merge_show_as_fan_out_and_fan_in() {
    let slices = vec![
        slice_input(
            &[&["a", "b", "c", "d", "e", "f"], &["x", "y"], &["z", "w"]],
            &[],
        ),
        slice_input(
            &[&["a", "b", "c"], &["d", "e", "f"], &["x", "y", "z", "w"]],
            &[],
        ),
    ];
    let per: Vec<Vec<String>> = slices.iter().map(|s| s.clusters.concat()).collect();
    assert_eq!(per[0].len(), per[1].len());
    let m = match_by_vocabulary(&slices[0].clusters, &slices[1].clusters);
    let g = build_sankey(
        &slices,
        &[m.clone()],
        MatchMethod::Vocabulary,
        &BTreeMap::new(),
    );
    let targets_of = |src: &str| -> BTreeSet<String> {
        g.links
            .iter()
            .filter(|l| l.source == src)
            .map(|l| l.target.clone())
            .collect()
    };
    let sources_of = |dst: &str| -> BTreeSet<String> {
        g.links
            .iter()
            .filter(|l| l.target == dst)
            .map(|l| l.source.clone())
            .collect()
    };
    assert_eq!(targets_of("Time_0_0").len(), 2, "split fans out");
    assert_eq!(sources_of("Time_1_2").len(), 2, "merge fans in");
    // The successor relation stays functional: the split names one successor.
    assert_eq!(m[0].target, Some(0));
    assert_eq!(m[0].candidates, vec![0.5, 0.5, 0.0]);
    assert_eq!(
        g.matches.iter().filter(|e| e.source == "Time_0_0").count(),
        1
    );
}

#[test]
fn identical_clusterings_match_with_score_one() {
    let c = vec![s(&["a", "b"]), s(&["c"]), s(&["d", "e", "f"])];
    for (i, m) in match_by_vocabulary(&c, &c).iter().enumerate() {
        assert_eq!(m.target, Some(i));
        assert_eq!(m.score, 1.0);
    }
}

#[test]
fn centroid_matching_follows_translation_and_threshold() {
    let a = vec![vec![0.0, 0.0], vec![5.0, 0.0], vec![0.0, 5.0]];
    let shifted: Vec<Vec<f64>> = a.iter().map(|c| vec![c[0] + 0.1, c[1] - 0.1]).collect();
    let m = match_by_centroid(&a, &shifted, 1.0);
    for (i, c) in m.iter().enumerate() {
        assert_eq!(c.target, Some(i));
    }
    let mut with_new = shifted.clone();
    with_new.push(vec![100.0, 100.0]);
    let m = match_by_centroid(&a, &with_new, 1.0);
    assert!(
        m.iter().all(|c| c.target != Some(3)),
        "far cluster has no predecessor"
    );
    let m = match_by_centroid(&[vec![0.0, 0.0]], &[vec![10.0, 0.0]], 2.0);
    assert_eq!(m[0].target, None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn centroid_matching_equals_all_pairs_scan(
        a in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 3), 1..6),
        b in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 3), 1..6),
        limit in 0.0f64..20.0,
    ) {
        let m = match_by_centroid(&a, &b, limit);
        for (i, ca) in a.iter().enumerate() {
            let mut best = (usize::MAX, f64::INFINITY);
            for (j, cb) in b.iter().enumerate() {
                let d = ca.iter().zip(cb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                if d < best.1 { best = (j, d); }
            }
            let want = (best.1 <= limit).then_some(best.0);
            prop_assert_eq!(m[i].target, want);
            prop_assert!((m[i].score - best.1).abs() < 1e-12);
        }
    }

    #[test]
    fn vocabulary_scores_are_fractions(
        a in proptest::collection::vec(proptest::collection::btree_set(0u8..12, 1..6), 1..4),
        b in proptest::collection::vec(proptest::collection::btree_set(0u8..12, 1..6), 1..4),
    ) {
        let to_s = |v: &Vec<BTreeSet<u8>>| -> Vec<Vec<String>> {
            v.iter().map(|c| c.iter().map(|x| format!("t{x}")).collect()).collect()
        };
        let (ta, tb) = (to_s(&a), to_s(&b));
        for m in match_by_vocabulary(&ta, &tb) {
            prop_assert!(m.candidates.iter().all(|x| (0.0..=1.0).contains(x)));
            if let Some(t) = m.target {
                let subset = ta[m.source].iter().all(|x| tb[t].contains(x));
                prop_assert_eq!(m.score == 1.0, subset);
            } else {
                prop_assert!(m.candidates.iter().all(|&x| x == 0.0));
            }
        }
    }
}

fn hand_space(coords: Vec<Array2<f64>>, terms: Vec<String>) -> KeywordSpace {
    let present = coords.iter().map(|c| (0..c.nrows()).collect()).collect();
    let refs: Vec<&Array2<f64>> = coords.iter().collect();
    KeywordSpace {
        diameter: layout_diameter(&refs),
        keywords: KeywordSet {
            terms,
            present,
            dropped: vec![],
        },
        coords,
    }
}

#[test]
fn slices_cluster_independently() {
    // Slice 0: two tight groups of five. Slice 1: two scattered points.
    let mut pts = Vec::new();
    for i in 0..5 {
        pts.extend([0.0 + 0.01 * i as f64, 0.0]);
    }
    for i in 0..5 {
        pts.extend([10.0 + 0.01 * i as f64, 10.0]);
    }
    let a = Array2::from_shape_vec((10, 2), pts).unwrap();
    let b = Array2::from_shape_vec((2, 2), vec![0.0, 0.0, 50.0, -30.0]).unwrap();
    let terms: Vec<String> = (0..10).map(|i| format!("k{i}")).collect();
    let space = hand_space(vec![a, b], terms);
    let c = cluster_slices(&space, &ClusterParams::new(3)).unwrap();
    assert_eq!(c[0].n_clusters, 2);
    assert_eq!(c[1].n_clusters, 0);
    assert_eq!(c[1].noise_count(), 2);
    assert_eq!(c, cluster_slices(&space, &ClusterParams::new(3)).unwrap());
}

fn topic(id: usize, terms: &[(&str, f64)]) -> GlobalTopic {
    GlobalTopic {
        id,
        label: format!("topic {id}"),
        descriptors: vec![],
        members: vec![],
        centroid: vec![],
        terms: terms
            .iter()
            .map(|(t, p)| TopicTerm {
                term: t.to_string(),
                probability: *p,
            })
            .collect(),
    }
}

#[test]
fn local_clusters_take_the_topic_sharing_most_terms() {
    let topics = vec![
        topic(0, &[("a", 0.9), ("b", 0.8), ("c", 0.7)]),
        topic(1, &[("x", 0.5), ("z", 0.9)]),
        topic(2, &[("y", 0.5)]),
    ];
    let clusters = vec![s(&["a", "b"]), s(&["x", "y"]), s(&["q"]), s(&["a", "z"])];
    let got = label_local_clusters(&clusters, &topics);
    assert_eq!(got, vec![Some(0), Some(1), None, Some(0)]);
}

#[test]
fn keyword_space_masks_missing_terms() {
    let (_, slices) = template();
    let mut terms = shared_terms(slices);
    terms.truncate(20);
    let missing = terms[3].clone();
    // A third slice lacking one term: a copy of slice 1 with that word removed.
    let third = {
        let m = &slices[1];
        let keep: Vec<usize> = (0..m.terms().len())
            .filter(|&i| m.terms()[i] != missing)
            .collect();
        let pick = |a: &Array2<f32>| a.select(ndarray::Axis(0), &keep);
        EmbeddingModel::from_parts(
            m.kind,
            m.architecture,
            keep.iter().map(|&i| m.terms()[i].clone()).collect(),
            keep.iter().map(|&i| m.counts()[i]).collect(),
            m.doc_ids().to_vec(),
            pick(&m.word_input),
            m.doc_input.clone(),
            pick(&m.target),
        )
        .unwrap()
    };
    let all = vec![slices[0].clone(), slices[1].clone(), third];
    let mut requested = terms.clone();
    requested.push("nowhere-term".into());
    let space = build_keyword_space(&all, &requested, &FlowParams::default().reducer).unwrap();
    assert_eq!(space.keywords.dropped, s(&["nowhere-term"]));
    assert_eq!(space.coords[0].nrows(), 20);
    assert_eq!(space.coords[2].nrows(), 19);
    assert_eq!(space.coords[0].ncols(), 5);
    assert!(space.keywords.row_of(2, 3).is_none());
    let flow = build_flow(
        &all,
        &s(&["a", "b", "c"]),
        &requested,
        &[],
        &FlowParams::default(),
    )
    .unwrap();
    let present: Vec<BTreeSet<String>> = (0..3)
        .map(|t| {
            space.keywords.present[t]
                .iter()
                .map(|&k| terms[k].clone())
                .collect()
        })
        .collect();
    check_conservation(&flow.graph, &present);
    let path = flow.graph.term_path(&missing);
    assert_eq!(path.iter().map(|p| p.time).collect::<Vec<_>>(), vec![0, 1]);
    assert!(build_keyword_space(&all[..1], &terms, &ReducerParams::default()).is_err());
}

#[test]
fn template_flow_labels_clusters_with_their_template_topic() {
    let (compass, slices) = template();
    let space = build_global_topics(
        compass,
        &TopicParams {
            reducer: ReducerParams {
                seed: 3,
                ..Default::default()
            },
            cluster: ClusterParams::new(10),
            target_k: 3,
            descriptors: DescriptorParams::default(),
            ..Default::default()
        },
    )
    .unwrap();
    let terms = shared_terms(slices);
    let labels = s(&["Jan", "Feb"]);
    let flow = build_flow(
        slices,
        &labels,
        &terms,
        &space.topics,
        &FlowParams::default(),
    )
    .unwrap();
    let present: Vec<BTreeSet<String>> = vec![terms.iter().cloned().collect(); 2];
    check_conservation(&flow.graph, &present);
    let topic_template: Vec<Option<usize>> = space
        .topics
        .iter()
        .map(|t| template_of_term(&t.descriptors[0].term))
        .collect();
    let clusters: Vec<_> = flow
        .graph
        .nodes
        .iter()
        .filter(|n| n.cluster != LocalCluster::Noise)
        .collect();
    assert!(!clusters.is_empty());
    let good = clusters
        .iter()
        .filter(|n| {
            let majority =
                n.terms
                    .iter()
                    .filter_map(|t| template_of_term(t))
                    .fold([0; 8], |mut acc, t| {
                        acc[t] += 1;
                        acc
                    });
            let tmpl = (0..8).max_by_key(|&i| majority[i]).unwrap();
            n.topic.is_some_and(|tp| topic_template[tp] == Some(tmpl))
        })
        .count();
    assert!(
        good * 10 >= clusters.len() * 9,
        "{good}/{} clusters labelled with their template",
        clusters.len()
    );
    assert_eq!(flow.graph.slices[1].label, "Feb");
    let json = serde_json::to_value(&flow.graph).unwrap();
    for key in ["slices", "nodes", "links", "matches"] {
        assert!(json[key].is_array(), "{key}");
    }
    let node = &json["nodes"][0];
    for key in ["id", "time", "cluster", "topic", "color", "terms"] {
        assert!(node.get(key).is_some(), "node.{key}");
    }
    let back: ClusterFlowGraph = serde_json::from_value(json).unwrap();
    assert_eq!(back, flow.graph);
    let again = build_flow(
        slices,
        &labels,
        &terms,
        &space.topics,
        &FlowParams::default(),
    )
    .unwrap();
    assert_eq!(again, flow);
    let vocab = build_flow(
        slices,
        &labels,
        &terms,
        &space.topics,
        &FlowParams {
            matching: MatchMethod::Vocabulary,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(vocab
        .graph
        .matches
        .iter()
        .all(|m| m.method == MatchMethod::Vocabulary));
}

#[test]
fn filter_keeps_only_selected_terms() {
    let slices = vec![
        slice_input(&[&["a", "b"], &["c"]], &["d"]),
        slice_input(&[&["a"], &["b", "c", "d"]], &[]),
    ];
    let m = match_by_vocabulary(&slices[0].clusters, &slices[1].clusters);
    let g = build_sankey(&slices, &[m], MatchMethod::Vocabulary, &BTreeMap::new());
    let f = g.filter_terms(&s(&["b"]));
    assert_eq!(f.links.len(), 1);
    assert_eq!(f.nodes.len(), 2);
    assert!(f.nodes.iter().all(|n| n.terms == s(&["b"])));
    assert!(f
        .matches
        .iter()
        .all(|e| f.node(&e.source).is_some() && f.node(&e.target).is_some()));
}

/// Word models for two slices: 60 words in three blobs, identical across
/// slices except `w0`, which jumps to the third blob in slice 1, and
/// `jitter` noise added to every other slice-1 vector.
fn blob_models(jitter: f32) -> Vec<EmbeddingModel> {
    let centers: Vec<Vec<f64>> = (0..3)
        .map(|b| {
            (0..16)
                .map(|d| if d % 3 == b { 4.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let (pts, _) = gaussian_blobs(&centers, 20, 1.0, 0, 13);
    let terms: Vec<String> = (0..pts.nrows()).map(|i| format!("w{i}")).collect();
    let mut next = pts.clone();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    next.mapv_inplace(|x| x + jitter * (rng.random::<f32>() - 0.5));
    let far = pts.row(pts.nrows() - 1).to_owned();
    next.row_mut(0).assign(&far.mapv(|x| x + 0.05));
    [pts, next]
        .into_iter()
        .enumerate()
        .map(|(t, m)| {
            EmbeddingModel::from_parts(
                ModelKind::Slice(t),
                Architecture::Cbow,
                terms.clone(),
                vec![1; terms.len()],
                vec![],
                m.clone(),
                None,
                m,
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn unchanged_keywords_stay_put_and_the_mover_moves_most() {
    let slices = blob_models(0.0);
    let terms = slices[0].terms().to_vec();
    let space = build_keyword_space(&slices, &terms, &FlowParams::default().reducer).unwrap();
    let moves = space.displacements();
    let (mover, rest): (Vec<_>, Vec<_>) = moves.iter().partition(|m| m.0 == "w0");
    let worst = rest.iter().map(|m| m.2).fold(0.0, f64::max);
    assert!(
        worst < 0.05 * space.diameter,
        "max move {worst} vs diameter {}",
        space.diameter
    );
    assert!(mover[0].2 > worst, "mover {} vs {worst}", mover[0].2);
    let top = moves.iter().max_by(|a, b| a.2.total_cmp(&b.2)).unwrap();
    assert_eq!(top.0, "w0");
}

#[test]
fn duplicate_slices_have_near_zero_heatmap() {
    let (_, slices) = duplicate();
    let terms = shared_terms(slices);
    let h = movement_heatmap(slices, &terms, HeatmapMode::SelfDisplacement).unwrap();
    for (t, row) in terms.iter().zip(&h.cells) {
        let v = row[0].unwrap();
        assert!((0.0..=0.05).contains(&v), "{t}: {v}");
    }
}

#[test]
fn stable_focus_term_stays_put_in_the_scatter() {
    let slices = blob_models(0.01);
    for focus in ["w5", "w25", "w45"] {
        let sc = context_scatter(&slices, 0, focus, 10, &FlowParams::default().scatter).unwrap();
        let f = sc.focus_points();
        assert_eq!(f.len(), 2);
        let gap = ((f[0].x - f[1].x).powi(2) + (f[0].y - f[1].y).powi(2)).sqrt();
        assert!(
            gap < 0.1 * sc.diameter(),
            "{focus}: gap {gap} vs {}",
            sc.diameter()
        );
    }
}

#[test]
fn planted_drift_tops_every_movement_measure() {
    let (_, slices) = drift();
    let terms = shared_terms(slices);
    let h = movement_heatmap(slices, &terms, HeatmapMode::SelfDisplacement).unwrap();
    assert_eq!(h.column_max(0).unwrap().0, "purex");
    assert!(h
        .cells
        .iter()
        .flatten()
        .flatten()
        .all(|v| (0.0..=2.0).contains(v)));
    let n = movement_heatmap(slices, &terms, HeatmapMode::NeighborhoodChange).unwrap();
    assert_eq!(n.column_max(0).unwrap().0, "purex");
    let space = build_keyword_space(slices, &terms, &FlowParams::default().reducer).unwrap();
    let top = space
        .displacements()
        .into_iter()
        .max_by(|a, b| a.2.total_cmp(&b.2))
        .unwrap();
    assert_eq!(top.0, "purex");
    let sc = context_scatter(slices, 0, "purex", 8, &FlowParams::default().scatter).unwrap();
    let consumer = sc.neighbors[0]
        .iter()
        .filter(|w| template_of_term(w) == template_of_term("shampoo"))
        .count();
    let geology = sc.neighbors[1]
        .iter()
        .filter(|w| template_of_term(w) == template_of_term("tunnel"))
        .count();
    assert!(consumer >= 6, "{:?}", sc.neighbors[0]);
    assert!(geology >= 6, "{:?}", sc.neighbors[1]);
    assert_eq!(sc.points.len(), 2 + 16);
}

#[test]
fn heatmap_marks_missing_cells() {
    let (_, slices) = template();
    let mut terms = shared_terms(slices);
    terms.push("absent".into());
    let h = movement_heatmap(slices, &terms, HeatmapMode::SelfDisplacement).unwrap();
    assert_eq!(h.cells.last().unwrap()[0], None);
    let mut buf = Vec::new();
    h.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("term,transition,displacement\n"));
    assert!(text.ends_with("absent,0,\n"));
    assert!(movement_heatmap(&slices[..1], &terms, HeatmapMode::SelfDisplacement).is_err());
}

#[test]
fn context_scatter_errors_and_clamps() {
    let (_, slices) = template();
    let err = context_scatter(slices, 0, "absent", 5, &ReducerParams::default()).unwrap_err();
    assert!(err.to_string().contains("slice 0"), "{err}");
    let sc = context_scatter(
        slices,
        0,
        &slices[0].terms()[0],
        10_000,
        &ReducerParams::default(),
    )
    .unwrap();
    assert_eq!(sc.neighbors[0].len(), slices[0].terms().len() - 1);
}

#[test]
fn all_noise_slice_is_legal() {
    let input = SliceClusters {
        label: "x".into(),
        clusters: vec![],
        noise: s(&["a", "b", "c"]),
        topics: vec![],
    };
    let g = build_sankey(
        &[input.clone(), input],
        &[vec![]],
        MatchMethod::Centroid,
        &BTreeMap::new(),
    );
    assert_eq!(g.nodes.len(), 2);
    assert_eq!(g.links.len(), 3);
    assert!(g.nodes.iter().all(|n| n.color == GRAY && n.topic.is_none()));
}
