//! Synthetic corpora with known ground truth.
//!
//! These generators back the test suites and the README walkthrough: a
//! template corpus with disjoint topic vocabularies, a corpus whose slices
//! are verbatim copies, a planted-drift corpus where one term switches
//! context between slices, and a larger mixed-topic corpus of short
//! paragraphs for the metric protocol.

use chrono::{DateTime, Duration, TimeZone, Utc};
use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    self, CalendarUnit, Granularity, PreprocessOptions, RawDocument, TimeSlicedCorpus,
};

pub const NUCLEAR: &[&str] = &[
    "reactor",
    "fuel",
    "uranium",
    "plant",
    "enrichment",
    "turbine",
    "coolant",
    "isotope",
    "fission",
    "grid",
    "megawatt",
    "outage",
    "inspection",
    "regulator",
    "containment",
    "spent",
];
pub const HEALTH: &[&str] = &[
    "vaccine",
    "hospital",
    "patient",
    "clinic",
    "doctor",
    "nurse",
    "infection",
    "therapy",
    "surgery",
    "disease",
    "symptom",
    "pharmacy",
    "diagnosis",
    "outbreak",
    "immunity",
    "treatment",
];
pub const FINANCE: &[&str] = &[
    "market",
    "stock",
    "investor",
    "bond",
    "dividend",
    "shares",
    "trader",
    "earnings",
    "inflation",
    "currency",
    "portfolio",
    "banker",
    "profit",
    "revenue",
    "merger",
    "equity",
];
pub const SPORTS: &[&str] = &[
    "match",
    "goal",
    "striker",
    "coach",
    "league",
    "stadium",
    "referee",
    "penalty",
    "season",
    "tournament",
    "midfield",
    "keeper",
    "fans",
    "trophy",
    "injury",
    "transfer",
];
pub const CONSUMER: &[&str] = &[
    "soap",
    "coupon",
    "shampoo",
    "deodorant",
    "detergent",
    "laundry",
    "bleach",
    "fragrance",
    "lotion",
    "toothpaste",
    "discount",
    "aisle",
    "grocery",
    "brand",
    "sale",
    "cleaner",
];
pub const GEOLOGY: &[&str] = &[
    "tunnel",
    "underground",
    "plutonium",
    "collapse",
    "radioactive",
    "excavation",
    "waste",
    "shaft",
    "quarry",
    "contamination",
    "hanford",
    "rail",
    "soil",
    "cavein",
    "site",
    "worker",
];

/// The template vocabularies in order.
pub const TEMPLATES: &[&[&str]] = &[NUCLEAR, HEALTH, FINANCE, SPORTS, CONSUMER, GEOLOGY];

fn slice_start(slice: usize) -> DateTime<Utc> {
    let year = 2015 + (slice / 12) as i32;
    let month = (slice % 12) as u32 + 1;
    Utc.with_ymd_and_hms(year, month, 1, 0, 0, 0).unwrap()
}

fn timestamp(slice: usize, k: usize) -> DateTime<Utc> {
    slice_start(slice) + Duration::hours((k % (27 * 24)) as i64)
}

/// Samples `len` words from `vocab` with weights `1 / sqrt(rank + 1)`.
fn sample_words<'a>(vocab: &[&'a str], len: usize, rng: &mut ChaCha8Rng) -> Vec<&'a str> {
    let weights: Vec<f64> = (0..vocab.len())
        .map(|i| 1.0 / ((i + 1) as f64).sqrt())
        .collect();
    let total: f64 = weights.iter().sum();
    (0..len)
        .map(|_| {
            let mut u = rng.random::<f64>() * total;
            for (w, &p) in vocab.iter().zip(&weights) {
                if u < p {
                    return *w;
                }
                u -= p;
            }
            vocab[vocab.len() - 1]
        })
        .collect()
}

/// Runs raw documents through the standard preprocessing and monthly slicing.
pub fn into_corpus(docs: &[RawDocument], min_count: u64) -> TimeSlicedCorpus {
    let processed = corpus::preprocess(docs, &PreprocessOptions::default());
    corpus::slice(
        &processed,
        &Granularity::Calendar(CalendarUnit::Month),
        min_count,
    )
    .expect("synthetic corpus is non-empty")
}

#[derive(Debug, Clone)]
pub struct TemplateSpec {
    pub topics: usize,
    pub slices: usize,
    pub docs_per_topic_per_slice: usize,
    pub doc_len: usize,
    pub seed: u64,
}

impl Default for TemplateSpec {
    fn default() -> Self {
        Self {
            topics: 3,
            slices: 2,
            docs_per_topic_per_slice: 30,
            doc_len: 20,
            seed: 11,
        }
    }
}

/// Documents drawn from disjoint template vocabularies; the topic of each
/// document is its template index, recoverable by [`template_of`].
pub fn template_documents(spec: &TemplateSpec) -> Vec<RawDocument> {
    assert!(spec.topics <= TEMPLATES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut docs = Vec::new();
    for s in 0..spec.slices {
        let mut k = 0;
        for i in 0..spec.docs_per_topic_per_slice {
            for (t, vocab) in TEMPLATES.iter().take(spec.topics).enumerate() {
                let words = sample_words(vocab, spec.doc_len, &mut rng);
                docs.push(RawDocument {
                    id: format!("s{s}-t{t}-d{i}"),
                    timestamp: timestamp(s, k),
                    text: words.join(" "),
                    source: None,
                });
                k += 1;
            }
        }
    }
    docs
}

pub fn template_corpus(spec: &TemplateSpec) -> TimeSlicedCorpus {
    into_corpus(&template_documents(spec), 1)
}

/// Template index encoded in ids produced by this module (`...-t{n}-...`).
pub fn template_of(doc_id: &str) -> Option<usize> {
    doc_id
        .split('-')
        .find_map(|p| p.strip_prefix('t').and_then(|n| n.parse().ok()))
}

/// Template index owning `term`, if any.
pub fn template_of_term(term: &str) -> Option<usize> {
    TEMPLATES.iter().position(|v| v.contains(&term))
}

/// Two slices holding verbatim copies of the same documents (ids differ).
pub fn duplicate_slice_documents(
    docs_per_slice: usize,
    topics: usize,
    seed: u64,
) -> Vec<RawDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut texts = Vec::with_capacity(docs_per_slice);
    for i in 0..docs_per_slice {
        let t = i % topics;
        texts.push((t, sample_words(TEMPLATES[t], 20, &mut rng).join(" ")));
    }
    let mut docs = Vec::new();
    for s in 0..2 {
        for (i, (t, text)) in texts.iter().enumerate() {
            docs.push(RawDocument {
                id: format!("s{s}-t{t}-d{i}"),
                timestamp: timestamp(s, i),
                text: text.clone(),
                source: None,
            });
        }
    }
    docs
}

/// Planted drift: `purex` appears in consumer-product contexts in slice 0
/// and in tunnel/plutonium contexts in slice 1. All other documents follow
/// the same template distributions in both slices.
pub fn planted_drift_documents(docs_per_topic: usize, seed: u64) -> Vec<RawDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stable = [NUCLEAR, HEALTH, FINANCE];
    let mut docs = Vec::new();
    for s in 0..2 {
        let mut k = 0;
        for i in 0..docs_per_topic {
            for (t, vocab) in [NUCLEAR, HEALTH, FINANCE, CONSUMER, GEOLOGY]
                .iter()
                .enumerate()
            {
                let mut words = sample_words(vocab, 20, &mut rng);
                let carries_purex = (s == 0 && t == 3) || (s == 1 && t == 4);
                if carries_purex && i % 2 == 0 {
                    let pos = rng.random_range(0..words.len());
                    words[pos] = "purex";
                    let pos = rng.random_range(0..words.len());
                    words[pos] = "purex";
                }
                debug_assert!(t >= 3 || stable.contains(vocab));
                docs.push(RawDocument {
                    id: format!("s{s}-t{t}-d{i}"),
                    timestamp: timestamp(s, k),
                    text: words.join(" "),
                    source: None,
                });
                k += 1;
            }
        }
    }
    docs
}

/// Parameters of the mixed-topic paragraph corpus.
#[derive(Debug, Clone)]
pub struct DeskSpec {
    pub documents: usize,
    pub slices: usize,
    pub topics: usize,
    pub vocabulary: usize,
    pub words_per_topic: usize,
    /// Probability that a token comes from the shared background distribution.
    pub background: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for DeskSpec {
    fn default() -> Self {
        Self {
            documents: 5000,
            slices: 10,
            topics: 40,
            vocabulary: 4000,
            words_per_topic: 120,
            background: 0.3,
            min_len: 15,
            max_len: 45,
            seed: 2015,
        }
    }
}

fn pseudo_words(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    const ONSETS: &[&str] = &[
        "b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr",
        "st", "pl", "gr",
    ];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
    const CODAS: &[&str] = &["", "n", "r", "s", "l", "m", "x"];
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).unwrap());
            w.push_str(VOWELS.choose(rng).unwrap());
        }
        w.push_str(CODAS.choose(rng).unwrap());
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// A topic-mixture corpus of short paragraphs: each topic owns a Zipfian
/// distribution over a random subset of the vocabulary, each paragraph mixes
/// one to three topics, and a share of tokens comes from a corpus-wide
/// background distribution.
pub fn desk_documents(spec: &DeskSpec) -> Vec<RawDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let words = pseudo_words(spec.vocabulary, &mut rng);
    let zipf = |n: usize| -> Vec<f64> {
        let w: Vec<f64> = (0..n).map(|i| 1.0 / (i + 1) as f64).collect();
        let mut acc = 0.0;
        let total: f64 = w.iter().sum();
        w.iter()
            .map(|x| {
                acc += x / total;
                acc
            })
            .collect()
    };
    let topic_cdf = zipf(spec.words_per_topic);
    let mut topic_words: Vec<Vec<usize>> = Vec::with_capacity(spec.topics);
    let mut all: Vec<usize> = (0..spec.vocabulary).collect();
    for _ in 0..spec.topics {
        all.shuffle(&mut rng);
        topic_words.push(all[..spec.words_per_topic].to_vec());
    }
    let mut background_order: Vec<usize> = (0..spec.vocabulary).collect();
    background_order.shuffle(&mut rng);
    let background_cdf = zipf(spec.vocabulary);
    let draw = |cdf: &[f64], rng: &mut ChaCha8Rng| {
        let u = rng.random::<f64>();
        cdf.partition_point(|&c| c < u).min(cdf.len() - 1)
    };

    let per_slice = spec.documents.div_ceil(spec.slices);
    let mut docs = Vec::with_capacity(spec.documents);
    for d in 0..spec.documents {
        let slice = (d / per_slice).min(spec.slices - 1);
        let n_topics = match rng.random::<f64>() {
            u if u < 0.6 => 1,
            u if u < 0.9 => 2,
            _ => 3,
        };
        let mix: Vec<(usize, f64)> = (0..n_topics)
            .map(|_| (rng.random_range(0..spec.topics), rng.random::<f64>() + 0.2))
            .collect();
        let total: f64 = mix.iter().map(|m| m.1).sum();
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let mut tokens = Vec::with_capacity(len);
        for _ in 0..len {
            if rng.random::<f64>() < spec.background {
                tokens.push(words[background_order[draw(&background_cdf, &mut rng)]].as_str());
            } else {
                let mut u = rng.random::<f64>() * total;
                let mut topic = mix[0].0;
                for &(t, w) in &mix {
                    if u < w {
                        topic = t;
                        break;
                    }
                    u -= w;
                }
                tokens.push(words[topic_words[topic][draw(&topic_cdf, &mut rng)]].as_str());
            }
        }
        docs.push(RawDocument {
            id: format!("p{d}"),
            timestamp: timestamp(slice, d),
            text: tokens.join(" "),
            source: Some("synthetic-debate".into()),
        });
    }
    docs
}

/// Isotropic Gaussian blobs around `centers`, `per_blob` points each, plus
/// `outliers` points drawn uniformly from a box three times wider than the
/// centres' bounding box. Labels are the blob index, `usize::MAX` for
/// outliers.
pub fn gaussian_blobs(
    centers: &[Vec<f64>],
    per_blob: usize,
    std: f64,
    outliers: usize,
    seed: u64,
) -> (Array2<f32>, Vec<usize>) {
    let dim = centers.first().map_or(0, |c| c.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (b, c) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            rows.extend(
                c.iter()
                    .map(|&m| (m + std * standard_normal(&mut rng)) as f32),
            );
            labels.push(b);
        }
    }
    let (mut lo, mut hi) = (vec![f64::MAX; dim], vec![f64::MIN; dim]);
    for c in centers {
        for d in 0..dim {
            lo[d] = lo[d].min(c[d]);
            hi[d] = hi[d].max(c[d]);
        }
    }
    for _ in 0..outliers {
        for d in 0..dim {
            let mid = (lo[d] + hi[d]) / 2.0;
            let half = ((hi[d] - lo[d]) / 2.0).max(1.0) * 3.0;
            rows.push((mid + half * (2.0 * rng.random::<f64>() - 1.0)) as f32);
        }
        labels.push(usize::MAX);
    }
    (
        Array2::from_shape_vec((labels.len(), dim), rows).expect("shape"),
        labels,
    )
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
