//! Document ingestion, preprocessing and time slicing.
//!
//! Raw JSONL records are parsed into [`RawDocument`]s, normalised into token
//! sequences by [`preprocess`], and partitioned into chronologically ordered
//! slices by [`slice`]. The resulting [`TimeSlicedCorpus`] carries one global
//! vocabulary shared by every slice so slice models can always resolve their
//! terms against the compass.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read document source: {0}")]
    Ingest(#[from] std::io::Error),
    #[error("no valid records in input ({skipped} skipped)")]
    EmptyInput { skipped: usize },
    #[error("every document was empty after preprocessing and vocabulary filtering")]
    EmptyCorpus,
    #[error("no documents to slice")]
    NoDocuments,
    #[error("invalid slice boundaries: {0}")]
    Boundaries(String),
    #[error("malformed corpus artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRecord {
    /// 1-based line number in the input.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub documents: Vec<RawDocument>,
    pub skipped: Vec<SkippedRecord>,
}

#[derive(Deserialize)]
struct JsonRecord {
    id: Option<serde_json::Value>,
    timestamp: Option<String>,
    text: Option<String>,
    source: Option<String>,
}

/// Parses JSONL records. Malformed records, records without a timestamp or
/// text, and records repeating an earlier id are skipped and reported.
pub fn ingest<R: Read>(reader: R) -> Result<IngestReport, CorpusError> {
    let mut documents = Vec::new();
    let mut skipped = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut skip = |reason: String| {
            skipped.push(SkippedRecord {
                line: lineno,
                reason,
            })
        };
        let record: JsonRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                skip(format!("invalid json: {e}"));
                continue;
            }
        };
        let id = match record.id {
            Some(serde_json::Value::String(s)) if !s.is_empty() => s,
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => {
                skip("missing id".into());
                continue;
            }
        };
        let Some(ts) = record.timestamp else {
            skip(format!("record {id}: missing timestamp"));
            continue;
        };
        let timestamp = match DateTime::parse_from_rfc3339(ts.trim()) {
            Ok(t) => t.with_timezone(&Utc),
            Err(e) => {
                skip(format!("record {id}: bad timestamp {ts:?}: {e}"));
                continue;
            }
        };
        let Some(text) = record.text else {
            skip(format!("record {id}: missing text"));
            continue;
        };
        if !seen.insert(id.clone()) {
            skip(format!("record {id}: duplicate id"));
            continue;
        }
        documents.push(RawDocument {
            id,
            timestamp,
            text,
            source: record.source,
        });
    }
    if documents.is_empty() {
        return Err(CorpusError::EmptyInput {
            skipped: skipped.len(),
        });
    }
    Ok(IngestReport { documents, skipped })
}

pub fn ingest_path(path: &Path) -> Result<IngestReport, CorpusError> {
    ingest(File::open(path)?)
}

/// Writes documents in the format [`ingest`] reads.
pub fn write_jsonl<W: Write>(docs: &[RawDocument], w: W) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(w);
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// One term per line; blank lines and `#` comments are ignored.
pub fn load_stopwords(path: &Path) -> Result<HashSet<String>, CorpusError> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect())
}

/// `surface<TAB>lemma` per line.
pub fn load_lemmas(path: &Path) -> Result<HashMap<String, String>, CorpusError> {
    let text = fs::read_to_string(path)?;
    let mut table = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((surface, lemma)) = line.split_once('\t') else {
            return Err(CorpusError::Artifact(format!(
                "lemma table line {}: expected surface<TAB>lemma",
                i + 1
            )));
        };
        table.insert(surface.trim().to_lowercase(), lemma.trim().to_lowercase());
    }
    Ok(table)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub lowercase: bool,
    pub strip_numbers: bool,
    pub strip_punctuation: bool,
    #[serde(default)]
    pub stopwords: HashSet<String>,
    #[serde(default)]
    pub lemmas: HashMap<String, String>,
    /// Split each text on blank lines into separate documents.
    pub split_paragraphs: bool,
    /// Paragraphs shorter than this (in characters, before preprocessing) are dropped.
    pub min_paragraph_chars: usize,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_numbers: true,
            strip_punctuation: true,
            stopwords: HashSet::new(),
            lemmas: HashMap::new(),
            split_paragraphs: false,
            min_paragraph_chars: 20,
        }
    }
}

/// A document after preprocessing. The original text is kept for evidence
/// lookups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    pub text: String,
    pub tokens: Vec<String>,
}

pub fn tokenize(text: &str, opts: &PreprocessOptions) -> Vec<String> {
    let cleaned: String = if opts.strip_punctuation {
        text.chars()
            .map(|c| {
                if c.is_alphanumeric() || c == '_' || c.is_whitespace() {
                    c
                } else {
                    ' '
                }
            })
            .collect()
    } else {
        text.to_string()
    };
    cleaned
        .split_whitespace()
        .map(|t| {
            if opts.lowercase {
                t.to_lowercase()
            } else {
                t.to_string()
            }
        })
        .filter(|t| !(opts.strip_numbers && t.chars().all(|c| c.is_numeric() || c == '_')))
        .filter(|t| !opts.stopwords.contains(t))
        .map(|t| opts.lemmas.get(&t).cloned().unwrap_or(t))
        .filter(|t| !opts.stopwords.contains(t))
        .collect()
}

/// Applies casing, number and punctuation removal, stopword filtering and
/// table lemmatization. With paragraph splitting enabled, each paragraph
/// becomes its own document with id `{id}#p{n}`.
pub fn preprocess(docs: &[RawDocument], opts: &PreprocessOptions) -> Vec<Document> {
    let mut out = Vec::with_capacity(docs.len());
    for doc in docs {
        if opts.split_paragraphs {
            let paragraphs = split_paragraphs(&doc.text);
            let mut n = 0;
            for para in paragraphs {
                if para.chars().count() < opts.min_paragraph_chars {
                    continue;
                }
                out.push(Document {
                    id: format!("{}#p{}", doc.id, n),
                    timestamp: doc.timestamp,
                    text: para.to_string(),
                    tokens: tokenize(para, opts),
                });
                n += 1;
            }
        } else {
            out.push(Document {
                id: doc.id.clone(),
                timestamp: doc.timestamp,
                text: doc.text.clone(),
                tokens: tokenize(&doc.text, opts),
            });
        }
    }
    out
}

fn split_paragraphs(text: &str) -> Vec<&str> {
    let mut paragraphs = Vec::new();
    let mut start: Option<usize> = None;
    let mut end = 0;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            if let Some(s) = start.take() {
                paragraphs.push(text[s..end].trim());
            }
        } else {
            if start.is_none() {
                start = Some(offset);
            }
            end = offset + line.len();
        }
        offset += line.len();
    }
    if let Some(s) = start {
        paragraphs.push(text[s..end].trim());
    }
    paragraphs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalendarUnit {
    Day,
    Month,
    Year,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Calendar(CalendarUnit),
    /// `n + 1` ascending edges defining `n` half-open slices.
    Boundaries(Vec<DateTime<Utc>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl TimeInterval {
    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t < self.end
    }

    pub fn label(&self, unit: Option<CalendarUnit>) -> String {
        match unit {
            Some(CalendarUnit::Year) => self.start.format("%Y").to_string(),
            Some(CalendarUnit::Month) => self.start.format("%Y-%m").to_string(),
            _ => self.start.format("%Y-%m-%d").to_string(),
        }
    }
}

/// Global vocabulary ordered by descending corpus frequency, ties broken
/// lexicographically. Term ids are positions in this order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr")]
pub struct Vocabulary {
    terms: Vec<String>,
    counts: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

#[derive(Deserialize)]
struct VocabularyRepr {
    terms: Vec<String>,
    counts: Vec<u64>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        let mut v = Self {
            terms: r.terms,
            counts: r.counts,
            index: HashMap::new(),
        };
        v.rebuild_index();
        v
    }
}

impl Vocabulary {
    pub fn from_counts(counts: impl IntoIterator<Item = (String, u64)>) -> Self {
        let mut entries: Vec<(String, u64)> = counts.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let (terms, counts): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let mut v = Self {
            terms,
            counts,
            index: HashMap::new(),
        };
        v.rebuild_index();
        v
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: u32) -> &str {
        &self.terms[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceDocument {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    /// Global term ids.
    pub tokens: Vec<u32>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSlice {
    pub index: usize,
    pub interval: TimeInterval,
    pub documents: Vec<SliceDocument>,
    /// Sorted global ids of terms occurring in this slice.
    pub local_vocab: Vec<u32>,
}

impl CorpusSlice {
    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Occurrence count of each local term, aligned with `local_vocab`.
    pub fn local_counts(&self) -> Vec<u64> {
        let mut counts: HashMap<u32, u64> = HashMap::new();
        for d in &self.documents {
            for &t in &d.tokens {
                *counts.entry(t).or_default() += 1;
            }
        }
        self.local_vocab.iter().map(|t| counts[t]).collect()
    }
}

/// Record of what was done to produce a corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessManifest {
    pub steps: Vec<String>,
    pub min_count: u64,
    pub granularity: Option<CalendarUnit>,
    pub input_documents: usize,
    pub empty_documents_dropped: usize,
    pub out_of_range_dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSlicedCorpus {
    pub slices: Vec<CorpusSlice>,
    pub vocabulary: Vocabulary,
    pub manifest: PreprocessManifest,
}

impl TimeSlicedCorpus {
    pub fn slice_boundaries(&self) -> Vec<TimeInterval> {
        self.slices.iter().map(|s| s.interval).collect()
    }

    pub fn num_documents(&self) -> usize {
        self.slices.iter().map(|s| s.documents.len()).sum()
    }

    pub fn documents(&self) -> impl Iterator<Item = &SliceDocument> {
        self.slices.iter().flat_map(|s| s.documents.iter())
    }

    pub fn slice_label(&self, index: usize) -> String {
        self.slices[index].interval.label(self.manifest.granularity)
    }
}

fn floor_to(t: DateTime<Utc>, unit: CalendarUnit) -> DateTime<Utc> {
    let d = t.date_naive();
    let date = match unit {
        CalendarUnit::Day => d,
        CalendarUnit::Month => NaiveDate::from_ymd_opt(d.year(), d.month(), 1).unwrap(),
        CalendarUnit::Year => NaiveDate::from_ymd_opt(d.year(), 1, 1).unwrap(),
    };
    Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).unwrap())
}

fn advance(t: DateTime<Utc>, unit: CalendarUnit) -> DateTime<Utc> {
    let d = t.date_naive();
    let next = match unit {
        CalendarUnit::Day => d.succ_opt().unwrap(),
        CalendarUnit::Month => {
            if d.month() == 12 {
                NaiveDate::from_ymd_opt(d.year() + 1, 1, 1).unwrap()
            } else {
                NaiveDate::from_ymd_opt(d.year(), d.month() + 1, 1).unwrap()
            }
        }
        CalendarUnit::Year => NaiveDate::from_ymd_opt(d.year() + 1, 1, 1).unwrap(),
    };
    Utc.from_utc_datetime(&next.and_hms_opt(0, 0, 0).unwrap())
}

/// Calendar intervals covering `[first, last]`, including empty periods.
pub fn calendar_intervals(
    first: DateTime<Utc>,
    last: DateTime<Utc>,
    unit: CalendarUnit,
) -> Vec<TimeInterval> {
    let mut out = Vec::new();
    let mut start = floor_to(first, unit);
    while start <= last {
        let end = advance(start, unit);
        out.push(TimeInterval { start, end });
        start = end;
    }
    out
}

/// Partitions documents into time slices and builds the global vocabulary.
///
/// Terms occurring fewer than `min_count` times across the corpus are removed
/// from every document. Documents left without tokens are dropped and counted
/// in the manifest; slices may end up empty and are kept so indices stay
/// aligned to the calendar.
pub fn slice(
    docs: &[Document],
    granularity: &Granularity,
    min_count: u64,
) -> Result<TimeSlicedCorpus, CorpusError> {
    if docs.is_empty() {
        return Err(CorpusError::NoDocuments);
    }
    let (intervals, unit) = match granularity {
        Granularity::Calendar(unit) => {
            let first = docs.iter().map(|d| d.timestamp).min().unwrap();
            let last = docs.iter().map(|d| d.timestamp).max().unwrap();
            (calendar_intervals(first, last, *unit), Some(*unit))
        }
        Granularity::Boundaries(edges) => {
            if edges.len() < 2 {
                return Err(CorpusError::Boundaries("need at least two edges".into()));
            }
            if edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(CorpusError::Boundaries(
                    "edges must be strictly ascending".into(),
                ));
            }
            let iv = edges
                .windows(2)
                .map(|w| TimeInterval {
                    start: w[0],
                    end: w[1],
                })
                .collect();
            (iv, None)
        }
    };

    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for d in docs {
        for t in &d.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let vocabulary = Vocabulary::from_counts(
        counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .map(|(t, c)| (t.to_string(), c)),
    );

    let mut per_slice: Vec<Vec<SliceDocument>> = vec![Vec::new(); intervals.len()];
    let mut empty = 0;
    let mut out_of_range = 0;
    // Stable chronological order inside each slice; ties keep input order.
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.sort_by_key(|&i| docs[i].timestamp);
    for i in order {
        let d = &docs[i];
        let tokens: Vec<u32> = d.tokens.iter().filter_map(|t| vocabulary.id(t)).collect();
        if tokens.is_empty() {
            empty += 1;
            continue;
        }
        let Some(slot) = intervals.iter().position(|iv| iv.contains(d.timestamp)) else {
            out_of_range += 1;
            continue;
        };
        per_slice[slot].push(SliceDocument {
            id: d.id.clone(),
            timestamp: d.timestamp,
            tokens,
            text: d.text.clone(),
        });
    }
    if per_slice.iter().all(Vec::is_empty) {
        return Err(CorpusError::EmptyCorpus);
    }

    // The surviving vocabulary may include terms only seen in dropped
    // documents; rebuild so closure holds against what was kept.
    let mut kept: BTreeMap<String, u64> = BTreeMap::new();
    for d in per_slice.iter().flatten() {
        for &t in &d.tokens {
            *kept.entry(vocabulary.term(t).to_string()).or_default() += 1;
        }
    }
    let final_vocab = Vocabulary::from_counts(kept.into_iter());
    let remap: Vec<Option<u32>> = vocabulary
        .terms()
        .iter()
        .map(|t| final_vocab.id(t))
        .collect();

    let slices = per_slice
        .into_iter()
        .zip(intervals)
        .enumerate()
        .map(|(index, (mut documents, interval))| {
            let mut local = HashSet::new();
            for d in &mut documents {
                for t in &mut d.tokens {
                    *t = remap[*t as usize].expect("kept token has a final id");
                    local.insert(*t);
                }
            }
            let mut local_vocab: Vec<u32> = local.into_iter().collect();
            local_vocab.sort_unstable();
            CorpusSlice {
                index,
                interval,
                documents,
                local_vocab,
            }
        })
        .collect();

    Ok(TimeSlicedCorpus {
        slices,
        vocabulary: final_vocab,
        manifest: PreprocessManifest {
            steps: vec![
                "tokenize".into(),
                format!("min_count>={min_count}"),
                "slice".into(),
            ],
            min_count,
            granularity: unit,
            input_documents: docs.len(),
            empty_documents_dropped: empty,
            out_of_range_dropped: out_of_range,
        },
    })
}

#[derive(Serialize, Deserialize)]
struct CorpusManifestFile {
    format: String,
    manifest: PreprocessManifest,
    slices: Vec<SliceEntry>,
    vocabulary: Vec<(String, u64)>,
}

#[derive(Serialize, Deserialize)]
struct SliceEntry {
    index: usize,
    start: DateTime<Utc>,
    end: DateTime<Utc>,
    documents: usize,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct DocLine<'a> {
    id: std::borrow::Cow<'a, str>,
    timestamp: DateTime<Utc>,
    tokens: Vec<std::borrow::Cow<'a, str>>,
    text: std::borrow::Cow<'a, str>,
}

const CORPUS_FORMAT: &str = "ttec-corpus/1";

impl TimeSlicedCorpus {
    /// Writes `manifest.json` plus one `slice_NNNN.jsonl` token file per slice.
    /// Output is byte-identical for identical corpora.
    pub fn save(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for s in &self.slices {
            let file = format!("slice_{:04}.jsonl", s.index);
            let mut w = BufWriter::new(File::create(dir.join(&file))?);
            for d in &s.documents {
                let line = DocLine {
                    id: d.id.as_str().into(),
                    timestamp: d.timestamp,
                    tokens: d
                        .tokens
                        .iter()
                        .map(|&t| self.vocabulary.term(t).into())
                        .collect(),
                    text: d.text.as_str().into(),
                };
                serde_json::to_writer(&mut w, &line)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            entries.push(SliceEntry {
                index: s.index,
                start: s.interval.start,
                end: s.interval.end,
                documents: s.documents.len(),
                file,
            });
        }
        let manifest = CorpusManifestFile {
            format: CORPUS_FORMAT.into(),
            manifest: self.manifest.clone(),
            slices: entries,
            vocabulary: self
                .vocabulary
                .terms()
                .iter()
                .cloned()
                .zip(self.vocabulary.counts().iter().copied())
                .collect(),
        };
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_vec_pretty(&manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let manifest: CorpusManifestFile =
            serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        if manifest.format != CORPUS_FORMAT {
            return Err(CorpusError::Artifact(format!(
                "unsupported corpus format {}",
                manifest.format
            )));
        }
        // Stored order is already canonical.
        let mut vocabulary = Vocabulary::default();
        for (t, c) in manifest.vocabulary {
            vocabulary.terms.push(t);
            vocabulary.counts.push(c);
        }
        vocabulary.rebuild_index();
        let mut slices = Vec::with_capacity(manifest.slices.len());
        for entry in manifest.slices {
            let reader = BufReader::new(File::open(dir.join(&entry.file))?);
            let mut documents = Vec::with_capacity(entry.documents);
            let mut local = HashSet::new();
            for line in reader.lines() {
                let line = line?;
                if line.is_empty() {
                    continue;
                }
                let d: DocLine = serde_json::from_str(&line)?;
                let tokens = d
                    .tokens
                    .iter()
                    .map(|t| {
                        vocabulary.id(t).ok_or_else(|| {
                            CorpusError::Artifact(format!("token {t:?} not in vocabulary"))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                local.extend(tokens.iter().copied());
                documents.push(SliceDocument {
                    id: d.id.into_owned(),
                    timestamp: d.timestamp,
                    tokens,
                    text: d.text.into_owned(),
                });
            }
            let mut local_vocab: Vec<u32> = local.into_iter().collect();
            local_vocab.sort_unstable();
            slices.push(CorpusSlice {
                index: entry.index,
                interval: TimeInterval {
                    start: entry.start,
                    end: entry.end,
                },
                documents,
                local_vocab,
            });
        }
        Ok(Self {
            slices,
            vocabulary,
            manifest: manifest.manifest,
        })
    }
}
