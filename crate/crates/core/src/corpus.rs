//! Corpus and synonym-dictionary loading, span enumeration and vocabularies.
//!
//! Corpus files hold one sentence per line:
//!
//! ```json
//! {"doc_id": "d1", "tokens": ["renal", "failure"], "entities": [{"start": 0, "end": 1, "type": "Disease"}]}
//! ```
//!
//! Offsets are token indices, `end` inclusive.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentence length cap used when a loader is not given one.
pub const DEFAULT_MAX_SENTENCE_LENGTH: usize = 512;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldEntity {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub label: String,
    /// Whitespace-tokenized synonyms of the surface form, empty on a dictionary miss.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub synonyms: Vec<Vec<String>>,
}

impl GoldEntity {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub doc_id: String,
    /// Position of this sentence among the sentences of the same document.
    pub ordinal: usize,
    pub tokens: Vec<String>,
    pub entities: Vec<GoldEntity>,
}

impl Sentence {
    pub fn surface(&self, start: usize, end: usize) -> String {
        self.tokens[start..=end].join(" ")
    }

    pub fn span_tokens(&self, start: usize, end: usize) -> &[String] {
        &self.tokens[start..=end]
    }
}

/// A candidate span with its multi-hot gold label over the type inventory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanCandidate {
    pub start: usize,
    pub end: usize,
    pub label: Vec<bool>,
}

impl SpanCandidate {
    pub fn is_entity(&self) -> bool {
        self.label.iter().any(|&b| b)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub records: usize,
    pub split_records: usize,
    pub dropped_entities: usize,
}

#[derive(Deserialize)]
struct EntityRecord {
    start: i64,
    end: i64,
    #[serde(rename = "type")]
    label: String,
}

#[derive(Deserialize)]
struct SentenceRecord {
    doc_id: String,
    tokens: Vec<String>,
    #[serde(default)]
    entities: Vec<EntityRecord>,
}

/// Loads a line-delimited corpus file. Sentences longer than
/// `max_sentence_length` are split at the limit; entities crossing a cut are
/// dropped and reported in the returned stats.
pub fn load_corpus(
    path: impl AsRef<Path>,
    max_sentence_length: usize,
) -> Result<(Vec<Sentence>, LoadStats)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_corpus(&text, &path.display().to_string(), max_sentence_length)
}

pub fn parse_corpus(
    text: &str,
    origin: &str,
    max_sentence_length: usize,
) -> Result<(Vec<Sentence>, LoadStats)> {
    if max_sentence_length == 0 {
        return Err(Error::Config(
            "max_sentence_length must be at least 1".into(),
        ));
    }
    let mut out = Vec::new();
    let mut stats = LoadStats::default();
    let mut ordinals: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SentenceRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: line_no,
            msg: e.to_string(),
        })?;
        stats.records += 1;
        let n = rec.tokens.len() as i64;
        let mut seen = BTreeSet::new();
        let mut entities = Vec::with_capacity(rec.entities.len());
        for e in rec.entities {
            if e.start < 0 || e.start > e.end || e.end >= n {
                return Err(Error::InvalidOffsets {
                    doc_id: rec.doc_id,
                    msg: format!(
                        "line {line_no}: entity ({}, {}) invalid for {n} tokens",
                        e.start, e.end
                    ),
                });
            }
            let (start, end) = (e.start as usize, e.end as usize);
            if !seen.insert((start, end, e.label.clone())) {
                return Err(Error::InvalidOffsets {
                    doc_id: rec.doc_id,
                    msg: format!(
                        "line {line_no}: duplicate entity ({start}, {end}, {})",
                        e.label
                    ),
                });
            }
            entities.push(GoldEntity {
                start,
                end,
                label: e.label,
                synonyms: Vec::new(),
            });
        }

        let chunks = if rec.tokens.len() > max_sentence_length {
            stats.split_records += 1;
            rec.tokens.len().div_ceil(max_sentence_length)
        } else {
            1
        };
        for c in 0..chunks {
            let lo = c * max_sentence_length;
            let hi = ((c + 1) * max_sentence_length).min(rec.tokens.len());
            let ents = entities
                .iter()
                .filter(|e| e.start >= lo && e.end < hi)
                .map(|e| GoldEntity {
                    start: e.start - lo,
                    end: e.end - lo,
                    ..e.clone()
                })
                .collect();
            let ord = ordinals.entry(rec.doc_id.clone()).or_insert(0);
            out.push(Sentence {
                doc_id: rec.doc_id.clone(),
                ordinal: *ord,
                tokens: rec
                    .tokens
                    .get(lo..hi)
                    .map(<[String]>::to_vec)
                    .unwrap_or_default(),
                entities: ents,
            });
            *ord += 1;
        }
        if chunks > 1 {
            let kept: usize = out[out.len() - chunks..]
                .iter()
                .map(|s| s.entities.len())
                .sum();
            stats.dropped_entities += entities.len() - kept;
        }
    }
    if stats.dropped_entities > 0 {
        log::warn!(
            "{origin}: {} entities crossed a sentence split at {max_sentence_length} tokens and were dropped",
            stats.dropped_entities
        );
    }
    Ok((out, stats))
}

/// Writes sentences back in the corpus line format (synonyms are not persisted).
pub fn write_corpus(path: impl AsRef<Path>, corpus: &[Sentence]) -> Result<()> {
    #[derive(Serialize)]
    struct Ent<'a> {
        start: usize,
        end: usize,
        #[serde(rename = "type")]
        label: &'a str,
    }
    #[derive(Serialize)]
    struct Rec<'a> {
        doc_id: &'a str,
        tokens: &'a [String],
        entities: Vec<Ent<'a>>,
    }
    let mut text = String::new();
    for s in corpus {
        let rec = Rec {
            doc_id: &s.doc_id,
            tokens: &s.tokens,
            entities: s
                .entities
                .iter()
                .map(|e| Ent {
                    start: e.start,
                    end: e.end,
                    label: &e.label,
                })
                .collect(),
        };
        text.push_str(&serde_json::to_string(&rec)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Sorted inventory of entity type names; the id of a type is its index.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityTypes {
    names: Vec<String>,
}

impl EntityTypes {
    pub fn from_corpus(corpus: &[Sentence]) -> Self {
        let set: BTreeSet<&str> = corpus
            .iter()
            .flat_map(|s| s.entities.iter().map(|e| e.label.as_str()))
            .collect();
        EntityTypes {
            names: set.into_iter().map(str::to_string).collect(),
        }
    }

    pub fn from_names(names: impl IntoIterator<Item = impl Into<String>>) -> Self {
        let set: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        EntityTypes {
            names: set.into_iter().collect(),
        }
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Fails if `corpus` uses a type outside this inventory.
    pub fn check(&self, corpus: &[Sentence]) -> Result<()> {
        for s in corpus {
            for e in &s.entities {
                if self.id(&e.label).is_none() {
                    return Err(Error::Data(format!(
                        "document `{}` uses entity type `{}` not in the model inventory {:?}",
                        s.doc_id, e.label, self.names
                    )));
                }
            }
        }
        Ok(())
    }
}

/// All spans of at most `max_span_len` tokens in lexicographic (start, end)
/// order, labeled by exact offset match against the gold entities. Gold
/// types missing from `types` are ignored.
pub fn enumerate_spans(
    sentence: &Sentence,
    max_span_len: usize,
    types: &EntityTypes,
) -> Vec<SpanCandidate> {
    let n = sentence.tokens.len();
    let mut gold: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for e in &sentence.entities {
        if let Some(t) = types.id(&e.label) {
            gold.entry((e.start, e.end)).or_default().push(t);
        }
    }
    let mut out = Vec::with_capacity(n * max_span_len.min(n));
    for start in 0..n {
        for end in start..n.min(start + max_span_len) {
            let mut label = vec![false; types.len()];
            if let Some(ts) = gold.get(&(start, end)) {
                for &t in ts {
                    label[t] = true;
                }
            }
            out.push(SpanCandidate { start, end, label });
        }
    }
    out
}

/// Lowercased surface form → synonyms, in file order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymDictionary {
    entries: BTreeMap<String, Vec<String>>,
}

impl SynonymDictionary {
    pub fn get(&self, surface: &str) -> Option<&[String]> {
        self.entries.get(&surface.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn insert(&mut self, surface: &str, synonym: &str) {
        let key = surface.to_lowercase();
        if synonym.to_lowercase() == key || synonym.trim().is_empty() {
            return;
        }
        let list = self.entries.entry(key).or_default();
        if !list.iter().any(|s| s == synonym) {
            list.push(synonym.to_string());
        }
    }
}

pub fn load_synonym_dict(path: impl AsRef<Path>) -> Result<SynonymDictionary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_synonym_dict(&text, &path.display().to_string())
}

pub fn parse_synonym_dict(text: &str, origin: &str) -> Result<SynonymDictionary> {
    let mut dict = SynonymDictionary::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (surface, synonym) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg: "expected `surface<TAB>synonym`".into(),
        })?;
        dict.insert(surface.trim(), synonym.trim());
    }
    Ok(dict)
}

/// Writes one `surface<TAB>synonym` line per pair.
pub fn write_synonym_dict(path: impl AsRef<Path>, dict: &SynonymDictionary) -> Result<()> {
    let mut out = String::new();
    for (surface, syns) in dict.iter() {
        for s in syns {
            out.push_str(&format!("{surface}\t{s}\n"));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Share of gold entities whose surface form has dictionary synonyms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SynonymCoverage {
    pub hits: usize,
    pub total: usize,
}

impl SynonymCoverage {
    /// Percentage in `[0, 100]`; zero for a corpus without entities.
    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.hits as f64 / self.total as f64
        }
    }
}

/// Fills `GoldEntity::synonyms` by lowercase exact match of each surface form.
pub fn attach_synonyms(corpus: &mut [Sentence], dict: &SynonymDictionary) -> SynonymCoverage {
    let mut cov = SynonymCoverage::default();
    for s in corpus.iter_mut() {
        for i in 0..s.entities.len() {
            let surface = s.surface(s.entities[i].start, s.entities[i].end);
            let e = &mut s.entities[i];
            cov.total += 1;
            e.synonyms = match dict.get(&surface) {
                Some(list) => {
                    cov.hits += 1;
                    list.iter()
                        .map(|syn| {
                            syn.split_whitespace()
                                .map(str::to_string)
                                .collect::<Vec<_>>()
                        })
                        .filter(|toks| !toks.is_empty())
                        .collect()
                }
                None => Vec::new(),
            };
        }
    }
    cov
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const START: usize = 2;
pub const END: usize = 3;
const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Token ↔ id map with fixed reserved ids for PAD, UNK, START and END.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let mut v = Vocabulary {
            tokens: all,
            index: HashMap::new(),
        };
        v.reindex();
        v
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }
}

/// Tokens (including synonym tokens) seen at least `min_freq` times, sorted.
pub fn build_vocab(corpus: &[Sentence], min_freq: usize) -> Result<Vocabulary> {
    if min_freq == 0 {
        return Err(Error::Config("min_freq must be at least 1".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in corpus {
        for t in &s.tokens {
            *counts.entry(t).or_default() += 1;
        }
        for e in &s.entities {
            for syn in &e.synonyms {
                for t in syn {
                    *counts.entry(t).or_default() += 1;
                }
            }
        }
    }
    let kept = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && !RESERVED.contains(t))
        .map(|(t, _)| t.to_string());
    Ok(Vocabulary::from_tokens(kept))
}
