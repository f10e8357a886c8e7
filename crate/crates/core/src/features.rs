//! Input-layer features for mention pairs and single mentions.
//!
//! A pair input is laid out as
//! `[antecedent embeddings, antecedent mention features, anaphor embeddings,
//! anaphor mention features, genre, distance, speaker, matching]`; the
//! anaphoricity input drops the antecedent and pair segments. Disabled groups
//! are left out of the layout entirely.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, EmbeddingLexicon, Mention, MentionType};
use crate::error::{CorefError, Result};

pub const NUM_BUCKETS: usize = 10;
/// Single-word slots followed by averaged slots.
pub const EMBEDDING_SLOTS: usize = 13;
pub const MENTION_FEATURES: usize = 4 + 1 + 1 + NUM_BUCKETS + 1;
pub const DISTANCE_FEATURES: usize = 2 * (NUM_BUCKETS + 1) + 1;
pub const SPEAKER_FEATURES: usize = 2;
pub const MATCHING_FEATURES: usize = 3;

const DETERMINERS: [&str; 7] = ["the", "a", "an", "this", "that", "these", "those"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Mention,
    Genre,
    Distance,
    Speaker,
    Matching,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 5] = [
        FeatureGroup::Mention,
        FeatureGroup::Genre,
        FeatureGroup::Distance,
        FeatureGroup::Speaker,
        FeatureGroup::Matching,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::Mention => "mention",
            FeatureGroup::Genre => "genre",
            FeatureGroup::Distance => "distance",
            FeatureGroup::Speaker => "speaker",
            FeatureGroup::Matching => "matching",
        }
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureGroup {
    type Err = CorefError;

    fn from_str(s: &str) -> Result<Self> {
        FeatureGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = FeatureGroup::ALL.iter().map(|g| g.name()).collect();
                CorefError::Config(format!(
                    "unknown feature group {s:?}; valid groups are {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub genre_vocabulary: Vec<String>,
    pub enabled_groups: BTreeSet<FeatureGroup>,
    pub embedding_dim: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            genre_vocabulary: ["bc", "bn", "mz", "nw", "pt", "tc", "wb"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            enabled_groups: FeatureGroup::ALL.into_iter().collect(),
            embedding_dim: 50,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.genre_vocabulary.is_empty() {
            return Err(CorefError::Config("genre vocabulary is empty".into()));
        }
        let unique: BTreeSet<_> = self.genre_vocabulary.iter().collect();
        if unique.len() != self.genre_vocabulary.len() {
            return Err(CorefError::Config("genre vocabulary has duplicates".into()));
        }
        if self.embedding_dim == 0 {
            return Err(CorefError::Config("embedding_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn enabled(&self, g: FeatureGroup) -> bool {
        self.enabled_groups.contains(&g)
    }

    pub fn without(&self, g: FeatureGroup) -> Self {
        let mut c = self.clone();
        c.enabled_groups.remove(&g);
        c
    }

    fn genre_index(&self, genre: &str) -> Result<usize> {
        self.genre_vocabulary
            .iter()
            .position(|g| g == genre)
            .ok_or_else(|| CorefError::UnknownGenre(genre.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BucketEncoding {
    pub index: usize,
    pub raw: usize,
}

impl BucketEncoding {
    pub fn one_hot(&self) -> [f64; NUM_BUCKETS] {
        let mut v = [0.0; NUM_BUCKETS];
        v[self.index] = 1.0;
        v
    }

    fn push_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.one_hot());
        out.push(self.raw as f64);
    }
}

/// Buckets `[0, 1, 2, 3, 4, 5-7, 8-15, 16-31, 32-63, 64+]`.
pub fn bucket(n: usize) -> BucketEncoding {
    let index = match n {
        0..=4 => n,
        5..=7 => 5,
        8..=15 => 6,
        16..=31 => 7,
        32..=63 => 8,
        _ => 9,
    };
    BucketEncoding { index, raw: n }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
}

/// Ordered segment descriptor for an input vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub segments: Vec<Segment>,
}

impl Layout {
    fn build(parts: Vec<(&'static str, usize)>) -> Self {
        let mut offset = 0;
        let segments = parts
            .into_iter()
            .map(|(name, len)| {
                let s = Segment { name, offset, len };
                offset += len;
                s
            })
            .collect();
        Layout { segments }
    }

    fn parts(cfg: &FeatureConfig, pair: bool) -> Vec<(&'static str, usize)> {
        let emb = EMBEDDING_SLOTS * cfg.embedding_dim;
        let mention = cfg.enabled(FeatureGroup::Mention);
        let mut parts = Vec::new();
        if pair {
            parts.push(("antecedent_embeddings", emb));
            if mention {
                parts.push(("antecedent_mention", MENTION_FEATURES));
            }
        }
        parts.push(("anaphor_embeddings", emb));
        if mention {
            parts.push(("anaphor_mention", MENTION_FEATURES));
        }
        if cfg.enabled(FeatureGroup::Genre) {
            parts.push(("genre", cfg.genre_vocabulary.len()));
        }
        if pair {
            if cfg.enabled(FeatureGroup::Distance) {
                parts.push(("distance", DISTANCE_FEATURES));
            }
            if cfg.enabled(FeatureGroup::Speaker) {
                parts.push(("speaker", SPEAKER_FEATURES));
            }
            if cfg.enabled(FeatureGroup::Matching) {
                parts.push(("matching", MATCHING_FEATURES));
            }
        }
        parts
    }

    pub fn pair(cfg: &FeatureConfig) -> Self {
        Layout::build(Layout::parts(cfg, true))
    }

    pub fn anaphoricity(cfg: &FeatureConfig) -> Self {
        Layout::build(Layout::parts(cfg, false))
    }

    pub fn dim(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Per-coordinate flag marking word-embedding inputs.
    pub fn embedding_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.dim()];
        for s in self.segments.iter().filter(|s| s.name.ends_with("_embeddings")) {
            mask[s.offset..s.offset + s.len].fill(true);
        }
        mask
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InputVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

fn average_into(out: &mut Vec<f64>, lex: &EmbeddingLexicon, words: &[&String]) {
    let d = lex.dim();
    let start = out.len();
    out.resize(start + d, 0.0);
    if words.is_empty() {
        return;
    }
    for w in words {
        for (o, v) in out[start..].iter_mut().zip(lex.lookup(w)) {
            *o += v;
        }
    }
    let n = words.len() as f64;
    out[start..].iter_mut().for_each(|o| *o /= n);
}

/// Head, parent, first, last, two preceding and two following words, then
/// averages over five preceding words, five following words, the mention, its
/// sentence, and the document. Context stays inside the sentence.
pub fn mention_embedding_features(doc: &Document, m: &Mention, lex: &EmbeddingLexicon) -> Vec<f64> {
    let d = lex.dim();
    let sent = &doc.sentences[m.sentence_index];
    let mut out = Vec::with_capacity(EMBEDDING_SLOTS * d);
    let word = |i: Option<usize>| -> Option<&String> { i.and_then(|i| sent.get(i)) };
    let singles = [
        Some(m.head_index),
        m.dep_parent_index,
        Some(m.start),
        Some(m.end - 1),
        m.start.checked_sub(1),
        m.start.checked_sub(2),
        Some(m.end),
        Some(m.end + 1),
    ];
    for idx in singles {
        match word(idx) {
            Some(w) => out.extend_from_slice(lex.lookup(w)),
            None => out.resize(out.len() + d, 0.0),
        }
    }
    let before: Vec<&String> = sent[m.start.saturating_sub(5)..m.start].iter().collect();
    let after: Vec<&String> = sent[m.end..(m.end + 5).min(sent.len())].iter().collect();
    let inside: Vec<&String> = sent[m.start..m.end].iter().collect();
    let sentence: Vec<&String> = sent.iter().collect();
    let document: Vec<&String> = doc.all_tokens().collect();
    for group in [&before, &after, &inside, &sentence, &document] {
        average_into(&mut out, lex, group);
    }
    out
}

fn contained_in_other(doc: &Document, m: &Mention) -> bool {
    doc.mentions.iter().any(|o| {
        o.id != m.id
            && o.sentence_index == m.sentence_index
            && o.start <= m.start
            && m.end <= o.end
            && (o.start, o.end) != (m.start, m.end)
    })
}

/// Type one-hot, position, containment flag, length bucket and raw length.
pub fn mention_scalar_features(doc: &Document, m: &Mention) -> Vec<f64> {
    let mut out = Vec::with_capacity(MENTION_FEATURES);
    let mut ty = [0.0; 4];
    ty[m.mention_type.index()] = 1.0;
    out.extend_from_slice(&ty);
    out.push(m.id as f64 / doc.num_mentions() as f64);
    out.push(if contained_in_other(doc, m) { 1.0 } else { 0.0 });
    bucket(m.len()).push_into(&mut out);
    out
}

fn lowered(doc: &Document, m: &Mention) -> Vec<String> {
    doc.tokens(m).iter().map(|t| t.to_lowercase()).collect()
}

fn contains_run(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && needle.len() <= hay.len() && hay.windows(needle.len()).any(|w| w == needle)
}

pub fn partial_match(a: &[String], b: &[String]) -> bool {
    let strip = |t: &[String]| -> Vec<String> {
        t.iter()
            .map(|w| w.to_lowercase())
            .filter(|w| !DETERMINERS.contains(&w.as_str()))
            .collect()
    };
    let (a, b) = (strip(a), strip(b));
    contains_run(&a, &b) || contains_run(&b, &a)
}

fn is_speaker_of(doc: &Document, named: &Mention, other: &Mention) -> bool {
    matches!(named.mention_type, MentionType::Proper | MentionType::Nominal)
        && doc.head_word(named).to_lowercase() == doc.head_speaker(other).to_lowercase()
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Distance (23), speaker (2), and matching (3) features for `a` preceding `m`.
pub fn pair_scalar_features(doc: &Document, a: &Mention, m: &Mention) -> Vec<f64> {
    let mut out = Vec::with_capacity(DISTANCE_FEATURES + SPEAKER_FEATURES + MATCHING_FEATURES);
    bucket(m.sentence_index - a.sentence_index).push_into(&mut out);
    bucket(m.id - a.id).push_into(&mut out);
    let overlap = a.sentence_index == m.sentence_index && a.start < m.end && m.start < a.end;
    out.push(flag(overlap));

    out.push(flag(doc.head_speaker(a) == doc.head_speaker(m)));
    out.push(flag(is_speaker_of(doc, a, m) || is_speaker_of(doc, m, a)));

    let (la, lm) = (lowered(doc, a), lowered(doc, m));
    out.push(flag(doc.head_word(a).to_lowercase() == doc.head_word(m).to_lowercase()));
    out.push(flag(la == lm));
    out.push(flag(partial_match(doc.tokens(a), doc.tokens(m))));
    out
}

/// Per-mention feature blocks reused across every pair in a document.
struct MentionBlocks {
    embeddings: Vec<Vec<f64>>,
    scalars: Vec<Vec<f64>>,
    genre: Vec<f64>,
}

impl MentionBlocks {
    fn new(doc: &Document, lex: &EmbeddingLexicon, cfg: &FeatureConfig) -> Result<Self> {
        let mut genre = vec![0.0; cfg.genre_vocabulary.len()];
        genre[cfg.genre_index(&doc.genre)?] = 1.0;
        Ok(MentionBlocks {
            embeddings: doc
                .mentions
                .iter()
                .map(|m| mention_embedding_features(doc, m, lex))
                .collect(),
            scalars: doc
                .mentions
                .iter()
                .map(|m| mention_scalar_features(doc, m))
                .collect(),
            genre,
        })
    }

    fn write(
        &self,
        out: &mut Vec<f64>,
        doc: &Document,
        a: Option<usize>,
        m: usize,
        cfg: &FeatureConfig,
    ) {
        let mention = cfg.enabled(FeatureGroup::Mention);
        if let Some(a) = a {
            out.extend_from_slice(&self.embeddings[a]);
            if mention {
                out.extend_from_slice(&self.scalars[a]);
            }
        }
        out.extend_from_slice(&self.embeddings[m]);
        if mention {
            out.extend_from_slice(&self.scalars[m]);
        }
        if cfg.enabled(FeatureGroup::Genre) {
            out.extend_from_slice(&self.genre);
        }
        if let Some(a) = a {
            let pf = pair_scalar_features(doc, &doc.mentions[a], &doc.mentions[m]);
            let (dist, rest) = pf.split_at(DISTANCE_FEATURES);
            let (spk, matching) = rest.split_at(SPEAKER_FEATURES);
            if cfg.enabled(FeatureGroup::Distance) {
                out.extend_from_slice(dist);
            }
            if cfg.enabled(FeatureGroup::Speaker) {
                out.extend_from_slice(spk);
            }
            if cfg.enabled(FeatureGroup::Matching) {
                out.extend_from_slice(matching);
            }
        }
    }
}

/// Builds `h0` for `(a, m)`, or for `(NA, m)` when `a` is `None`.
pub fn assemble_input(
    a: Option<&Mention>,
    m: &Mention,
    doc: &Document,
    lex: &EmbeddingLexicon,
    cfg: &FeatureConfig,
) -> Result<InputVector> {
    let mut genre = vec![0.0; cfg.genre_vocabulary.len()];
    genre[cfg.genre_index(&doc.genre)?] = 1.0;
    let blocks = MentionBlocks {
        embeddings: doc
            .mentions
            .iter()
            .map(|x| {
                if Some(x.id) == a.map(|a| a.id) || x.id == m.id {
                    mention_embedding_features(doc, x, lex)
                } else {
                    Vec::new()
                }
            })
            .collect(),
        scalars: doc
            .mentions
            .iter()
            .map(|x| mention_scalar_features(doc, x))
            .collect(),
        genre,
    };
    let layout = match a {
        Some(_) => Layout::pair(cfg),
        None => Layout::anaphoricity(cfg),
    };
    let mut values = Vec::with_capacity(layout.dim());
    blocks.write(&mut values, doc, a.map(|a| a.id), m.id, cfg);
    debug_assert_eq!(values.len(), layout.dim());
    Ok(InputVector { values, layout })
}

/// Row index of pair `(a, m)`, `a < m`, in the packed lower-triangular order.
pub fn pair_index(a: usize, m: usize) -> usize {
    debug_assert!(a < m);
    m * (m - 1) / 2 + a
}

pub fn num_pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Every pair input and anaphoricity input of one document.
#[derive(Clone, Debug)]
pub struct DocumentFeatures {
    pub num_mentions: usize,
    /// Rows indexed by [`pair_index`].
    pub pairs: Array2<f64>,
    pub anaphoricity: Array2<f64>,
}

impl DocumentFeatures {
    pub fn build(doc: &Document, lex: &EmbeddingLexicon, cfg: &FeatureConfig) -> Result<Self> {
        let n = doc.num_mentions();
        let blocks = MentionBlocks::new(doc, lex, cfg)?;
        let pair_dim = Layout::pair(cfg).dim();
        let na_dim = Layout::anaphoricity(cfg).dim();
        let mut pair_values = Vec::with_capacity(num_pairs(n) * pair_dim);
        for m in 0..n {
            for a in 0..m {
                blocks.write(&mut pair_values, doc, Some(a), m, cfg);
            }
        }
        let mut na_values = Vec::with_capacity(n * na_dim);
        for m in 0..n {
            blocks.write(&mut na_values, doc, None, m, cfg);
        }
        Ok(DocumentFeatures {
            num_mentions: n,
            pairs: Array2::from_shape_vec((num_pairs(n), pair_dim), pair_values)
                .expect("pair layout"),
            anaphoricity: Array2::from_shape_vec((n, na_dim), na_values).expect("na layout"),
        })
    }
}
