//! Documents, mentions, and the word-embedding lexicon.
//!
//! Corpus files hold one JSON document per line. Mentions arrive already
//! extracted: their type, head, and syntactic parent are supplied by whatever
//! produced the file.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{CorefError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MentionType {
    Pronoun,
    Nominal,
    Proper,
    List,
}

impl MentionType {
    pub const ALL: [MentionType; 4] = [
        MentionType::Pronoun,
        MentionType::Nominal,
        MentionType::Proper,
        MentionType::List,
    ];

    pub fn index(self) -> usize {
        match self {
            MentionType::Pronoun => 0,
            MentionType::Nominal => 1,
            MentionType::Proper => 2,
            MentionType::List => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub id: usize,
    pub sentence_index: usize,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub head_index: usize,
    pub dep_parent_index: Option<usize>,
    pub mention_type: MentionType,
    pub gold_cluster_id: Option<u64>,
}

impl Mention {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// On-disk shape of one corpus line.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct DocumentRecord {
    doc_id: String,
    genre: String,
    sentences: Vec<Vec<String>>,
    speakers: Vec<Vec<String>>,
    mentions: Vec<Mention>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub genre: String,
    pub sentences: Vec<Vec<String>>,
    pub speakers: Vec<Vec<String>>,
    pub mentions: Vec<Mention>,
    /// Partition of the mentions that carry a gold cluster id, ordered by first
    /// mention. `None` when no mention carries one.
    pub gold_clusters: Option<Vec<Vec<usize>>>,
}

impl Document {
    /// Builds a document and checks every structural invariant.
    pub fn new(
        doc_id: impl Into<String>,
        genre: impl Into<String>,
        sentences: Vec<Vec<String>>,
        speakers: Vec<Vec<String>>,
        mentions: Vec<Mention>,
    ) -> Result<Self> {
        let mut doc = Document {
            doc_id: doc_id.into(),
            genre: genre.into(),
            sentences,
            speakers,
            mentions,
            gold_clusters: None,
        };
        doc.validate()?;
        doc.gold_clusters = gold_partition(&doc.mentions);
        Ok(doc)
    }

    fn validate(&self) -> Result<()> {
        if self.speakers.len() != self.sentences.len() {
            return Err(CorefError::validation(
                "speakers",
                format!(
                    "{} speaker rows for {} sentences",
                    self.speakers.len(),
                    self.sentences.len()
                ),
            ));
        }
        for (i, (toks, spk)) in self.sentences.iter().zip(&self.speakers).enumerate() {
            if toks.len() != spk.len() {
                return Err(CorefError::validation(
                    format!("speakers[{i}]"),
                    format!("{} speakers for {} tokens", spk.len(), toks.len()),
                ));
            }
        }
        let mut prev: Option<(usize, usize)> = None;
        for (pos, m) in self.mentions.iter().enumerate() {
            let field = |f: &str| format!("mentions[{pos}].{f}");
            if m.id != pos {
                return Err(CorefError::validation(
                    field("id"),
                    format!("ids must be dense and in order, expected {pos}, found {}", m.id),
                ));
            }
            let sentence = self.sentences.get(m.sentence_index).ok_or_else(|| {
                CorefError::validation(field("sentence_index"), "out of range")
            })?;
            if m.start >= m.end || m.end > sentence.len() {
                return Err(CorefError::validation(
                    field("end"),
                    format!(
                        "span [{}, {}) invalid for sentence of length {}",
                        m.start,
                        m.end,
                        sentence.len()
                    ),
                ));
            }
            if m.head_index < m.start || m.head_index >= m.end {
                return Err(CorefError::validation(
                    field("head_index"),
                    "head lies outside the mention span",
                ));
            }
            if let Some(p) = m.dep_parent_index {
                if p >= sentence.len() {
                    return Err(CorefError::validation(
                        field("dep_parent_index"),
                        "parent lies outside the sentence",
                    ));
                }
            }
            let key = (m.sentence_index, m.start);
            if let Some(p) = prev {
                if key < p {
                    return Err(CorefError::validation(
                        field("start"),
                        "mentions are not sorted by (sentence_index, start)",
                    ));
                }
            }
            prev = Some(key);
        }
        Ok(())
    }

    pub fn num_mentions(&self) -> usize {
        self.mentions.len()
    }

    pub fn tokens(&self, m: &Mention) -> &[String] {
        &self.sentences[m.sentence_index][m.start..m.end]
    }

    pub fn head_word(&self, m: &Mention) -> &str {
        &self.sentences[m.sentence_index][m.head_index]
    }

    pub fn head_speaker(&self, m: &Mention) -> &str {
        &self.speakers[m.sentence_index][m.head_index]
    }

    pub fn all_tokens(&self) -> impl Iterator<Item = &String> {
        self.sentences.iter().flatten()
    }

    /// Gold clusters, or an error naming the document when it carries none.
    pub fn require_gold(&self) -> Result<&[Vec<usize>]> {
        self.gold_clusters
            .as_deref()
            .ok_or_else(|| CorefError::MissingGold(self.doc_id.clone()))
    }

    pub fn to_json_line(&self) -> String {
        let record = DocumentRecord {
            doc_id: self.doc_id.clone(),
            genre: self.genre.clone(),
            sentences: self.sentences.clone(),
            speakers: self.speakers.clone(),
            mentions: self.mentions.clone(),
        };
        serde_json::to_string(&record).expect("document serialization cannot fail")
    }

    pub fn from_json_line(line: &str, line_no: usize) -> Result<Self> {
        let rec: DocumentRecord = serde_json::from_str(line).map_err(|e| CorefError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        Document::new(rec.doc_id, rec.genre, rec.sentences, rec.speakers, rec.mentions)
    }
}

fn gold_partition(mentions: &[Mention]) -> Option<Vec<Vec<usize>>> {
    let mut by_id: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for m in mentions {
        if let Some(g) = m.gold_cluster_id {
            by_id.entry(g).or_default().push(m.id);
        }
    }
    if by_id.is_empty() {
        return None;
    }
    let mut clusters: Vec<Vec<usize>> = by_id.into_values().collect();
    clusters.sort_by_key(|c| c[0]);
    Some(clusters)
}

/// Reads a JSON-lines corpus. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorefError::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorefError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        docs.push(Document::from_json_line(&line, i + 1)?);
    }
    Ok(docs)
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CorefError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for doc in docs {
        writeln!(w, "{}", doc.to_json_line()).map_err(|e| CorefError::io(path, e))?;
    }
    w.flush().map_err(|e| CorefError::io(path, e))
}

/// Word vectors keyed by surface string.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingLexicon {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
    zero: Vec<f64>,
}

impl EmbeddingLexicon {
    pub fn new(dim: usize) -> Self {
        EmbeddingLexicon {
            dim,
            table: HashMap::new(),
            zero: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Inserts a vector, replacing any previous entry. Returns true on replace.
    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(CorefError::validation(
                "embedding",
                format!("vector of length {} in a {}-dim lexicon", vector.len(), self.dim),
            ));
        }
        Ok(self.table.insert(token.into(), vector).is_some())
    }

    /// Exact match, then lowercase match, then the zero vector.
    pub fn lookup(&self, token: &str) -> &[f64] {
        if let Some(v) = self.table.get(token) {
            return v;
        }
        let lower = token.to_lowercase();
        self.table.get(&lower).unwrap_or(&self.zero)
    }

    /// Entries sorted by token, for stable serialization.
    pub fn sorted_entries(&self) -> Vec<(&str, &[f64])> {
        let mut v: Vec<_> = self
            .table
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_slice()))
            .collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }
}

/// Parses whitespace-separated text vectors: an optional `count dim` header,
/// then one `token v1 .. vd` row per line.
pub fn parse_embeddings(text: &str, expected_dim: usize) -> Result<EmbeddingLexicon> {
    let mut lex = EmbeddingLexicon::new(expected_dim);
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if i == 0 && fields.len() == 2 {
            if let (Ok(_count), Ok(dim)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                if dim != expected_dim {
                    return Err(CorefError::Parse {
                        line: line_no,
                        message: format!("header declares dim {dim}, expected {expected_dim}"),
                    });
                }
                continue;
            }
        }
        if fields.len() != expected_dim + 1 {
            return Err(CorefError::Parse {
                line: line_no,
                message: format!(
                    "expected a token and {expected_dim} values, found {} values",
                    fields.len() - 1
                ),
            });
        }
        let values = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|e| CorefError::Parse {
                    line: line_no,
                    message: format!("bad value {f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if lex.insert(fields[0], values)? {
            warn!("duplicate embedding for {:?} at line {line_no}; keeping the last", fields[0]);
        }
    }
    Ok(lex)
}

pub fn load_embeddings(path: impl AsRef<Path>, expected_dim: usize) -> Result<EmbeddingLexicon> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CorefError::io(path, e))?;
    parse_embeddings(&text, expected_dim)
}

pub fn write_embeddings(path: impl AsRef<Path>, lex: &EmbeddingLexicon) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CorefError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| CorefError::io(path, e);
    writeln!(w, "{} {}", lex.len(), lex.dim()).map_err(io)?;
    for (tok, vec) in lex.sorted_entries() {
        write!(w, "{tok}").map_err(io)?;
        for v in vec {
            write!(w, " {v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}
