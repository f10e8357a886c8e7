//! Generated corpora with deterministic coreference: entities are introduced
//! by full name, later referred to by surname or full name, and pronouns
//! always corefer with the mention right before them.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, EmbeddingLexicon, Mention, MentionType};
use crate::error::Result;
use crate::util::{derive_seed, Fingerprint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub documents: usize,
    /// Approximate number of mentions per document.
    pub mentions_per_document: usize,
    pub entities_per_document: usize,
    pub pronoun_rate: f64,
    /// Chance that a pronoun skips the previous entity and refers to the one
    /// before it, when the two differ in gender.
    pub distant_pronoun_rate: f64,
    /// Chance that a sentence also has an object mention.
    pub object_rate: f64,
    /// Chance that an object is a one-off nominal rather than an entity.
    pub nominal_rate: f64,
    pub genre: String,
    /// Document ids are `{id_prefix}-{index:04}`.
    pub id_prefix: String,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            documents: 20,
            mentions_per_document: 30,
            entities_per_document: 6,
            pronoun_rate: 0.3,
            distant_pronoun_rate: 0.0,
            object_rate: 0.6,
            nominal_rate: 0.35,
            genre: "nw".into(),
            id_prefix: "synth".into(),
            seed: 0,
        }
    }
}

const FIRST_NAMES: [(&str, bool); 12] = [
    ("Anna", false),
    ("Boris", true),
    ("Clara", false),
    ("David", true),
    ("Elena", false),
    ("Felix", true),
    ("Greta", false),
    ("Hugo", true),
    ("Ida", false),
    ("Jonas", true),
    ("Karin", false),
    ("Lukas", true),
];
const ONSETS: [&str; 12] = ["B", "D", "F", "G", "K", "L", "M", "N", "P", "R", "S", "T"];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 8] = ["lden", "rsk", "mber", "ndt", "vak", "lmar", "sko", "rbach"];
const VERBS: [&str; 8] = ["met", "saw", "called", "praised", "thanked", "visited", "joined", "warned"];
const NOUNS: [&str; 16] = [
    "report", "meeting", "budget", "contract", "proposal", "letter", "plan", "deal", "museum", "garden",
    "station", "project", "council", "market", "bridge", "festival",
];

fn surname(i: usize) -> String {
    let o = ONSETS[i % ONSETS.len()];
    let n = NUCLEI[(i / ONSETS.len()) % NUCLEI.len()];
    let c = CODAS[(i / (ONSETS.len() * NUCLEI.len())) % CODAS.len()];
    format!("{o}{n}{c}")
}

struct Entity {
    first: &'static str,
    last: String,
    male: bool,
}

enum Ref {
    Entity(usize),
    Nominal,
}

struct Builder {
    sentences: Vec<Vec<String>>,
    mentions: Vec<Mention>,
}

impl Builder {
    fn push(&mut self, tokens: &[String], head_offset: usize, ty: MentionType, gold: Option<u64>, verb_at: usize) {
        let s = self.sentences.last_mut().expect("open sentence");
        let start = s.len();
        s.extend_from_slice(tokens);
        self.mentions.push(Mention {
            id: self.mentions.len(),
            sentence_index: self.sentences.len() - 1,
            start,
            end: start + tokens.len(),
            head_index: start + head_offset,
            dep_parent_index: Some(verb_at),
            mention_type: ty,
            gold_cluster_id: gold,
        });
    }
}

fn generate_document(cfg: &SyntheticConfig, index: usize) -> Result<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[index as u64]));
    let mut pool: Vec<usize> = (0..ONSETS.len() * NUCLEI.len() * CODAS.len()).collect();
    pool.shuffle(&mut rng);
    let entities: Vec<Entity> = (0..cfg.entities_per_document.max(1))
        .map(|e| {
            let (first, male) = FIRST_NAMES[rng.gen_range(0..FIRST_NAMES.len())];
            Entity {
                first,
                last: surname(pool[e]),
                male,
            }
        })
        .collect();
    let mut introduced = 0usize;
    let mut nouns: Vec<&str> = NOUNS.to_vec();
    nouns.shuffle(&mut rng);
    let mut b = Builder {
        sentences: Vec::new(),
        mentions: Vec::new(),
    };
    let mut last_ref: Option<usize> = None;
    let mut before_last: Option<usize> = None;
    let mut seen = vec![false; entities.len()];
    while b.mentions.len() < cfg.mentions_per_document {
        b.sentences.push(Vec::new());
        // the subject opens the sentence, so the verb sits right after it
        let subject = match last_ref {
            Some(mut e) if rng.gen::<f64>() < cfg.pronoun_rate => {
                if let Some(d) = before_last.filter(|&d| entities[d].male != entities[e].male) {
                    if rng.gen::<f64>() < cfg.distant_pronoun_rate {
                        e = d;
                    }
                }
                let pron = if entities[e].male { "he" } else { "she" };
                b.push(&[pron.to_string()], 0, MentionType::Pronoun, Some(e as u64), 1);
                Ref::Entity(e)
            }
            _ => {
                let e = pick_entity(&mut rng, &mut introduced, entities.len(), cfg.mentions_per_document - b.mentions.len());
                let tokens = mention_tokens(&entities[e], seen[e], &mut rng);
                seen[e] = true;
                let n = tokens.len();
                b.push(&tokens, n - 1, MentionType::Proper, Some(e as u64), n);
                Ref::Entity(e)
            }
        };
        let verb = VERBS[rng.gen_range(0..VERBS.len())];
        let verb_at = b.sentences.last().expect("sentence").len();
        b.sentences.last_mut().expect("sentence").push(verb.to_string());
        let mut last = subject;
        if rng.gen::<f64>() < cfg.object_rate && b.mentions.len() < cfg.mentions_per_document {
            if rng.gen::<f64>() < cfg.nominal_rate && !nouns.is_empty() {
                let noun = nouns.pop().expect("noun");
                b.push(&["the".to_string(), noun.to_string()], 1, MentionType::Nominal, None, verb_at);
                last = Ref::Nominal;
            } else {
                let e = pick_entity(&mut rng, &mut introduced, entities.len(), cfg.mentions_per_document - b.mentions.len());
                let tokens = mention_tokens(&entities[e], seen[e], &mut rng);
                seen[e] = true;
                let n = tokens.len();
                b.push(&tokens, n - 1, MentionType::Proper, Some(e as u64), verb_at);
                last = Ref::Entity(e);
            }
        }
        b.sentences.last_mut().expect("sentence").push(".".to_string());
        let previous = last_ref;
        last_ref = match last {
            Ref::Entity(e) => Some(e),
            Ref::Nominal => None,
        };
        if last_ref != previous {
            before_last = previous;
        }
    }
    // nominal mentions are singletons: give each its own gold cluster
    let base = entities.len() as u64;
    for m in b.mentions.iter_mut() {
        if m.gold_cluster_id.is_none() {
            m.gold_cluster_id = Some(base + m.id as u64);
        }
    }
    let speakers = b.sentences.iter().map(|s| vec!["-".to_string(); s.len()]).collect();
    Document::new(format!("{}-{index:04}", cfg.id_prefix), cfg.genre.clone(), b.sentences, speakers, b.mentions)
}

/// Introduces new entities early enough that all of them appear.
fn pick_entity(rng: &mut ChaCha8Rng, introduced: &mut usize, total: usize, mentions_left: usize) -> usize {
    let remaining = total - *introduced;
    let p_new = if *introduced == 0 {
        1.0
    } else {
        (3.0 * remaining as f64 / mentions_left.max(1) as f64).min(0.9)
    };
    if remaining > 0 && rng.gen::<f64>() < p_new {
        *introduced += 1;
        *introduced - 1
    } else {
        rng.gen_range(0..*introduced)
    }
}

fn mention_tokens(e: &Entity, seen: bool, rng: &mut ChaCha8Rng) -> Vec<String> {
    if seen && rng.gen::<f64>() < 0.7 {
        vec![e.last.clone()]
    } else {
        vec![e.first.to_string(), e.last.clone()]
    }
}

pub fn generate_corpus(cfg: &SyntheticConfig) -> Result<Vec<Document>> {
    (0..cfg.documents).map(|i| generate_document(cfg, i)).collect()
}

/// Fixed pseudo-random vector for `token`, uniform in ±1. Depends only on the
/// token, `dim`, and `seed`.
pub fn pseudo_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut fp = Fingerprint::default();
    fp.write_str(token);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[fp.finish()]));
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Pseudo-random vectors for every token of `docs`, lower-cased.
pub fn toy_lexicon(docs: &[Document], dim: usize, seed: u64) -> Result<EmbeddingLexicon> {
    let mut words: Vec<String> = docs.iter().flat_map(|d| d.all_tokens().map(|t| t.to_lowercase())).collect();
    words.sort();
    words.dedup();
    let mut lex = EmbeddingLexicon::new(dim);
    for w in words {
        let v = pseudo_vector(&w, dim, seed);
        lex.insert(w, v)?;
    }
    Ok(lex)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documents_are_valid_and_deterministic() {
        let cfg = SyntheticConfig {
            documents: 3,
            ..Default::default()
        };
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_json_line(), y.to_json_line());
            assert!(x.num_mentions() >= cfg.mentions_per_document);
            assert!(x.gold_clusters.as_ref().unwrap().iter().any(|c| c.len() > 1));
        }
    }

    #[test]
    fn pronouns_corefer_with_previous_mention() {
        let docs = generate_corpus(&SyntheticConfig::default()).unwrap();
        let mut pronouns = 0;
        for d in &docs {
            for m in d.mentions.iter().filter(|m| m.mention_type == MentionType::Pronoun) {
                pronouns += 1;
                assert_eq!(m.gold_cluster_id, d.mentions[m.id - 1].gold_cluster_id);
            }
        }
        assert!(pronouns > 20);
    }
}
