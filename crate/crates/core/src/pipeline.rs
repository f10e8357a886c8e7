//! End-to-end commands: training both models, prediction, scoring, penalty
//! tuning, and feature ablation. Every command is a pure function of its
//! configuration and input files.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster_ranker::{self, init_from_ranker, l2s_train, select_pruning_threshold, ClusterDoc, PruningStats};
use crate::config::{PruningThreshold, RunConfig};
use crate::corpus::{load_corpus, load_embeddings, Document, EmbeddingLexicon};
use crate::error::{CorefError, Result};
use crate::features::{FeatureConfig, FeatureGroup, Layout};
use crate::mention_ranker::{self, default_penalty_axis, score_document, train_mention_ranker, PreparedDoc, TuneResult};
use crate::metrics::{Counts, Partition, Scores};
use crate::nn::{load_checkpoint, save_checkpoint, ModelParams};
use crate::synthetic::toy_lexicon;
use crate::util::derive_seed;

const RANKER_KIND: f64 = 1.0;
const CLUSTER_KIND: f64 = 2.0;
const INIT_TAG: u64 = 0x696e_6974;
const CLUSTER_INIT_TAG: u64 = 0x636c_7573;

fn required<'a>(p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| CorefError::Config(format!("paths.{name} is not set")))
}

fn optional_corpus(p: &Option<PathBuf>) -> Result<Vec<Document>> {
    match p {
        Some(path) => load_corpus(path),
        None => Ok(Vec::new()),
    }
}

fn write_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let line = serde_json::to_string(value).expect("log records serialize");
    writeln!(out, "{line}").map_err(|e| CorefError::io("<log>", e))
}

/// Word vectors from `paths.embeddings`, or seeded pseudo-random vectors for
/// every token in `docs`.
pub fn lexicon(cfg: &RunConfig, docs: &[&[Document]]) -> Result<EmbeddingLexicon> {
    match &cfg.paths.embeddings {
        Some(p) => load_embeddings(p, cfg.features.embedding_dim),
        None => {
            let all: Vec<Document> = docs.iter().flat_map(|d| d.iter().cloned()).collect();
            toy_lexicon(&all, cfg.features.embedding_dim, cfg.seed)
        }
    }
}

fn input_dims(features: &FeatureConfig) -> (usize, usize) {
    (Layout::pair(features).dim(), Layout::anaphoricity(features).dim())
}

fn check_inputs(params: &ModelParams, features: &FeatureConfig, what: &str) -> Result<()> {
    let (pair, ana) = input_dims(features);
    let s = params.shape();
    if s.pair_input != pair || s.anaphoricity_input != ana {
        return Err(CorefError::Shape {
            tensor: format!("{what} input"),
            expected: vec![pair, ana],
            found: vec![s.pair_input, s.anaphoricity_input],
        });
    }
    Ok(())
}

fn load_model(path: &Path, kind: f64, features: &FeatureConfig) -> Result<(ModelParams, BTreeMap<String, f64>)> {
    let ck = load_checkpoint(path)?;
    if ck.meta.get("kind") != Some(&kind) {
        let want = if kind == RANKER_KIND { "mention ranker" } else { "cluster ranker" };
        return Err(CorefError::Checkpoint(format!("{} is not a {want} checkpoint", path.display())));
    }
    check_inputs(&ck.params, features, &path.display().to_string())?;
    Ok((ck.params, ck.meta))
}

pub fn load_ranker(path: &Path, features: &FeatureConfig) -> Result<ModelParams> {
    load_model(path, RANKER_KIND, features).map(|(p, _)| p)
}

/// Cluster-ranker parameters with the pruning threshold and ordering they
/// were trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    pub params: ModelParams,
    pub pruning_threshold: f64,
    pub easy_first: bool,
}

pub fn load_cluster_model(path: &Path, features: &FeatureConfig) -> Result<ClusterModel> {
    let (params, meta) = load_model(path, CLUSTER_KIND, features)?;
    Ok(ClusterModel {
        params,
        pruning_threshold: meta.get("pruning_threshold").copied().unwrap_or(f64::NEG_INFINITY),
        easy_first: meta.get("easy_first").is_none_or(|&v| v != 0.0),
    })
}

fn init_params(cfg: &RunConfig, tag: u64) -> ModelParams {
    let (pair, ana) = input_dims(&cfg.features);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[tag]));
    ModelParams::init(&cfg.model_shape(pair, ana), &mut rng)
}

fn prepare_training(cfg: &RunConfig, docs: &[Document], lex: &EmbeddingLexicon, path: &Path) -> Result<Vec<PreparedDoc>> {
    let prep = PreparedDoc::corpus(docs, lex, &cfg.features, true)?;
    if prep.is_empty() {
        return Err(CorefError::MissingGold(format!("any document in {}", path.display())));
    }
    Ok(prep)
}

/// Largest `f32` not above `v`, so the value survives a checkpoint unchanged.
fn f32_floor(v: f64) -> f64 {
    let f = v as f32;
    if (f as f64) <= v {
        f as f64
    } else {
        f.next_down() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankerReport {
    pub checkpoint: PathBuf,
    pub train_documents: usize,
    pub train_conll_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<Scores>,
}

/// Trains the mention ranker in memory. `log` receives one JSON line per epoch.
pub fn fit_ranker(cfg: &RunConfig, train: &[PreparedDoc], dev: Option<&[PreparedDoc]>, log: &mut dyn Write) -> Result<ModelParams> {
    let mut io_err = None;
    let (params, _) = train_mention_ranker(train, dev, init_params(cfg, INIT_TAG), &cfg.ranker_train_config(), &mut |e| {
        if let Err(err) = write_json(log, e) {
            io_err.get_or_insert(err);
        }
    })?;
    match io_err {
        Some(e) => Err(e),
        None => Ok(params),
    }
}

pub fn train_ranker(cfg: &RunConfig, log: &mut dyn Write) -> Result<RankerReport> {
    cfg.validate()?;
    let train_path = required(&cfg.paths.train, "train")?;
    let out = required(&cfg.paths.ranker_checkpoint, "ranker_checkpoint")?;
    let train_docs = load_corpus(train_path)?;
    let dev_docs = optional_corpus(&cfg.paths.dev)?;
    let lex = lexicon(cfg, &[&train_docs, &dev_docs])?;
    let train = prepare_training(cfg, &train_docs, &lex, train_path)?;
    let dev = PreparedDoc::corpus(&dev_docs, &lex, &cfg.features, true)?;
    let dev = (!dev.is_empty()).then_some(dev.as_slice());
    let params = fit_ranker(cfg, &train, dev, log)?;
    let meta = BTreeMap::from([("kind".to_string(), RANKER_KIND)]);
    save_checkpoint(out, &params, None, &meta)?;
    Ok(RankerReport {
        checkpoint: out.to_path_buf(),
        train_documents: train.len(),
        train_conll_f1: mention_ranker::evaluate(&params, &train)?.conll_f1,
        dev: dev.map(|d| mention_ranker::evaluate(&params, d)).transpose()?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub checkpoint: PathBuf,
    pub pruning_threshold: f64,
    pub train_pruning: PruningStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_pruning: Option<PruningStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<Scores>,
}

fn pruning_totals(docs: &[ClusterDoc]) -> PruningStats {
    let mut s = PruningStats::default();
    for d in docs {
        s.add(&d.pruning_stats());
    }
    s
}

/// Resolves `auto` on the dev documents when they have gold clusters, and on
/// the training documents otherwise.
pub fn resolve_threshold(
    setting: PruningThreshold,
    ranker: &ModelParams,
    train: &[PreparedDoc],
    dev: &[PreparedDoc],
) -> Result<f64> {
    match setting {
        PruningThreshold::Value(v) => Ok(v),
        PruningThreshold::Auto => {
            let pool = if dev.is_empty() { train } else { dev };
            let scores: Vec<_> = pool.iter().map(|d| score_document(ranker, d)).collect();
            let golds = pool.iter().map(|d| d.require_gold()).collect::<Result<Vec<&Partition>>>()?;
            Ok(f32_floor(select_pruning_threshold(scores.iter().zip(golds))))
        }
    }
}

pub fn train_cluster(cfg: &RunConfig, log: &mut dyn Write) -> Result<ClusterReport> {
    cfg.validate()?;
    let train_path = required(&cfg.paths.train, "train")?;
    let ranker_path = required(&cfg.paths.ranker_checkpoint, "ranker_checkpoint")?;
    let out = required(&cfg.paths.cluster_checkpoint, "cluster_checkpoint")?;
    let ranker = load_ranker(ranker_path, &cfg.features)?;
    let train_docs = load_corpus(train_path)?;
    let dev_docs = optional_corpus(&cfg.paths.dev)?;
    let lex = lexicon(cfg, &[&train_docs, &dev_docs])?;
    let train = prepare_training(cfg, &train_docs, &lex, train_path)?;
    let dev = PreparedDoc::corpus(&dev_docs, &lex, &cfg.features, true)?;
    let threshold = resolve_threshold(cfg.cluster.pruning_threshold, &ranker, &train, &dev)?;
    let easy_first = cfg.cluster.easy_first;
    let train_c: Vec<ClusterDoc> = train.iter().map(|d| ClusterDoc::new(d, &ranker, threshold, easy_first)).collect();
    let dev_c: Vec<ClusterDoc> = dev.iter().map(|d| ClusterDoc::new(d, &ranker, threshold, easy_first)).collect();
    let init = if cfg.cluster.pretrained_init {
        init_from_ranker(&ranker)
    } else {
        init_params(cfg, CLUSTER_INIT_TAG)
    };
    let dev_opt = (!dev_c.is_empty()).then_some(dev_c.as_slice());
    let mut io_err = None;
    let (params, _) = l2s_train(&train_c, dev_opt, init, &cfg.l2s_config(), &mut |e| {
        if let Err(err) = write_json(log, e) {
            io_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    let meta = BTreeMap::from([
        ("kind".to_string(), CLUSTER_KIND),
        ("pruning_threshold".to_string(), threshold),
        ("easy_first".to_string(), if easy_first { 1.0 } else { 0.0 }),
    ]);
    save_checkpoint(out, &params, None, &meta)?;
    Ok(ClusterReport {
        checkpoint: out.to_path_buf(),
        pruning_threshold: threshold,
        train_pruning: pruning_totals(&train_c),
        dev_pruning: dev_opt.map(pruning_totals),
        dev: dev_opt.map(|d| cluster_ranker::evaluate(&params, d)).transpose()?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictMode {
    Mention,
    Cluster,
}

/// One line of a prediction file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub doc_id: String,
    pub clusters: Partition,
}

pub fn predict_documents(cfg: &RunConfig, docs: &[Document], mode: PredictMode) -> Result<Vec<Prediction>> {
    cfg.validate()?;
    let ranker = load_ranker(required(&cfg.paths.ranker_checkpoint, "ranker_checkpoint")?, &cfg.features)?;
    let cluster = match mode {
        PredictMode::Mention => None,
        PredictMode::Cluster => Some(load_cluster_model(
            required(&cfg.paths.cluster_checkpoint, "cluster_checkpoint")?,
            &cfg.features,
        )?),
    };
    let lex = lexicon(cfg, &[docs])?;
    let prep = PreparedDoc::corpus(docs, &lex, &cfg.features, false)?;
    Ok(prep
        .iter()
        .map(|d| Prediction {
            doc_id: d.doc_id.clone(),
            clusters: match &cluster {
                None => mention_ranker::predict_document(&ranker, d),
                Some(c) => cluster_ranker::predict_clusters(
                    &c.params,
                    &ClusterDoc::new(d, &ranker, c.pruning_threshold, c.easy_first),
                ),
            },
        })
        .collect())
}

pub fn predict(cfg: &RunConfig, corpus: &Path, mode: PredictMode, out: &mut dyn Write) -> Result<usize> {
    let docs = load_corpus(corpus)?;
    let preds = predict_documents(cfg, &docs, mode)?;
    for p in &preds {
        write_json(out, p)?;
    }
    Ok(preds.len())
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path).map_err(|e| CorefError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CorefError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Corpus-level scores of `predictions` against the gold clusters of `gold`.
/// Every gold document needs exactly one prediction and vice versa.
pub fn score_predictions(gold: &[Document], predictions: &[Prediction]) -> Result<Scores> {
    let mut by_id: BTreeMap<&str, &Prediction> = BTreeMap::new();
    for p in predictions {
        if by_id.insert(p.doc_id.as_str(), p).is_some() {
            return Err(CorefError::Mismatch(format!("document {} is predicted twice", p.doc_id)));
        }
    }
    let gold_ids: BTreeSet<&str> = gold.iter().map(|d| d.doc_id.as_str()).collect();
    if let Some(extra) = by_id.keys().find(|k| !gold_ids.contains(*k)) {
        return Err(CorefError::Mismatch(format!("document {extra} is not in the gold corpus")));
    }
    let mut total = Counts::default();
    for d in gold {
        let p = by_id
            .get(d.doc_id.as_str())
            .ok_or_else(|| CorefError::Mismatch(format!("document {} has no prediction", d.doc_id)))?;
        total.add(&Counts::of(d.require_gold()?, &p.clusters));
    }
    Ok(total.scores())
}

pub fn evaluate_files(gold: &Path, predictions: &Path) -> Result<Scores> {
    score_predictions(&load_corpus(gold)?, &read_predictions(predictions)?)
}

fn scaled(epochs: usize, fraction: f64) -> usize {
    if epochs == 0 {
        0
    } else {
        ((epochs as f64 * fraction).ceil() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub result: TuneResult,
    /// `[costs]` table with the best penalties, ready to paste into a config.
    pub config_fragment: String,
}

/// Searches the false-new and false-anaphoric penalties, training a shortened
/// ranker per trial and scoring dev CoNLL F1.
pub fn tune(cfg: &RunConfig, log: &mut dyn Write) -> Result<TuneReport> {
    cfg.validate()?;
    let train_path = required(&cfg.paths.train, "train")?;
    let dev_path = required(&cfg.paths.dev, "dev")?;
    let train_docs = load_corpus(train_path)?;
    let dev_docs = load_corpus(dev_path)?;
    let lex = lexicon(cfg, &[&train_docs, &dev_docs])?;
    let train = prepare_training(cfg, &train_docs, &lex, train_path)?;
    let dev = prepare_training(cfg, &dev_docs, &lex, dev_path)?;
    let mut trial_cfg = cfg.clone();
    let f = cfg.tune.epoch_fraction;
    trial_cfg.schedule.all_pairs_epochs = scaled(cfg.schedule.all_pairs_epochs, f);
    trial_cfg.schedule.top_pairs_epochs = scaled(cfg.schedule.top_pairs_epochs, f);
    trial_cfg.schedule.ranking_epochs = scaled(cfg.schedule.ranking_epochs, f);
    let result = mention_ranker::tune_penalties(
        &default_penalty_axis(),
        (cfg.costs.false_new, cfg.costs.false_anaphoric),
        cfg.tune.budget,
        |w| {
            let mut c = trial_cfg.clone();
            c.costs = *w;
            let params = fit_ranker(&c, &train, None, &mut std::io::sink())?;
            let score = mention_ranker::evaluate(&params, &dev)?.conll_f1;
            write_json(log, &serde_json::json!({"costs": w, "dev_conll_f1": score}))?;
            Ok(score)
        },
    )?;
    #[derive(Serialize)]
    struct Fragment<'a> {
        costs: &'a crate::mention_ranker::CostWeights,
    }
    let config_fragment = toml::to_string(&Fragment { costs: &result.best }).expect("weights serialize");
    Ok(TuneReport {
        result,
        config_fragment,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub removed: Vec<FeatureGroup>,
    pub full: Scores,
    pub ablated: Scores,
    pub delta_conll_f1: f64,
}

/// Trains the ranker with and without `groups` and compares dev scores.
pub fn ablate(cfg: &RunConfig, groups: &[FeatureGroup], log: &mut dyn Write) -> Result<AblationReport> {
    cfg.validate()?;
    if groups.is_empty() {
        return Err(CorefError::validation("group", "name at least one feature group"));
    }
    let train_path = required(&cfg.paths.train, "train")?;
    let dev_path = required(&cfg.paths.dev, "dev")?;
    let train_docs = load_corpus(train_path)?;
    let dev_docs = load_corpus(dev_path)?;
    let lex = lexicon(cfg, &[&train_docs, &dev_docs])?;
    let mut run = |c: &RunConfig| -> Result<Scores> {
        let train = prepare_training(c, &train_docs, &lex, train_path)?;
        let dev = prepare_training(c, &dev_docs, &lex, dev_path)?;
        let params = fit_ranker(c, &train, None, log)?;
        mention_ranker::evaluate(&params, &dev)
    };
    let full = run(cfg)?;
    let mut reduced = cfg.clone();
    for &g in groups {
        reduced.features = reduced.features.without(g);
    }
    let ablated = run(&reduced)?;
    Ok(AblationReport {
        removed: groups.to_vec(),
        delta_conll_f1: ablated.conll_f1 - full.conll_f1,
        full,
        ablated,
    })
}
