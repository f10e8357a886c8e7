//! Mention-ranking model: antecedent scoring, the pretraining and ranking
//! objectives, greedy antecedent linking, and error-penalty search.
//!
//! Candidate vectors for mention `m` use index 0 for NA and index `a + 1` for
//! antecedent `a`.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, EmbeddingLexicon, Mention};
use crate::encoders::{encode, encode_backward, encode_mention_pair, encode_anaphoricity, DropoutPlan, EncoderCache};
use crate::error::{CorefError, Result};
use crate::features::{assemble_input, num_pairs, pair_index, DocumentFeatures, FeatureConfig, Layout};
use crate::metrics::{Counts, Partition, Scores};
use crate::nn::{DenseLayer, ModelParams, OptimizerConfig, Probe, RmsProp, CLUSTER_HEAD};
use crate::util::{derive_seed, mix64, partition_from_links, Fingerprint};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    pub false_new: f64,
    pub false_anaphoric: f64,
    pub wrong_link: f64,
}

impl CostWeights {
    pub fn english() -> Self {
        CostWeights {
            false_new: 0.8,
            false_anaphoric: 0.4,
            wrong_link: 1.0,
        }
    }

    pub fn chinese() -> Self {
        CostWeights {
            false_new: 0.7,
            ..CostWeights::english()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("false_new", self.false_new),
            ("false_anaphoric", self.false_anaphoric),
            ("wrong_link", self.wrong_link),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CorefError::validation(
                    format!("cost_weights.{name}"),
                    "must be a finite non-negative number",
                ));
            }
        }
        Ok(())
    }
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights::english()
    }
}

/// Cost of choosing candidate `cand` when `truth` flags the true antecedents.
pub fn mistake_cost(cand: usize, truth: &[bool], w: &CostWeights) -> f64 {
    if truth[cand] {
        0.0
    } else if cand == 0 {
        w.false_new
    } else if truth[0] {
        w.false_anaphoric
    } else {
        w.wrong_link
    }
}

/// Value, gradient with respect to the candidate scores, and the discrete
/// choices (with their distance to the nearest change) behind the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub grad: Vec<f64>,
    pub pattern: u64,
    pub margin: f64,
}

/// Index of the largest entry among `allowed`, lowest index on ties, plus the
/// gap to the runner-up.
fn argmax_where(scores: &[f64], allowed: impl Fn(usize) -> bool) -> Option<(usize, f64)> {
    let mut best: Option<usize> = None;
    let mut second = f64::NEG_INFINITY;
    for (i, &s) in scores.iter().enumerate().filter(|(i, _)| allowed(*i)) {
        match best {
            Some(b) if s <= scores[b] => second = second.max(s),
            Some(b) => {
                second = second.max(scores[b]);
                best = Some(i);
            }
            None => best = Some(i),
        }
    }
    best.map(|b| (b, scores[b] - second))
}

pub fn ranking_loss(scores: &[f64], truth: &[bool], w: &CostWeights) -> LossTerm {
    let (t_hat, t_gap) = argmax_where(scores, |i| truth[i]).expect("a true antecedent");
    let mut grad = vec![0.0; scores.len()];
    // the true candidates contribute 0 to the max
    let mut best: Option<(usize, f64)> = None;
    let mut second = 0.0f64;
    for a in (0..scores.len()).filter(|&a| !truth[a]) {
        let v = mistake_cost(a, truth, w) * (1.0 + scores[a] - scores[t_hat]);
        match best {
            Some((_, bv)) if v <= bv => second = second.max(v),
            Some((_, bv)) => {
                second = second.max(bv);
                best = Some((a, v));
            }
            None => best = Some((a, v)),
        }
    }
    let mut fp = Fingerprint::default();
    fp.write(t_hat as u64);
    let mut margin = t_gap;
    let value = match best {
        Some((a, v)) if v > 0.0 => {
            let delta = mistake_cost(a, truth, w);
            grad[a] += delta;
            grad[t_hat] -= delta;
            fp.write(a as u64 + 1);
            margin = margin.min(v - second);
            v
        }
        Some((_, v)) => {
            fp.write(0);
            margin = margin.min(-v);
            0.0
        }
        None => 0.0,
    };
    LossTerm {
        value,
        grad,
        pattern: fp.finish(),
        margin,
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-Σ_t log p(t) - Σ_f log(1 - p(f))` with `p = sigmoid(s)`.
pub fn all_pairs_loss(scores: &[f64], truth: &[bool]) -> LossTerm {
    let mut value = 0.0;
    let mut grad = vec![0.0; scores.len()];
    for (i, &s) in scores.iter().enumerate() {
        if truth[i] {
            value += softplus(-s);
            grad[i] = sigmoid(s) - 1.0;
        } else {
            value += softplus(s);
            grad[i] = sigmoid(s);
        }
    }
    LossTerm {
        value,
        grad,
        pattern: 0,
        margin: f64::INFINITY,
    }
}

/// Like [`all_pairs_loss`] restricted to the highest-scoring true and the
/// highest-scoring false candidate.
pub fn top_pairs_loss(scores: &[f64], truth: &[bool]) -> LossTerm {
    let mut grad = vec![0.0; scores.len()];
    let (t, t_gap) = argmax_where(scores, |i| truth[i]).expect("a true antecedent");
    let mut value = softplus(-scores[t]);
    grad[t] = sigmoid(scores[t]) - 1.0;
    let mut fp = Fingerprint::default();
    fp.write(t as u64);
    let mut margin = t_gap;
    if let Some((f, f_gap)) = argmax_where(scores, |i| !truth[i]) {
        value += softplus(scores[f]);
        grad[f] = sigmoid(scores[f]);
        fp.write(f as u64);
        margin = margin.min(f_gap);
    }
    LossTerm {
        value,
        grad,
        pattern: fp.finish(),
        margin,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    AllPairs,
    TopPairs,
    Ranking,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::AllPairs => "all_pairs",
            Objective::TopPairs => "top_pairs",
            Objective::Ranking => "ranking",
        }
    }

    pub fn term(self, scores: &[f64], truth: &[bool], w: &CostWeights) -> LossTerm {
        match self {
            Objective::AllPairs => all_pairs_loss(scores, truth),
            Objective::TopPairs => top_pairs_loss(scores, truth),
            Objective::Ranking => ranking_loss(scores, truth, w),
        }
    }
}

/// A document with its feature matrices and gold antecedent structure.
#[derive(Clone, Debug)]
pub struct PreparedDoc {
    pub doc_id: String,
    pub features: DocumentFeatures,
    pub gold_ids: Vec<Option<u64>>,
    pub gold: Option<Partition>,
    pub pair_dropout_mask: Vec<bool>,
    pub na_dropout_mask: Vec<bool>,
}

impl PreparedDoc {
    pub fn new(doc: &Document, lex: &EmbeddingLexicon, cfg: &FeatureConfig) -> Result<Self> {
        Ok(PreparedDoc {
            doc_id: doc.doc_id.clone(),
            features: DocumentFeatures::build(doc, lex, cfg)?,
            gold_ids: doc.mentions.iter().map(|m| m.gold_cluster_id).collect(),
            gold: doc.gold_clusters.clone(),
            pair_dropout_mask: Layout::pair(cfg).embedding_mask(),
            na_dropout_mask: Layout::anaphoricity(cfg).embedding_mask(),
        })
    }

    /// Prepares every document; with `require_gold`, documents lacking gold
    /// clusters are skipped with a warning.
    pub fn corpus(docs: &[Document], lex: &EmbeddingLexicon, cfg: &FeatureConfig, require_gold: bool) -> Result<Vec<Self>> {
        let prepared: Vec<Result<Option<Self>>> = docs
            .par_iter()
            .map(|d| {
                if require_gold && d.gold_clusters.is_none() {
                    log::warn!("skipping document {} without gold clusters", d.doc_id);
                    return Ok(None);
                }
                PreparedDoc::new(d, lex, cfg).map(Some)
            })
            .collect();
        prepared.into_iter().filter_map(|r| r.transpose()).collect()
    }

    pub fn num_mentions(&self) -> usize {
        self.features.num_mentions
    }

    pub fn require_gold(&self) -> Result<&Partition> {
        self.gold
            .as_ref()
            .ok_or_else(|| CorefError::MissingGold(self.doc_id.clone()))
    }

    /// True-antecedent flags for mention `m`, NA first.
    pub fn truth(&self, m: usize) -> Vec<bool> {
        let mut t = vec![false; m + 1];
        if let Some(g) = self.gold_ids[m] {
            for a in 0..m {
                t[a + 1] = self.gold_ids[a] == Some(g);
            }
        }
        t[0] = !t[1..].iter().any(|&x| x);
        t
    }
}

/// Pair scores (by [`pair_index`]) and anaphoricity scores of one document.
#[derive(Clone, Debug, PartialEq)]
pub struct DocumentScores {
    pub num_mentions: usize,
    pub pair: Vec<f64>,
    pub na: Vec<f64>,
}

impl DocumentScores {
    pub fn pair_score(&self, a: usize, m: usize) -> f64 {
        self.pair[pair_index(a, m)]
    }

    /// `s(a, m) - s(NA, m)`.
    pub fn link_score(&self, a: usize, m: usize) -> f64 {
        self.pair_score(a, m) - self.na[m]
    }

    pub fn candidates(&self, m: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(m + 1);
        v.push(self.na[m]);
        let base = num_pairs(m);
        v.extend_from_slice(&self.pair[base..base + m]);
        v
    }
}

fn head_scores(head: &DenseLayer, r: &Array2<f64>) -> Vec<f64> {
    let b = head.bias[0];
    r.dot(&head.weight.row(0)).iter().map(|v| v + b).collect()
}

fn head_backward(head: &DenseLayer, r: &Array2<f64>, d_s: &[f64], grad: &mut DenseLayer) -> Array2<f64> {
    let d = ndarray::ArrayView1::from(d_s);
    let mut gw = grad.weight.row_mut(0);
    gw += &r.t().dot(&d);
    grad.bias[0] += d.sum();
    let w = head.weight.row(0);
    Array2::from_shape_fn(r.dim(), |(i, j)| d_s[i] * w[j])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DropoutRates {
    /// Applied to the word-embedding inputs.
    pub embedding: f64,
    /// Applied to every hidden-layer output.
    pub hidden: f64,
}

impl Default for DropoutRates {
    fn default() -> Self {
        DropoutRates {
            embedding: 0.5,
            hidden: 0.5,
        }
    }
}

struct Forward {
    pair: Option<EncoderCache>,
    na: EncoderCache,
    scores: DocumentScores,
}

fn forward<R: Rng>(params: &ModelParams, doc: &PreparedDoc, dropout: Option<(DropoutRates, &mut R)>) -> Forward {
    let f = &doc.features;
    let (pair, na) = match dropout {
        Some((rates, rng)) => {
            let pp = DropoutPlan {
                input_rate: rates.embedding,
                input_mask: Some(&doc.pair_dropout_mask),
                hidden_rate: rates.hidden,
            };
            let np = DropoutPlan {
                input_mask: Some(&doc.na_dropout_mask),
                ..pp
            };
            let pair = (f.pairs.nrows() > 0).then(|| encode(&params.pair, f.pairs.view(), Some((&pp, &mut *rng))));
            (pair, encode(&params.anaphoricity, f.anaphoricity.view(), Some((&np, rng))))
        }
        None => {
            let pair = (f.pairs.nrows() > 0).then(|| encode::<R>(&params.pair, f.pairs.view(), None));
            (pair, encode::<R>(&params.anaphoricity, f.anaphoricity.view(), None))
        }
    };
    let scores = DocumentScores {
        num_mentions: f.num_mentions,
        pair: pair.as_ref().map_or(Vec::new(), |c| head_scores(&params.mention_head, c.output())),
        na: head_scores(&params.na_head, na.output()),
    };
    Forward { pair, na, scores }
}

/// Scores every candidate of every mention with a batched forward pass.
pub fn score_document(params: &ModelParams, doc: &PreparedDoc) -> DocumentScores {
    forward::<ChaCha8Rng>(params, doc, None).scores
}

pub fn score_pair(
    params: &ModelParams,
    a: &Mention,
    m: &Mention,
    doc: &Document,
    lex: &EmbeddingLexicon,
    cfg: &FeatureConfig,
) -> Result<f64> {
    let h0 = assemble_input(Some(a), m, doc, lex, cfg)?;
    let r = encode_mention_pair(params, &h0)?;
    Ok(params.mention_head.forward(&r.values)?[0])
}

pub fn score_na(params: &ModelParams, m: &Mention, doc: &Document, lex: &EmbeddingLexicon, cfg: &FeatureConfig) -> Result<f64> {
    let h0 = assemble_input(None, m, doc, lex, cfg)?;
    let r = encode_anaphoricity(params, &h0)?;
    Ok(params.na_head.forward(&r.values)?[0])
}

/// Summed loss of one document, its parameter gradient, and the discrete
/// pattern behind it.
pub struct DocumentLoss {
    pub value: f64,
    pub grads: ModelParams,
    pub probe: Probe,
}

pub fn document_loss<R: Rng>(
    params: &ModelParams,
    doc: &PreparedDoc,
    objective: Objective,
    weights: &CostWeights,
    dropout: Option<(DropoutRates, &mut R)>,
) -> DocumentLoss {
    let fwd = forward(params, doc, dropout);
    let n = doc.num_mentions();
    let mut d_pair = vec![0.0; num_pairs(n)];
    let mut d_na = vec![0.0; n];
    let mut value = 0.0;
    let mut fp = Fingerprint::default();
    let mut margin = f64::INFINITY;
    for m in 0..n {
        let term = objective.term(&fwd.scores.candidates(m), &doc.truth(m), weights);
        value += term.value;
        fp.write(term.pattern);
        margin = margin.min(term.margin);
        d_na[m] = term.grad[0];
        let base = num_pairs(m);
        d_pair[base..base + m].copy_from_slice(&term.grad[1..]);
    }
    let mut grads = params.zeros_like();
    if let Some(cache) = &fwd.pair {
        let d_r = head_backward(&params.mention_head, cache.output(), &d_pair, &mut grads.mention_head);
        encode_backward(&params.pair, cache, d_r, &mut grads.pair);
        cache.relu_pattern(&mut fp);
        margin = margin.min(cache.kink_margin());
    }
    let d_r = head_backward(&params.na_head, fwd.na.output(), &d_na, &mut grads.na_head);
    encode_backward(&params.anaphoricity, &fwd.na, d_r, &mut grads.anaphoricity);
    fwd.na.relu_pattern(&mut fp);
    margin = margin.min(fwd.na.kink_margin());
    DocumentLoss {
        value,
        grads,
        probe: Probe {
            loss: value,
            pattern: fp.finish(),
            margin,
        },
    }
}

/// Links every mention to its highest-scoring candidate (NA wins ties, then
/// the earliest antecedent) and closes the links transitively.
pub fn predict_antecedents(scores: &DocumentScores) -> Partition {
    let links = (0..scores.num_mentions).filter_map(|m| {
        let cands = scores.candidates(m);
        let (best, _) = argmax_where(&cands, |_| true).expect("NA is always a candidate");
        (best > 0).then(|| (best - 1, m))
    });
    partition_from_links(scores.num_mentions, links.collect::<Vec<_>>())
}

pub fn predict_document(params: &ModelParams, doc: &PreparedDoc) -> Partition {
    predict_antecedents(&score_document(params, doc))
}

/// Corpus-level scores of mention-ranking predictions against gold.
pub fn evaluate(params: &ModelParams, docs: &[PreparedDoc]) -> Result<Scores> {
    let counts: Vec<Result<Counts>> = docs
        .par_iter()
        .map(|d| Ok(Counts::of(d.require_gold()?, &predict_document(params, d))))
        .collect();
    let mut total = Counts::default();
    for c in counts {
        total.add(&c?);
    }
    Ok(total.scores())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankerTrainConfig {
    pub all_pairs_epochs: usize,
    pub top_pairs_epochs: usize,
    pub ranking_epochs: usize,
    pub cost_weights: CostWeights,
    pub optimizer: OptimizerConfig,
    pub dropout: DropoutRates,
    /// Documents per gradient step.
    pub batch_documents: usize,
    pub seed: u64,
}

impl Default for RankerTrainConfig {
    fn default() -> Self {
        RankerTrainConfig {
            all_pairs_epochs: 150,
            top_pairs_epochs: 50,
            ranking_epochs: 100,
            cost_weights: CostWeights::english(),
            optimizer: OptimizerConfig::default(),
            dropout: DropoutRates::default(),
            batch_documents: 1,
            seed: 0,
        }
    }
}

impl RankerTrainConfig {
    pub fn stages(&self) -> [(Objective, usize); 3] {
        [
            (Objective::AllPairs, self.all_pairs_epochs),
            (Objective::TopPairs, self.top_pairs_epochs),
            (Objective::Ranking, self.ranking_epochs),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: String,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_conll_f1: Option<f64>,
}

fn is_ranker_layer(name: &str) -> bool {
    name != CLUSTER_HEAD
}

fn sum_grads(params: &ModelParams, parts: Vec<DocumentLoss>) -> (f64, ModelParams) {
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for p in parts {
        loss += p.value;
        total.add_assign(&p.grads);
    }
    (loss, total)
}

/// Runs the all-pairs, top-pairs, and ranking stages in turn, starting from
/// `params`. `log` receives one record per epoch.
pub fn train_mention_ranker(
    train: &[PreparedDoc],
    dev: Option<&[PreparedDoc]>,
    mut params: ModelParams,
    cfg: &RankerTrainConfig,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<(ModelParams, RmsProp)> {
    cfg.cost_weights.validate()?;
    if cfg.batch_documents == 0 {
        return Err(CorefError::validation("batch_documents", "must be at least 1"));
    }
    let train: Vec<&PreparedDoc> = train
        .iter()
        .filter(|d| {
            let ok = d.gold.is_some();
            if !ok {
                log::warn!("excluding document {} without gold clusters", d.doc_id);
            }
            ok
        })
        .collect();
    let mut opt = RmsProp::new(cfg.optimizer, &params);
    let mut epoch = 0;
    for (stage, (objective, epochs)) in cfg.stages().into_iter().enumerate() {
        for _ in 0..epochs {
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[stage as u64, epoch as u64])));
            let mut epoch_loss = 0.0;
            for batch in order.chunks(cfg.batch_documents) {
                let parts: Vec<DocumentLoss> = batch
                    .par_iter()
                    .map(|&i| {
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[stage as u64, epoch as u64, mix64(i as u64)]));
                        document_loss(&params, train[i], objective, &cfg.cost_weights, Some((cfg.dropout, &mut rng)))
                    })
                    .collect();
                let (loss, grads) = sum_grads(&params, parts);
                epoch_loss += loss;
                opt.step(&mut params, &grads, is_ranker_layer)?;
            }
            let dev_conll_f1 = match dev {
                Some(d) if !d.is_empty() => Some(evaluate(&params, d)?.conll_f1),
                _ => None,
            };
            log(&EpochLog {
                epoch,
                stage: objective.name().to_string(),
                train_loss: epoch_loss,
                dev_conll_f1,
            });
            epoch += 1;
        }
    }
    Ok((params, opt))
}

/// Outcome of the error-penalty search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: CostWeights,
    pub best_score: f64,
    pub trials: Vec<(CostWeights, f64)>,
}

/// The `{0.1, 0.2, …, 1.5}` axis.
pub fn default_penalty_axis() -> Vec<f64> {
    (1..=15).map(|k| k as f64 / 10.0).collect()
}

/// Neighbourhood search over `axis × axis` for `(false_new, false_anaphoric)`
/// with `wrong_link` fixed at 1. Each trial evaluates the unexplored point
/// closest (Manhattan, in grid steps) to the best point so far, ties broken
/// lexicographically; the search stops once the four grid neighbours of the
/// best point are explored or `budget` trials have run. The first trial is
/// the grid point nearest `start`.
pub fn tune_penalties(
    axis: &[f64],
    start: (f64, f64),
    budget: usize,
    mut evaluate: impl FnMut(&CostWeights) -> Result<f64>,
) -> Result<TuneResult> {
    if axis.is_empty() || budget == 0 {
        return Err(CorefError::validation("tune", "needs a non-empty grid and a budget of at least one trial"));
    }
    let nearest = |v: f64| {
        (0..axis.len())
            .min_by(|&a, &b| (axis[a] - v).abs().total_cmp(&(axis[b] - v).abs()))
            .expect("non-empty axis")
    };
    let weights = |(i, j): (usize, usize)| CostWeights {
        false_new: axis[i],
        false_anaphoric: axis[j],
        wrong_link: 1.0,
    };
    let k = axis.len();
    let mut explored: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut trials = Vec::new();
    let mut best = (nearest(start.0), nearest(start.1));
    let mut best_score = f64::NEG_INFINITY;
    let mut next = Some(best);
    while let Some(point) = next {
        let w = weights(point);
        let score = evaluate(&w)?;
        log::info!("penalty trial {:?} -> {score:.4}", (w.false_new, w.false_anaphoric));
        trials.push((w, score));
        explored.insert(point);
        if score > best_score {
            best_score = score;
            best = point;
        }
        if trials.len() >= budget {
            break;
        }
        let (bi, bj) = (best.0 as isize, best.1 as isize);
        let neighbours_done = [(-1, 0), (1, 0), (0, -1), (0, 1)]
            .iter()
            .map(|(di, dj)| (bi + di, bj + dj))
            .filter(|&(i, j)| i >= 0 && j >= 0 && (i as usize) < k && (j as usize) < k)
            .all(|(i, j)| explored.contains(&(i as usize, j as usize)));
        if neighbours_done {
            break;
        }
        next = (0..k)
            .flat_map(|i| (0..k).map(move |j| (i, j)))
            .filter(|p| !explored.contains(p))
            .min_by_key(|&(i, j)| ((i as isize - bi).unsigned_abs() + (j as isize - bj).unsigned_abs(), i, j));
    }
    Ok(TuneResult {
        best: weights(best),
        best_score,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w1() -> CostWeights {
        CostWeights {
            false_new: 1.0,
            false_anaphoric: 1.0,
            wrong_link: 1.0,
        }
    }

    #[test]
    fn mistake_costs() {
        let en = CostWeights::english();
        // T = {m1}: candidates [NA, m0, m1]
        let truth = [false, false, true];
        assert_eq!(mistake_cost(0, &truth, &en), 0.8);
        assert_eq!(mistake_cost(2, &truth, &en), 0.0);
        assert_eq!(mistake_cost(1, &truth, &en), 1.0);
        let non_anaphoric = [true, false];
        assert_eq!(mistake_cost(1, &non_anaphoric, &en), 0.4);
        assert_eq!(CostWeights::chinese().false_new, 0.7);
    }

    #[test]
    fn ranking_loss_by_hand() {
        // [NA false, t true, a false]; NA scored very low
        let truth = [false, true, false];
        let r = ranking_loss(&[-10.0, 2.0, 0.5], &truth, &w1());
        assert_eq!(r.value, 0.0);
        assert!(r.grad.iter().all(|&g| g == 0.0));
        let r = ranking_loss(&[-10.0, 2.0, 1.5], &truth, &w1());
        assert!((r.value - 0.5).abs() < 1e-12);
        assert_eq!(r.grad, vec![0.0, -1.0, 1.0]);
        let first = ranking_loss(&[0.3], &[true], &w1());
        assert_eq!(first.value, 0.0);
    }

    #[test]
    fn ranking_loss_ties_pick_lowest_true() {
        let r = ranking_loss(&[1.0, 0.5, 0.5], &[false, true, true], &w1());
        assert!((r.value - 1.5).abs() < 1e-12);
        assert_eq!(r.grad, vec![1.0, -1.0, 0.0]);
    }

    #[test]
    fn pretraining_losses_by_hand() {
        assert!((all_pairs_loss(&[0.0], &[true]).value - 2f64.ln()).abs() < 1e-12);
        assert!(all_pairs_loss(&[40.0], &[true]).value < 1e-12);
        let v = all_pairs_loss(&[1.0, -1.0], &[true, false]).value;
        assert!((v - 0.6265).abs() < 1e-4);
        assert!((top_pairs_loss(&[0.0], &[true]).value - 2f64.ln()).abs() < 1e-12);
        let v = top_pairs_loss(&[0.0, 2.0], &[true, true]).value;
        assert!((v - 0.1269).abs() < 1e-4);
        let s = [0.7, -0.3];
        let t = [false, true];
        assert!((top_pairs_loss(&s, &t).value - all_pairs_loss(&s, &t).value).abs() < 1e-15);
    }

    #[test]
    fn antecedent_prediction_by_hand() {
        // 4 mentions; pair order (0,1) (0,2) (1,2) (0,3) (1,3) (2,3)
        let scores = DocumentScores {
            num_mentions: 4,
            pair: vec![1.0, -1.0, 2.0, 0.5, 0.0, -2.0],
            na: vec![0.0, 0.0, 0.0, 1.0],
        };
        assert_eq!(predict_antecedents(&scores), vec![vec![0, 1, 2], vec![3]]);
        let none = DocumentScores {
            na: vec![9.0; 4],
            ..scores
        };
        assert_eq!(predict_antecedents(&none), vec![vec![0], vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn tune_single_point_grid() {
        let mut calls = 0;
        let r = tune_penalties(&[0.5], (0.8, 0.4), 10, |_| {
            calls += 1;
            Ok(1.0)
        })
        .unwrap();
        assert_eq!(calls, 1);
        assert_eq!(r.best.false_new, 0.5);
    }

    #[test]
    fn tune_stops_after_neighbours_of_best() {
        let axis = default_penalty_axis();
        let r = tune_penalties(&axis, (0.8, 0.4), 1000, |w| {
            Ok(-((w.false_new - 0.8).abs() + (w.false_anaphoric - 0.4).abs()))
        })
        .unwrap();
        assert!((r.best.false_new - 0.8).abs() < 1e-12 && (r.best.false_anaphoric - 0.4).abs() < 1e-12);
        let seen = |a: f64, b: f64| {
            r.trials
                .iter()
                .any(|(w, _)| (w.false_new - a).abs() < 1e-9 && (w.false_anaphoric - b).abs() < 1e-9)
        };
        for (a, b) in [(0.7, 0.4), (0.9, 0.4), (0.8, 0.3), (0.8, 0.5)] {
            assert!(seen(a, b));
        }
        assert_eq!(r.trials.len(), 5);
    }

    #[test]
    fn tune_reaches_corner_optimum() {
        let axis: Vec<f64> = (1..=5).map(|k| k as f64 / 10.0).collect();
        let metric = |w: &CostWeights| w.false_new * 3.0 + w.false_anaphoric * 2.0;
        let r = tune_penalties(&axis, (0.3, 0.3), 1000, |w| Ok(metric(w))).unwrap();
        let exhaustive = axis
            .iter()
            .flat_map(|&a| axis.iter().map(move |&b| (a, b)))
            .max_by(|x, y| (x.0 * 3.0 + x.1 * 2.0).total_cmp(&(y.0 * 3.0 + y.1 * 2.0)))
            .unwrap();
        assert_eq!((r.best.false_new, r.best.false_anaphoric), exhaustive);
    }
}
