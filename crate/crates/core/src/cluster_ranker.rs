//! Cluster-ranking policy with easy-first inference, candidate pruning, a
//! B³-greedy reference policy, and learning-to-search training.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::{cluster_pair_backward, encode, encode_backward, encode_cluster_pair, encode_plain, DropoutPlan};
use crate::error::{CorefError, Result};
use crate::features::pair_index;
use crate::mention_ranker::{score_document, DocumentScores, LossTerm, PreparedDoc};
use crate::metrics::{b_cubed, Counts, Partition, Scores};
use crate::nn::{ModelParams, OptimizerConfig, Probe, RmsProp, MENTION_HEAD};
use crate::util::{derive_seed, labels_to_partition, Fingerprint};

/// Kept antecedents per mention: `a` survives iff `s(a, m) - s(NA, m) > threshold`.
pub fn prune_candidates(scores: &DocumentScores, threshold: f64) -> Vec<Vec<usize>> {
    (0..scores.num_mentions)
        .map(|m| (0..m).filter(|&a| scores.link_score(a, m) > threshold).collect())
        .collect()
}

/// Mentions sorted by their best kept link score, descending. Mentions without
/// kept candidates go last; ties keep document order.
pub fn easy_first_order(scores: &DocumentScores, candidates: &[Vec<usize>]) -> Vec<usize> {
    let key = |m: usize| {
        candidates[m]
            .iter()
            .map(|&a| scores.link_score(a, m))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut keyed: Vec<(usize, Option<f64>)> = (0..scores.num_mentions)
        .map(|m| (m, (!candidates[m].is_empty()).then(|| key(m))))
        .collect();
    keyed.sort_by(|(ma, ka), (mb, kb)| match (ka, kb) {
        (Some(a), Some(b)) => b.total_cmp(a).then(ma.cmp(mb)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => ma.cmp(mb),
    });
    keyed.into_iter().map(|(m, _)| m).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PruningStats {
    pub candidates: usize,
    pub kept: usize,
}

impl PruningStats {
    pub fn of(scores: &DocumentScores, threshold: f64) -> Self {
        let kept = prune_candidates(scores, threshold).iter().map(Vec::len).sum();
        PruningStats {
            candidates: scores.pair.len(),
            kept,
        }
    }

    pub fn add(&mut self, other: &PruningStats) {
        self.candidates += other.candidates;
        self.kept += other.kept;
    }

    pub fn removed_fraction(&self) -> f64 {
        if self.candidates == 0 {
            0.0
        } else {
            1.0 - self.kept as f64 / self.candidates as f64
        }
    }
}

/// Largest threshold under which every gold cluster stays connected through
/// kept links, so the best partition reachable after pruning loses no B³.
pub fn select_pruning_threshold<'a>(docs: impl IntoIterator<Item = (&'a DocumentScores, &'a Partition)>) -> f64 {
    let mut bound = f64::INFINITY;
    for (scores, gold) in docs {
        for cluster in gold.iter().filter(|c| c.len() > 1) {
            // Kruskal on descending link scores; the last merge is the bottleneck
            let mut edges: Vec<(f64, usize, usize)> = Vec::new();
            for (j, &m) in cluster.iter().enumerate() {
                for &a in &cluster[..j] {
                    let (a, m) = (a.min(m), a.max(m));
                    edges.push((scores.link_score(a, m), a, m));
                }
            }
            edges.sort_by(|x, y| y.0.total_cmp(&x.0));
            let mut parent: HashMap<usize, usize> = cluster.iter().map(|&m| (m, m)).collect();
            fn find(p: &mut HashMap<usize, usize>, mut x: usize) -> usize {
                while p[&x] != x {
                    x = p[&x];
                }
                x
            }
            let mut components = cluster.len();
            for (s, a, m) in edges {
                let (ra, rm) = (find(&mut parent, a), find(&mut parent, m));
                if ra != rm {
                    parent.insert(ra, rm);
                    components -= 1;
                    if components == 1 {
                        bound = bound.min(s);
                        break;
                    }
                }
            }
        }
    }
    if bound.is_finite() {
        bound.next_down()
    } else {
        bound
    }
}

/// A merge into the cluster labelled by its smallest mention id, or a pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Merge(usize),
    Pass,
}

impl Action {
    fn code(self) -> u64 {
        match self {
            Action::Pass => 0,
            Action::Merge(c) => c as u64 + 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusteringState {
    labels: Vec<usize>,
    pub cursor: usize,
    pub order: Arc<Vec<usize>>,
    pub candidates: Arc<Vec<Vec<usize>>>,
}

impl ClusteringState {
    /// All mentions as singletons, cursor at the first mention of `order`.
    pub fn new(order: Arc<Vec<usize>>, candidates: Arc<Vec<Vec<usize>>>) -> Self {
        ClusteringState {
            labels: (0..order.len()).collect(),
            cursor: 0,
            order,
            candidates,
        }
    }

    pub fn num_mentions(&self) -> usize {
        self.labels.len()
    }

    pub fn is_final(&self) -> bool {
        self.cursor >= self.labels.len()
    }

    pub fn current(&self) -> Option<usize> {
        self.order.get(self.cursor).copied()
    }

    /// Cluster label (smallest member id) of every mention.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn members(&self, label: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&m| self.labels[m] == label).collect()
    }

    pub fn partition(&self) -> Partition {
        labels_to_partition(&self.labels)
    }

    fn apply_unchecked(&mut self, u: Action) {
        if let Action::Merge(target) = u {
            let own = self.labels[self.order[self.cursor]];
            let (keep, drop) = (own.min(target), own.max(target));
            for l in self.labels.iter_mut().filter(|l| **l == drop) {
                *l = keep;
            }
        }
        self.cursor += 1;
    }

    fn key(&self) -> u64 {
        let mut fp = Fingerprint::default();
        fp.write(self.cursor as u64);
        for &l in &self.labels {
            fp.write(l as u64);
        }
        fp.finish()
    }
}

/// One merge per distinct cluster holding a kept candidate of the current
/// mention (other than its own cluster), in order of the first such candidate,
/// followed by PASS.
pub fn available_actions(state: &ClusteringState) -> Vec<Action> {
    let Some(m) = state.current() else {
        return Vec::new();
    };
    let own = state.labels[m];
    let mut out = Vec::new();
    for &a in &state.candidates[m] {
        let l = state.labels[a];
        if l != own && !out.contains(&Action::Merge(l)) {
            out.push(Action::Merge(l));
        }
    }
    out.push(Action::Pass);
    out
}

pub fn apply_action(state: &ClusteringState, u: Action) -> Result<ClusteringState> {
    if state.is_final() {
        return Err(CorefError::IllegalAction("no mention left to process".into()));
    }
    if !available_actions(state).contains(&u) {
        return Err(CorefError::IllegalAction(format!("{u:?} is not available at cursor {}", state.cursor)));
    }
    let mut next = state.clone();
    next.apply_unchecked(u);
    Ok(next)
}

/// Gold cluster of every mention, for B³ bookkeeping during rollouts.
struct GoldIndex {
    cluster: Vec<Option<usize>>,
    sizes: Vec<f64>,
    mentions: f64,
}

impl GoldIndex {
    fn new(n: usize, gold: &Partition) -> Self {
        let mut cluster = vec![None; n];
        for (g, c) in gold.iter().enumerate() {
            for &m in c {
                if m < n {
                    cluster[m] = Some(g);
                }
            }
        }
        GoldIndex {
            cluster,
            sizes: gold.iter().map(|c| c.len() as f64).collect(),
            mentions: gold.iter().map(Vec::len).sum::<usize>() as f64,
        }
    }

    fn overlaps(&self, members: &[usize]) -> BTreeMap<usize, f64> {
        let mut out = BTreeMap::new();
        for &m in members {
            if let Some(g) = self.cluster[m] {
                *out.entry(g).or_insert(0.0) += 1.0;
            }
        }
        out
    }

    /// Precision and recall numerators contributed by one system cluster.
    fn terms(&self, size: f64, ov: &BTreeMap<usize, f64>) -> (f64, f64) {
        let sq: f64 = ov.values().map(|k| k * k).sum();
        let r: f64 = ov.iter().map(|(&g, k)| k * k / self.sizes[g]).sum();
        (sq / size, r)
    }

    fn f1(&self, n: usize, p_num: f64, r_num: f64) -> f64 {
        let p = if n == 0 { 0.0 } else { p_num / n as f64 };
        let r = if self.mentions == 0.0 { 0.0 } else { r_num / self.mentions };
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// B³ F1 after each action, from the overlap counts of the two clusters a
/// merge touches.
fn b3_after_actions(state: &ClusteringState, actions: &[Action], gi: &GoldIndex) -> Vec<f64> {
    let (mut p_num, mut r_num) = (0.0, 0.0);
    for c in state.partition() {
        let (p, r) = gi.terms(c.len() as f64, &gi.overlaps(&c));
        p_num += p;
        r_num += r;
    }
    let n = state.num_mentions();
    let own = state.members(state.labels[state.current().expect("mention to process")]);
    let a_ov = gi.overlaps(&own);
    let a_len = own.len() as f64;
    let (a_p, _) = gi.terms(a_len, &a_ov);
    actions
        .iter()
        .map(|&u| match u {
            Action::Pass => gi.f1(n, p_num, r_num),
            Action::Merge(t) => {
                let other = state.members(t);
                let b_ov = gi.overlaps(&other);
                let b_len = other.len() as f64;
                let (b_p, _) = gi.terms(b_len, &b_ov);
                let mut c_ov = a_ov.clone();
                let mut cross = 0.0;
                for (&g, &k) in &b_ov {
                    let e = c_ov.entry(g).or_insert(0.0);
                    cross += 2.0 * *e * k / gi.sizes[g];
                    *e += k;
                }
                let (c_p, _) = gi.terms(a_len + b_len, &c_ov);
                gi.f1(n, p_num - a_p - b_p + c_p, r_num + cross)
            }
        })
        .collect()
}

fn reference_action_indexed<R: Rng>(state: &ClusteringState, gi: &GoldIndex, rng: &mut R) -> Action {
    let actions = available_actions(state);
    let values = b3_after_actions(state, &actions, gi);
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<Action> = actions
        .iter()
        .zip(&values)
        .filter(|(_, &v)| best - v <= 1e-12)
        .map(|(&u, _)| u)
        .collect();
    if tied.len() == 1 {
        tied[0]
    } else {
        tied[rng.gen_range(0..tied.len())]
    }
}

/// The action whose resulting partition (unprocessed mentions as they stand)
/// has the highest B³ F1. When `k > 1` actions tie within 1e-12, one is drawn
/// with `rng.gen_range(0..k)` over the tied actions in action order; no draw
/// happens otherwise.
pub fn reference_policy_action<R: Rng>(state: &ClusteringState, gold: &Partition, rng: &mut R) -> Action {
    reference_action_indexed(state, &GoldIndex::new(state.num_mentions(), gold), rng)
}

/// Seed of the reference-policy rollout that follows `u` from `state`. It
/// depends only on the document key, the partition, the cursor, and `u`, so a
/// cached cost always equals a recomputed one.
pub fn rollout_seed(seed: u64, doc_key: u64, state: &ClusteringState, u: Action) -> u64 {
    derive_seed(seed, &[doc_key, state.key(), u.code()])
}

/// Negated B³ F1 of the end state reached by taking `u` and then following
/// the reference policy, which draws its tie breaks from one generator seeded
/// with `rollout_seed`.
pub fn rollout_cost(state: &ClusteringState, u: Action, gold: &Partition, rollout_seed: u64) -> Result<f64> {
    let mut s = apply_action(state, u)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rollout_seed);
    let gi = GoldIndex::new(s.num_mentions(), gold);
    while !s.is_final() {
        let a = reference_action_indexed(&s, &gi, &mut rng);
        s.apply_unchecked(a);
    }
    Ok(-b_cubed(gold, &s.partition()).f1)
}

/// Rollout costs keyed by the full partition, cursor, and action.
#[derive(Debug, Default)]
pub struct RolloutCache {
    map: HashMap<(Vec<usize>, usize, Action), f64>,
    pub hits: usize,
    pub misses: usize,
}

impl RolloutCache {
    pub fn cost(&mut self, state: &ClusteringState, u: Action, gold: &Partition, seed: u64, doc_key: u64) -> Result<f64> {
        let key = (state.labels.clone(), state.cursor, u);
        if let Some(&c) = self.map.get(&key) {
            self.hits += 1;
            return Ok(c);
        }
        self.misses += 1;
        let c = rollout_cost(state, u, gold, rollout_seed(seed, doc_key, state, u))?;
        self.map.insert(key, c);
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Expected cost `Σ π(u) l(u)` under the softmax of `logits`, with its
/// gradient `π(u) (l(u) - R)` with respect to each logit.
pub fn risk_loss(logits: &[f64], costs: &[f64]) -> LossTerm {
    assert_eq!(logits.len(), costs.len());
    let p = softmax(logits);
    let value: f64 = p.iter().zip(costs).map(|(p, l)| p * l).sum();
    let grad = p.iter().zip(costs).map(|(p, l)| p * (l - value)).collect();
    LossTerm {
        value,
        grad,
        pattern: 0,
        margin: f64::INFINITY,
    }
}

/// Document view for the cluster ranker: features, the mention ranker's
/// scores, and the pruned candidates and processing order derived from them.
#[derive(Clone, Debug)]
pub struct ClusterDoc<'a> {
    pub doc: &'a PreparedDoc,
    pub ranker_scores: DocumentScores,
    pub candidates: Arc<Vec<Vec<usize>>>,
    pub order: Arc<Vec<usize>>,
    pub key: u64,
}

impl<'a> ClusterDoc<'a> {
    pub fn new(doc: &'a PreparedDoc, ranker: &ModelParams, threshold: f64, easy_first: bool) -> Self {
        ClusterDoc::from_scores(doc, score_document(ranker, doc), threshold, easy_first)
    }

    pub fn from_scores(doc: &'a PreparedDoc, ranker_scores: DocumentScores, threshold: f64, easy_first: bool) -> Self {
        let candidates = prune_candidates(&ranker_scores, threshold);
        let order = if easy_first {
            easy_first_order(&ranker_scores, &candidates)
        } else {
            (0..doc.num_mentions()).collect()
        };
        let mut fp = Fingerprint::default();
        fp.write_str(&doc.doc_id);
        ClusterDoc {
            doc,
            ranker_scores,
            candidates: Arc::new(candidates),
            order: Arc::new(order),
            key: fp.finish(),
        }
    }

    pub fn start(&self) -> ClusteringState {
        ClusteringState::new(self.order.clone(), self.candidates.clone())
    }

    pub fn pruning_stats(&self) -> PruningStats {
        PruningStats {
            candidates: self.ranker_scores.pair.len(),
            kept: self.candidates.iter().map(Vec::len).sum(),
        }
    }
}

/// Mention-pair rows pooled for `Merge(target)`: every (x in c_m, y in target)
/// in ascending order of x then y.
fn merge_rows(state: &ClusteringState, target: usize) -> Vec<usize> {
    let m = state.current().expect("mention to process");
    let own = state.members(state.labels[m]);
    let other = state.members(target);
    let mut rows = Vec::with_capacity(own.len() * other.len());
    for &x in &own {
        for &y in &other {
            rows.push(pair_index(x.min(y), x.max(y)));
        }
    }
    rows
}

fn gather(src: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    src.select(Axis(0), rows)
}

/// Greedy-inference scorer that memoizes mention-pair representations for one
/// document and one parameter set.
pub struct PolicyScorer<'p> {
    params: &'p ModelParams,
    reps: Vec<Option<Vec<f64>>>,
    na: Vec<f64>,
}

impl<'p> PolicyScorer<'p> {
    pub fn new(params: &'p ModelParams, doc: &PreparedDoc) -> Self {
        let na_reps = encode_plain(&params.anaphoricity, doc.features.anaphoricity.view());
        let w = params.na_head.weight.row(0);
        let b = params.na_head.bias[0];
        PolicyScorer {
            params,
            reps: vec![None; doc.features.pairs.nrows()],
            na: na_reps.dot(&w).iter().map(|v| v + b).collect(),
        }
    }

    fn ensure(&mut self, doc: &PreparedDoc, rows: &[usize]) {
        let mut missing: Vec<usize> = rows.iter().copied().filter(|&r| self.reps[r].is_none()).collect();
        missing.sort_unstable();
        missing.dedup();
        if missing.is_empty() {
            return;
        }
        let out = encode_plain(&self.params.pair, gather(&doc.features.pairs, &missing).view());
        for (i, r) in missing.into_iter().enumerate() {
            self.reps[r] = Some(out.row(i).to_vec());
        }
    }

    /// Logits of `actions` at `state`: `s_c` for merges, `s_NA(m)` for PASS.
    pub fn logits(&mut self, doc: &PreparedDoc, state: &ClusteringState, actions: &[Action]) -> Vec<f64> {
        let m = state.current().expect("mention to process");
        let row_sets: Vec<Option<Vec<usize>>> = actions
            .iter()
            .map(|u| match u {
                Action::Merge(t) => Some(merge_rows(state, *t)),
                Action::Pass => None,
            })
            .collect();
        let all: Vec<usize> = row_sets.iter().flatten().flatten().copied().collect();
        self.ensure(doc, &all);
        let d = self.params.shape().output;
        let w = self.params.cluster_head.weight.row(0);
        let b = self.params.cluster_head.bias[0];
        row_sets
            .iter()
            .map(|rows| match rows {
                None => self.na[m],
                Some(rows) => {
                    let mut mat = Array2::zeros((rows.len(), d));
                    for (i, &r) in rows.iter().enumerate() {
                        mat.row_mut(i).assign(&ndarray::ArrayView1::from(self.reps[r].as_deref().expect("encoded")));
                    }
                    let rc = encode_cluster_pair(mat.view()).expect("non-empty cluster pair");
                    rc.values.iter().zip(w.iter()).map(|(x, w)| x * w).sum::<f64>() + b
                }
            })
            .collect()
    }
}

/// Available actions at `state` and the policy's probability for each.
pub fn policy_distribution(params: &ModelParams, doc: &ClusterDoc, state: &ClusteringState) -> (Vec<Action>, Vec<f64>) {
    let actions = available_actions(state);
    let logits = PolicyScorer::new(params, doc.doc).logits(doc.doc, state, &actions);
    (actions, softmax(&logits))
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Runs the policy greedily (most probable action, first on ties) from the
/// start state and returns the final partition.
pub fn predict_clusters(params: &ModelParams, doc: &ClusterDoc) -> Partition {
    let mut scorer = PolicyScorer::new(params, doc.doc);
    let mut state = doc.start();
    while !state.is_final() {
        let actions = available_actions(&state);
        let u = if actions.len() == 1 {
            actions[0]
        } else {
            actions[argmax_first(&scorer.logits(doc.doc, &state, &actions))]
        };
        state.apply_unchecked(u);
    }
    state.partition()
}

pub fn evaluate(params: &ModelParams, docs: &[ClusterDoc]) -> Result<Scores> {
    let counts: Vec<Result<Counts>> = docs
        .par_iter()
        .map(|d| Ok(Counts::of(d.doc.require_gold()?, &predict_clusters(params, d))))
        .collect();
    let mut total = Counts::default();
    for c in counts {
        total.add(&c?);
    }
    Ok(total.scores())
}

/// Starting point for the cluster ranker: the mention ranker's parameters with
/// the cluster head set to `[W_m / 2, W_m / 2]` and `b_m`, so that a pair of
/// singletons scores exactly as the mention pair does.
pub fn init_from_ranker(ranker: &ModelParams) -> ModelParams {
    let mut p = ranker.clone();
    let d = ranker.shape().output;
    for j in 0..d {
        let half = ranker.mention_head.weight[[0, j]] / 2.0;
        p.cluster_head.weight[[0, j]] = half;
        p.cluster_head.weight[[0, d + j]] = half;
    }
    p.cluster_head.bias[0] = ranker.mention_head.bias[0];
    p.quantize();
    p
}

/// A visited state with the cost of every available action.
#[derive(Clone, Debug, PartialEq)]
pub struct CostedState {
    pub state: ClusteringState,
    pub actions: Vec<Action>,
    pub costs: Vec<f64>,
}

/// Risk of one costed state under `params`, its parameter gradient, and the
/// pooling and ReLU decisions behind it.
pub fn state_risk<R: Rng>(
    params: &ModelParams,
    doc: &PreparedDoc,
    cs: &CostedState,
    regret: bool,
    dropout: Option<(f64, &mut R)>,
) -> (f64, ModelParams, Probe) {
    let state = &cs.state;
    let m = state.current().expect("mention to process");
    let mut row_sets = Vec::new();
    for u in &cs.actions {
        if let Action::Merge(t) = u {
            row_sets.push(merge_rows(state, *t));
        }
    }
    let all: Vec<usize> = row_sets.iter().flatten().copied().collect();
    let x = gather(&doc.features.pairs, &all);
    let x_na = doc.features.anaphoricity.slice(ndarray::s![m..m + 1, ..]).to_owned();
    let (pair_cache, na_cache) = match dropout {
        Some((rate, rng)) => {
            let plan = DropoutPlan {
                input_rate: rate,
                input_mask: None,
                hidden_rate: 0.0,
            };
            let pc = (!all.is_empty()).then(|| encode(&params.pair, x.view(), Some((&plan, &mut *rng))));
            (pc, encode(&params.anaphoricity, x_na.view(), Some((&plan, rng))))
        }
        None => (
            (!all.is_empty()).then(|| encode::<R>(&params.pair, x.view(), None)),
            encode::<R>(&params.anaphoricity, x_na.view(), None),
        ),
    };
    let mut fp = Fingerprint::default();
    let mut margin = f64::INFINITY;
    let wc = params.cluster_head.weight.row(0);
    let mut pools = Vec::new();
    let mut offset = 0;
    for rows in &row_sets {
        let reps = pair_cache.as_ref().expect("merge rows").output().slice(ndarray::s![offset..offset + rows.len(), ..]).to_owned();
        margin = margin.min(pool_gap(reps.view()));
        let rc = encode_cluster_pair(reps.view()).expect("non-empty");
        for &s in &rc.max_source {
            fp.write(s as u64);
        }
        pools.push((offset, rows.len(), rc));
        offset += rows.len();
    }
    let na_rep = na_cache.output().row(0).to_owned();
    let s_na = na_rep.dot(&params.na_head.weight.row(0)) + params.na_head.bias[0];
    let mut logits = Vec::with_capacity(cs.actions.len());
    let mut merges = pools.iter();
    for u in &cs.actions {
        logits.push(match u {
            Action::Merge(_) => {
                let (_, _, rc) = merges.next().expect("pool per merge");
                rc.values.iter().zip(wc.iter()).map(|(a, b)| a * b).sum::<f64>() + params.cluster_head.bias[0]
            }
            Action::Pass => s_na,
        });
    }
    let costs: Vec<f64> = if regret {
        let min = cs.costs.iter().copied().fold(f64::INFINITY, f64::min);
        cs.costs.iter().map(|c| c - min).collect()
    } else {
        cs.costs.clone()
    };
    let term = risk_loss(&logits, &costs);
    let mut grads = params.zeros_like();
    let d = params.shape().output;
    let mut d_reps = Array2::zeros((all.len(), d));
    let mut merges = pools.iter();
    for (u, &g) in cs.actions.iter().zip(&term.grad) {
        match u {
            Action::Merge(_) => {
                let (off, k, rc) = merges.next().expect("pool per merge");
                let d_rc: Vec<f64> = wc.iter().map(|w| w * g).collect();
                for (j, v) in rc.values.iter().enumerate() {
                    grads.cluster_head.weight[[0, j]] += g * v;
                }
                grads.cluster_head.bias[0] += g;
                let d_rows = cluster_pair_backward(rc, *k, &d_rc);
                d_reps.slice_mut(ndarray::s![*off..off + k, ..]).assign(&d_rows);
            }
            Action::Pass => {
                grads.na_head.bias[0] += g;
                grads.na_head.weight.row_mut(0).scaled_add(g, &na_rep);
                let d_na = params.na_head.weight.clone() * g;
                encode_backward(&params.anaphoricity, &na_cache, d_na, &mut grads.anaphoricity);
            }
        }
    }
    if let Some(pc) = &pair_cache {
        encode_backward(&params.pair, pc, d_reps, &mut grads.pair);
        pc.relu_pattern(&mut fp);
        margin = margin.min(pc.kink_margin());
    }
    na_cache.relu_pattern(&mut fp);
    margin = margin.min(na_cache.kink_margin());
    (
        term.value,
        grads,
        Probe {
            loss: term.value,
            pattern: fp.finish(),
            margin,
        },
    )
}

/// Smallest gap between the largest and second-largest entry of any column.
fn pool_gap(reps: ArrayView2<f64>) -> f64 {
    if reps.nrows() < 2 {
        return f64::INFINITY;
    }
    reps.columns()
        .into_iter()
        .map(|c| {
            let mut v: Vec<f64> = c.to_vec();
            v.sort_by(|a, b| b.total_cmp(a));
            v[0] - v[1]
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct L2sConfig {
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub input_dropout: f64,
    /// Costed states per gradient step within an epoch.
    pub minibatch_states: usize,
    /// `false` trains on reference-policy trajectories only.
    pub learning_to_search: bool,
    /// Subtract each state's minimum cost before computing the risk.
    pub regret_normalization: bool,
    pub seed: u64,
}

impl Default for L2sConfig {
    fn default() -> Self {
        L2sConfig {
            epochs: 20,
            optimizer: OptimizerConfig::default(),
            input_dropout: 0.5,
            minibatch_states: 32,
            learning_to_search: true,
            regret_normalization: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L2sEpochLog {
    pub epoch: usize,
    pub stage: String,
    pub states: usize,
    pub train_risk: f64,
    pub rollout_cache_hits: usize,
    pub rollout_cache_misses: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_b3_f1: Option<f64>,
}

fn is_cluster_layer(name: &str) -> bool {
    name != MENTION_HEAD
}

const TRAJECTORY_TAG: u64 = 0x7472_616a;

/// States visited in one episode on `doc` with the cost of every action.
/// With `learning_to_search` the current policy picks the actions; otherwise
/// the reference policy does.
pub fn collect_costed_states(
    params: &ModelParams,
    doc: &ClusterDoc,
    cache: &mut RolloutCache,
    learning_to_search: bool,
    seed: u64,
    epoch: usize,
) -> Result<Vec<CostedState>> {
    let gold = doc.doc.require_gold()?;
    let mut scorer = PolicyScorer::new(params, doc.doc);
    let mut ref_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[doc.key, epoch as u64, TRAJECTORY_TAG]));
    let mut state = doc.start();
    let mut out = Vec::with_capacity(state.num_mentions());
    while !state.is_final() {
        let actions = available_actions(&state);
        let costs = actions
            .iter()
            .map(|&u| cache.cost(&state, u, gold, seed, doc.key))
            .collect::<Result<Vec<_>>>()?;
        let u = if learning_to_search {
            if actions.len() == 1 {
                actions[0]
            } else {
                actions[argmax_first(&scorer.logits(doc.doc, &state, &actions))]
            }
        } else {
            reference_policy_action(&state, gold, &mut ref_rng)
        };
        out.push(CostedState {
            state: state.clone(),
            actions,
            costs,
        });
        state.apply_unchecked(u);
    }
    Ok(out)
}

/// Trains the cluster ranker: each epoch gathers costed states from every
/// training document, then minimises their summed risk with RMSProp over
/// shuffled minibatches.
pub fn l2s_train(
    train: &[ClusterDoc],
    dev: Option<&[ClusterDoc]>,
    mut params: ModelParams,
    cfg: &L2sConfig,
    log: &mut dyn FnMut(&L2sEpochLog),
) -> Result<(ModelParams, RmsProp)> {
    for d in train {
        d.doc.require_gold()?;
    }
    if cfg.minibatch_states == 0 {
        return Err(CorefError::validation("minibatch_states", "must be at least 1"));
    }
    let mut opt = RmsProp::new(cfg.optimizer, &params);
    let mut caches: Vec<RolloutCache> = train.iter().map(|_| RolloutCache::default()).collect();
    for epoch in 0..cfg.epochs {
        let snapshot = &params;
        let per_doc: Vec<Result<Vec<CostedState>>> = caches
            .par_iter_mut()
            .zip(train.par_iter())
            .map(|(cache, doc)| collect_costed_states(snapshot, doc, cache, cfg.learning_to_search, cfg.seed, epoch))
            .collect();
        let mut gamma: Vec<(usize, CostedState)> = Vec::new();
        for (i, states) in per_doc.into_iter().enumerate() {
            gamma.extend(states?.into_iter().map(|s| (i, s)));
        }
        let mut order: Vec<usize> = (0..gamma.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64, 1])));
        let mut risk = 0.0;
        for batch in order.chunks(cfg.minibatch_states) {
            let parts: Vec<(f64, ModelParams)> = batch
                .par_iter()
                .map(|&g| {
                    let (doc, cs) = &gamma[g];
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64, 2, g as u64]));
                    let (v, grads, _) = state_risk(&params, train[*doc].doc, cs, cfg.regret_normalization, Some((cfg.input_dropout, &mut rng)));
                    (v, grads)
                })
                .collect();
            let mut total = params.zeros_like();
            for (v, g) in parts {
                risk += v;
                total.add_assign(&g);
            }
            opt.step(&mut params, &total, is_cluster_layer)?;
        }
        let dev_b3_f1 = match dev {
            Some(d) if !d.is_empty() => Some(evaluate(&params, d)?.b3.f1),
            _ => None,
        };
        log(&L2sEpochLog {
            epoch,
            stage: if cfg.learning_to_search { "l2s" } else { "fixed_trajectory" }.to_string(),
            states: gamma.len(),
            train_risk: risk,
            rollout_cache_hits: caches.iter().map(|c| c.hits).sum(),
            rollout_cache_misses: caches.iter().map(|c| c.misses).sum(),
            dev_b3_f1,
        });
    }
    Ok((params, opt))
}
